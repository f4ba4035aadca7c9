import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsvqc.errors import DimensionError, LabelCollisionError, NumericError
from mpsvqc.tensor import Tensor, contract, frobenius_normalize, qr, svd_truncate


def loop_contract(a, b, a_axes, b_axes):
    """Nested-loop oracle: sum over paired axes, output = free a axes then free b axes."""
    free_a = [k for k in range(a.ndim) if k not in a_axes]
    free_b = [k for k in range(b.ndim) if k not in b_axes]
    out_shape = [a.shape[k] for k in free_a] + [b.shape[k] for k in free_b]
    out = np.zeros(out_shape, dtype=np.result_type(a, b))
    summed = [range(a.shape[k]) for k in a_axes]
    for idx in itertools.product(*[range(n) for n in out_shape]):
        ia, ib = idx[: len(free_a)], idx[len(free_a):]
        total = 0.0
        for s in itertools.product(*summed):
            full_a = [0] * a.ndim
            full_b = [0] * b.ndim
            for k, v in zip(free_a, ia):
                full_a[k] = v
            for k, v in zip(free_b, ib):
                full_b[k] = v
            for ka, kb, v in zip(a_axes, b_axes, s):
                full_a[ka] = v
                full_b[kb] = v
            total += a[tuple(full_a)] * b[tuple(full_b)]
        out[idx] = total
    return out


def test_identity_contraction():
    a = Tensor(np.eye(2), ("i", "j"))
    b = Tensor(np.array([1.0, 2.0]), ("j",))
    out = contract(a, b, [("j", "j")])
    assert out.labels == ("i",)
    np.testing.assert_array_equal(out.data, [1.0, 2.0])


def test_outer_product():
    out = contract(Tensor(np.array([1.0, 2.0]), ("i",)), Tensor(np.array([3.0, 4.0]), ("j",)), [])
    np.testing.assert_array_equal(out.data, [[3, 4], [6, 8]])
    assert out.labels == ("i", "j")


def test_contract_matches_loop_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((4, 5))
    out = contract(Tensor(a, ("x", "y", "k")), Tensor(b, ("k", "z")), [("k", "k")])
    np.testing.assert_allclose(out.data, loop_contract(a, b, [2], [0]), atol=1e-12, rtol=0)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_contract_random_shapes_against_oracle(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    shared = data.draw(st.lists(st.integers(1, 3), min_size=0, max_size=2))
    fa = data.draw(st.lists(st.integers(1, 3), min_size=0, max_size=2))
    fb = data.draw(st.lists(st.integers(1, 3), min_size=0, max_size=2))
    a = rng.standard_normal(tuple(fa) + tuple(shared))
    # b stores the shared axes in reverse order to exercise label matching
    b = rng.standard_normal(tuple(reversed(shared)) + tuple(fb))
    la = tuple(f"a{k}" for k in range(len(fa))) + tuple(f"s{k}" for k in range(len(shared)))
    lb = tuple(f"t{k}" for k in reversed(range(len(shared)))) + tuple(f"b{k}" for k in range(len(fb)))
    pairs = [(f"s{k}", f"t{k}") for k in range(len(shared))]
    out = contract(Tensor(a, la), Tensor(b, lb), pairs)
    a_axes = [len(fa) + k for k in range(len(shared))]
    b_axes = [len(shared) - 1 - k for k in range(len(shared))]
    np.testing.assert_allclose(out.data, loop_contract(a, b, a_axes, b_axes), atol=1e-12, rtol=0)


def test_contract_is_bilinear():
    rng = np.random.default_rng(1)
    a = Tensor(rng.standard_normal((3, 4)), ("i", "k"))
    b = Tensor(rng.standard_normal((4, 2)), ("k", "j"))
    scaled = contract(Tensor(2.5 * a.data, a.labels), b, [("k", "k")])
    np.testing.assert_allclose(scaled.data, 2.5 * contract(a, b, [("k", "k")]).data, atol=1e-12)


def test_contract_errors():
    a = Tensor(np.ones((2, 3)), ("i", "k"))
    with pytest.raises(DimensionError):
        contract(a, Tensor(np.ones((4,)), ("k",)), [("k", "k")])
    with pytest.raises(LabelCollisionError):
        contract(a, Tensor(np.ones((3, 2)), ("k", "i")), [("k", "k")])
    with pytest.raises(LabelCollisionError):
        Tensor(np.ones((2, 2)), ("i", "i"))


def test_svd_diag_example():
    res = svd_truncate(Tensor(np.diag([3.0, 1.0]), ("r", "c")), ("r",), ("c",), chi_set=1)
    np.testing.assert_allclose(res.s, [3.0])
    assert res.discarded_weight == pytest.approx(1.0)
    recon = (res.u.data * res.s) @ res.v.data
    assert np.linalg.norm(recon - np.diag([3.0, 1.0])) == pytest.approx(1.0)


def test_svd_lossless_and_isometric():
    rng = np.random.default_rng(2)
    for shape in [(5, 3), (3, 5), (4, 4)]:
        m = rng.standard_normal(shape)
        res = svd_truncate(Tensor(m, ("r", "c")), ("r",), ("c",))
        assert res.discarded_weight == 0.0
        recon = (res.u.data * res.s) @ res.v.data
        assert np.linalg.norm(recon - m) <= 1e-10
        u, v = res.u.data, res.v.data
        assert np.linalg.norm(u.T @ u - np.eye(u.shape[1])) <= 1e-10
        assert np.linalg.norm(v @ v.T - np.eye(v.shape[0])) <= 1e-10
        assert np.all(np.diff(res.s) <= 0) and np.all(res.s >= 0)


def test_svd_eckart_young_random_search():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((8, 8))
    res = svd_truncate(Tensor(m, ("r", "c")), ("r",), ("c",), chi_set=3)
    recon = (res.u.data * res.s) @ res.v.data
    err2 = np.linalg.norm(m - recon) ** 2
    assert abs(err2 - res.discarded_weight) <= 1e-10
    best = min(np.linalg.norm(m - rng.standard_normal((8, 3)) @ rng.standard_normal((3, 8))) ** 2
               for _ in range(1000))
    assert best > err2


def test_svd_multi_label_grouping():
    rng = np.random.default_rng(4)
    t = Tensor(rng.standard_normal((2, 3, 4)), ("a", "b", "c"))
    res = svd_truncate(t, ("c", "a"), ("b",), bond="k")
    assert res.u.labels == ("c", "a", "k") and res.v.labels == ("k", "b")
    back = contract(res.u, Tensor(res.s[:, None] * res.v.data, res.v.labels), [("k", "k")])
    np.testing.assert_allclose(back.transpose(("a", "b", "c")).data, t.data, atol=1e-12)


def test_svd_sign_convention_and_determinism():
    rng = np.random.default_rng(5)
    m = rng.standard_normal((6, 4))
    r1 = svd_truncate(Tensor(m, ("r", "c")), ("r",), ("c",))
    r2 = svd_truncate(Tensor(m.copy(), ("r", "c")), ("r",), ("c",))
    np.testing.assert_array_equal(r1.u.data, r2.u.data)
    u = r1.u.data
    pivots = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    assert np.all(pivots > 0)


def test_svd_rejects_non_finite():
    with pytest.raises(NumericError):
        svd_truncate(Tensor(np.array([[np.nan, 1.0]]), ("r", "c")), ("r",), ("c",))


def test_qr_positive_diagonal():
    rng = np.random.default_rng(6)
    m = rng.standard_normal((6, 3))
    q, r = qr(Tensor(m, ("r", "c")), ("r",), ("c",))
    np.testing.assert_allclose(q.data @ r.data, m, atol=1e-12)
    assert np.all(np.diag(r.data) >= 0)
    assert np.linalg.norm(q.data.T @ q.data - np.eye(3)) <= 1e-12


def test_frobenius_normalize_examples():
    z, n = frobenius_normalize(np.zeros(3))
    assert n == 0.0 and np.all(z == 0)
    out, n = frobenius_normalize(Tensor(np.array([3.0, 4.0]), ("i",)))
    assert n == 5.0
    np.testing.assert_allclose(out.data, [0.6, 0.8], atol=4e-7)
    rng = np.random.default_rng(7)
    for _ in range(100):
        t = rng.standard_normal((3, 4)) * rng.uniform(1, 1e3)
        out, n = frobenius_normalize(t)
        if n >= 1:
            assert 1 - 2e-6 < np.linalg.norm(out) < 1
