import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsvqc import mps as M
from mpsvqc.errors import ConfigError, DimensionError, NumericError, OracleScaleError


def brute_psi(mps):
    """Psi[s_0..s_{L-1}, l] by multiplying site matrices for every basis configuration."""
    out = np.zeros((2,) * mps.length + (mps.d_fused,))
    for cfg in itertools.product((0, 1), repeat=mps.length):
        for l in range(mps.d_fused):
            acc = np.ones((1, 1))
            for n, s in enumerate(cfg):
                a = mps.sites[n]
                mat = a[:, s, :, l] if a.ndim == 4 else a[:, s, :]
                acc = acc @ mat
            out[cfg + (l,)] = acc[0, 0]
    return out


def brute_contract(mps, phi_sites):
    psi = brute_psi(mps)
    out = np.zeros(mps.d_fused)
    for cfg in itertools.product((0, 1), repeat=mps.length):
        w = math.prod(phi_sites[n][s] for n, s in enumerate(cfg))
        out += w * psi[cfg]
    return out


def loop_activated(mps, phi_sites):
    """Scalar-loop residual recurrence: site 0 reads a constant 1 and starts from a zero carry."""
    chi = mps.sites[0].shape[2]
    v = [0.0] * chi
    for n, a in enumerate(mps.sites):
        inp = [1.0] if n == 0 else list(v)
        new = []
        for beta in range(chi):
            delta = mps.biases[n][beta]
            for alpha in range(len(inp)):
                for s in range(2):
                    delta += a[alpha, s, beta] * inp[alpha] * phi_sites[n][s]
            new.append(v[beta] + math.tanh(delta))
        v = new
    return np.array([sum(v[k] * mps.head[k, l] for k in range(chi)) for l in range(mps.d_fused)])


def direction(x):
    return x / np.linalg.norm(x)


def random_bonds(rng, length, chi):
    return [1] + [min(int(rng.integers(1, chi + 1)), M._exact_bond_bound(n, length))
                  for n in range(1, length)] + [1]


# ----------------------------------------------------------------------------- encoding


def test_angle_encode_examples():
    ps = M.angle_encode([0.0, 0.25, 0.5])
    np.testing.assert_allclose(ps.sites[0], [1, 0], atol=1e-12)
    np.testing.assert_allclose(ps.sites[1], [math.sqrt(2) / 2] * 2, atol=1e-12)
    np.testing.assert_allclose(ps.sites[2], [0, 1], atol=1e-12)
    assert ps.out_of_range == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_angle_encode_unit_norm(values):
    ps = M.angle_encode(values)
    assert np.all(np.abs(np.linalg.norm(ps.sites, axis=1) - 1) <= 1e-12)
    assert ps.out_of_range == sum(abs(v) >= 1 for v in values)
    assert len(ps) == len(values)


def test_angle_encode_rejects_nan():
    with pytest.raises(NumericError):
        M.angle_encode([0.1, float("nan")])


def test_concat_modalities():
    np.testing.assert_array_equal(M.concat_modalities([1], [2], [3]), [1, 2, 3])
    assert np.all(M.concat_modalities(np.zeros(4), np.zeros(4), np.zeros(4)) == np.zeros(12))
    rng = np.random.default_rng(0)
    r, d, i = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(M.concat_modalities(r, d, i)[5:10], d)
    with pytest.raises(DimensionError):
        M.concat_modalities([1, 2], [1], [1, 2])


# ----------------------------------------------------------------------------- init


def test_init_shapes_chi_one():
    m = M.init_mps(4, 1, 1, center=2)
    assert [a.shape for a in m.sites] == [(1, 2, 1), (1, 2, 1), (1, 2, 1, 1), (1, 2, 1)]


def test_init_deterministic_and_bond_cap():
    a = M.init_mps(6, 8, 3, seed=5)
    b = M.init_mps(6, 8, 3, seed=5)
    for x, y in zip(a.sites, b.sites):
        np.testing.assert_array_equal(x, y)
    assert a.bond_dims() == [1, 2, 4, 8, 4, 2, 1]
    # lossless SVD of a random full tensor shows rank 2 across the first bond
    rng = np.random.default_rng(0)
    full = rng.standard_normal((2, 2 ** 5))
    assert np.linalg.matrix_rank(full) == 2


def test_init_is_canonical():
    m = M.init_mps(10, 4, 3, center=3, seed=1)
    assert max(M.canonical_residuals(m)) <= 1e-10


def test_init_errors():
    with pytest.raises(ConfigError):
        M.init_mps(4, 2, 2, center=4)
    with pytest.raises(ConfigError):
        M.init_mps(4, 0, 2)
    with pytest.raises(ConfigError):
        M.init_mps(4, 2, 2, mode="other")


# ----------------------------------------------------------------------------- contraction


def test_contract_full_identity_chain():
    sites = [np.ones((1, 2, 1)) for _ in range(3)]
    sites[1] = np.ones((1, 2, 1, 1))
    m = M.MpsProjector(sites, 1, 1)
    phi = M.angle_encode([0.0, 0.0, 0.0])
    assert M.contract_full(m, phi).values[0] == pytest.approx(1.0)


def test_contract_full_single_site():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((1, 2, 1, 3))
    m = M.MpsProjector([a], 0, 3)
    phi = M.angle_encode([0.3])
    want = np.einsum("s,sl->l", phi.sites[0], a[0, :, 0, :])
    np.testing.assert_allclose(M.contract_full(m, phi).values, want, atol=1e-14)


def test_contract_full_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(10):
        length = int(rng.integers(1, 7))
        m = M.random_mps(random_bonds(rng, length, 3), 2, int(rng.integers(length)),
                         int(rng.integers(1 << 30)))
        phi = M.angle_encode(rng.uniform(-1, 1, length))
        np.testing.assert_allclose(M.contract_full(m, phi).values, brute_contract(m, phi.sites),
                                   atol=1e-10)


def test_sequential_matches_full_direction():
    rng = np.random.default_rng(3)
    for _ in range(100):
        length = int(rng.integers(1, 9))
        m = M.random_mps(random_bonds(rng, length, 4), int(rng.integers(1, 5)),
                         int(rng.integers(length)), int(rng.integers(1 << 30)))
        phi = M.angle_encode(rng.uniform(-1, 1, length))
        seq = M.contract_sequential(m, phi)
        full = brute_contract(m, phi.sites)
        assert np.linalg.norm(direction(seq.values) - direction(full)) <= 1e-8
        # the stripped scale is recoverable from norm_log
        scale = math.exp(seq.norm_log)
        assert np.linalg.norm(seq.values * scale - full) <= 1e-6 * np.linalg.norm(full) + 1e-9


def test_contract_full_size_limit():
    m = M.init_mps(13, 1, 1)
    with pytest.raises(OracleScaleError):
        M.contract_full(m, M.angle_encode(np.zeros(13)))


def test_sequential_norms_identity_chain():
    m = M.init_mps(6, 1, 1, noise=0.0)
    res = M.contract_sequential(m, M.angle_encode([0.1] * 6))
    assert all(abs(n - 1) <= 2e-6 for n in res.norms)


def _scaled_chain(length, factor):
    sites = [np.zeros((1, 2, 1)) for _ in range(length)]
    for a in sites:
        a[0, 0, 0] = factor
    sites[-1] = sites[-1][..., None]
    return M.MpsProjector(sites, length - 1, 1)


def test_normalization_half_contraction_stays_in_band():
    m = _scaled_chain(200, 0.5)
    phi = np.tile([1.0, 0.0], (200, 1))
    norms = np.array(M.contract_sequential(m, phi).norms)
    assert np.all(norms <= 1) and np.all(norms >= 1 - 2e-6)


def test_unnormalized_underflow_and_overflow():
    phi = np.tile([1.0, 0.0], (200, 1))
    small = _scaled_chain(200, 0.01)
    raw = M.contract_sequential(small, phi, normalize=False).norms
    assert raw[-1] == 0.0 and next(i for i, r in enumerate(raw) if r == 0.0) < 170
    normed = M.contract_sequential(small, phi)
    assert np.all(np.isfinite(normed.norms)) and min(normed.norms) > 1 - 2e-4
    big = _scaled_chain(200, 40.0)
    assert not np.isfinite(M.contract_sequential(big, phi, normalize=False).norms[-1])
    norms = np.array(M.contract_sequential(big, phi).norms)
    assert np.all(norms <= 1) and np.all(norms >= 1 - 2e-6)


# ----------------------------------------------------------------------------- canonical form


def _full_outputs(m, probes):
    return np.array([M.contract_full(m, p).values for p in probes])


def test_canonicalize_preserves_map_and_isometries():
    rng = np.random.default_rng(4)
    m = M.random_mps(random_bonds(rng, 7, 4), 3, 2, 7)
    probes = [M.angle_encode(rng.uniform(-1, 1, 7)) for _ in range(50)]
    ref = _full_outputs(m, probes)
    for target in range(7):
        c = M.canonicalize(m, target)
        assert c.center == target and c.sites[target].ndim == 4
        assert max(M.canonical_residuals(c)) <= 1e-10
        np.testing.assert_allclose(_full_outputs(c, probes), ref, atol=1e-8)


def test_canonicalize_idempotent_and_path_independent():
    rng = np.random.default_rng(5)
    m = M.canonicalize(M.random_mps(random_bonds(rng, 8, 4), 2, 3, 1))
    again = M.canonicalize(m)
    for a, b in zip(m.sites, again.sites):
        np.testing.assert_allclose(a, b, atol=1e-12)
    two_step = M.canonicalize(M.canonicalize(m, 0), 7)
    one_step = M.canonicalize(m, 7)
    probes = [M.angle_encode(rng.uniform(-1, 1, 8)) for _ in range(20)]
    np.testing.assert_allclose(_full_outputs(two_step, probes), _full_outputs(one_step, probes),
                               atol=1e-8)


def test_canonicalize_to_last_site():
    rng = np.random.default_rng(6)
    m = M.canonicalize(M.random_mps(random_bonds(rng, 9, 4), 2, 0, 2), 8)
    left, right = M.canonical_residuals(m)
    assert left <= 1e-10 and right == 0.0


def test_canonicalize_rejects_activated():
    with pytest.raises(ConfigError):
        M.canonicalize(M.init_mps(4, 2, 2, mode="activated"))


# ----------------------------------------------------------------------------- truncation


def test_sweep_noop():
    rng = np.random.default_rng(7)
    m = M.canonicalize(M.random_mps(random_bonds(rng, 8, 4), 3, 4, 3))
    t, rep = M.sweep_truncate(m, 16)
    assert rep.total == 0.0
    probes = [M.angle_encode(rng.uniform(-1, 1, 8)) for _ in range(20)]
    np.testing.assert_allclose(_full_outputs(t, probes), _full_outputs(m, probes), atol=1e-8)


def test_sweep_rank_one_product():
    rng = np.random.default_rng(8)
    sites = [rng.standard_normal((1, 2, 1)) for _ in range(6)]
    sites[2] = rng.standard_normal((1, 2, 1, 3))
    m = M.canonicalize(M.MpsProjector(sites, 2, 3))
    t, rep = M.sweep_truncate(m, 1)
    assert rep.total <= 1e-20
    np.testing.assert_allclose(brute_psi(t), brute_psi(m), atol=1e-12)


def test_sweep_extent_eight_to_four():
    rng = np.random.default_rng(9)
    for seed in range(5):
        m = M.canonicalize(M.random_mps([1, 2, 4, 8, 8, 8, 4, 2, 1], 2, 4, seed))
        t, rep = M.sweep_truncate(m, 4)
        assert max(t.bond_dims()) <= 4
        assert max(M.canonical_residuals(t)) <= 1e-10
        dist2 = np.sum((brute_psi(m) - brute_psi(t)) ** 2)
        assert abs(dist2 - rep.total) <= 0.1 * rep.total
        assert t.center == m.center


def test_sweep_single_bond_identity_exact():
    # only one bond exceeds chi_set, so the sweep performs one real truncation
    for seed in range(10):
        m = M.canonicalize(M.random_mps([1, 2, 4, 4, 8, 4, 4, 2, 1], 3, int(seed % 8), seed))
        t, rep = M.sweep_truncate(m, 4)
        dist2 = np.sum((brute_psi(m) - brute_psi(t)) ** 2)
        assert abs(dist2 - rep.total) <= 1e-10 * max(1.0, np.sum(brute_psi(m) ** 2))


def test_sweep_errors():
    m = M.init_mps(4, 2, 2)
    with pytest.raises(ConfigError):
        M.sweep_truncate(m, 0)


# ----------------------------------------------------------------------------- activated mode


def test_activated_zero_network():
    m = M.init_mps(5, 3, 2, mode="activated", noise=0.0)
    for a in m.sites:
        a[...] = 0.0
    for b in m.biases:
        b[...] = 0.0
    out = M.activated_forward(m, M.angle_encode(np.full(5, 0.2)))
    np.testing.assert_array_equal(out.values, np.zeros(2))


def test_activated_bias_only_site():
    m = M.init_mps(1, 2, 2, mode="activated", noise=0.0)
    m.sites[0][...] = 0.0
    m.biases[0][...] = [10.0, -10.0]
    m.head = np.eye(2)
    out = M.activated_forward(m, M.angle_encode([0.4]))
    np.testing.assert_allclose(out.values, [math.tanh(10), -math.tanh(10)], atol=1e-15)


def test_activated_matches_loop_oracle():
    rng = np.random.default_rng(10)
    m = M.init_mps(6, 3, 4, mode="activated", seed=3, noise=0.5)
    for _ in range(5):
        phi = M.angle_encode(rng.uniform(-1, 1, 6))
        np.testing.assert_allclose(M.activated_forward(m, phi).values,
                                   loop_activated(m, phi.sites), atol=1e-12)


def test_activated_carry_bounded():
    m = M.init_mps(12, 4, 2, mode="activated", seed=2, noise=3.0)
    phis = M.angle_encode_batch(np.random.default_rng(0).uniform(-1, 1, (20, 12)))
    _, _, cache = M._forward_activated(m, phis)
    v = np.zeros((20, 4))
    for n, (_, act) in enumerate(cache):
        assert np.all(np.abs(act) <= 1)
        v = v + act
        assert np.max(np.abs(v)) <= n + 1


def test_activated_requires_uniform_width():
    m = M.init_mps(4, 3, 2, mode="activated")
    m.sites[2] = np.zeros((3, 2, 2))
    with pytest.raises(ConfigError):
        m.validate()


# ----------------------------------------------------------------------------- gradients


def _fd_check(m, head, phis, labels, rng, n_params=100, step=1e-5):
    _, g = M.grad_mps(m, phis, labels, head)
    params = m.parameters() + [head]
    grads = g.sites + ((g.biases + [g.head]) if m.mode == "activated" else []) + [g.head_w]
    for _ in range(n_params):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + step
        lp, _ = M.grad_mps(m, phis, labels, head)
        params[k][idx] = old - step
        lm, _ = M.grad_mps(m, phis, labels, head)
        params[k][idx] = old
        fd = (lp - lm) / (2 * step)
        err = abs(fd - grads[k][idx])
        assert err <= 1e-7 or err <= 1e-4 * max(abs(fd), abs(grads[k][idx])), (k, idx, fd)


@pytest.mark.parametrize("mode", ["standard", "activated"])
def test_grad_matches_finite_differences(mode):
    rng = np.random.default_rng(11)
    m = M.init_mps(8, 4, 3, mode=mode, seed=4, noise=0.3)
    head = rng.standard_normal((2, 3))
    phis = M.angle_encode_batch(rng.uniform(-1, 1, (5, 8)))
    _fd_check(m, head, phis, rng.integers(0, 2, 5), rng)


@pytest.mark.parametrize("mode", ["standard", "activated"])
def test_grad_zero_head(mode):
    m = M.init_mps(6, 3, 2, mode=mode, seed=1, noise=0.3)
    phis = M.angle_encode_batch(np.random.default_rng(0).uniform(-1, 1, (4, 6)))
    loss, g = M.grad_mps(m, phis, [0, 1, 1, 0], np.zeros((2, 2)))
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert all(np.all(x == 0) for x in g.sites)


def test_grad_mean_invariance():
    m = M.init_mps(6, 3, 2, seed=1, noise=0.3)
    head = np.random.default_rng(0).standard_normal((2, 2))
    phis = M.angle_encode_batch(np.random.default_rng(1).uniform(-1, 1, (1, 6)))
    _, g1 = M.grad_mps(m, phis, [1], head)
    _, g2 = M.grad_mps(m, np.concatenate([phis, phis]), [1, 1], head)
    np.testing.assert_allclose(g1.flat(), g2.flat(), atol=1e-12)


def test_grad_deterministic():
    m = M.init_mps(6, 3, 2, seed=1, noise=0.3, mode="activated")
    head = np.ones((2, 2))
    phis = M.angle_encode_batch(np.random.default_rng(1).uniform(-1, 1, (7, 6)))
    a = M.grad_mps(m, phis, [0, 1] * 3 + [0], head)[1].flat()
    b = M.grad_mps(m, phis, [0, 1] * 3 + [0], head)[1].flat()
    np.testing.assert_array_equal(a, b)


# ----------------------------------------------------------------------------- parameter counts


def test_param_count_examples():
    assert M.param_count(M.MpsProjector([np.zeros((1, 2, 1, 4))], 0, 4)) == 8
    sites = [np.zeros((1, 2, 4)), np.zeros((4, 2, 4, 1)), np.zeros((4, 2, 1))]
    assert M.param_count(M.MpsProjector(sites, 1, 1)) == 48
    assert M.uniform_param_count(3, 4, 1) == 48


def test_param_count_matches_built_chain():
    for length, chi, d in [(24, 4, 4), (10, 8, 2), (7, 3, 5)]:
        m = M.init_mps(length, chi, d)
        assert M.param_count(m) == M.standard_param_count(length, chi, d)


def test_param_count_table_scale():
    # direct summation at L=384; the capped and uniform counts differ only near the ends
    capped = M.standard_param_count(384, 16, 4)
    uniform = M.uniform_param_count(384, 16, 4)
    assert uniform == 2 * 2 * 16 + 382 * 2 * 16 * 16 + 3 * 2 * 16 * 16
    assert capped < uniform < 250_000
    assert M.standard_param_count(384, 4, 4) < 13_000
