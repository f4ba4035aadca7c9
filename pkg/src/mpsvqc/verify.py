"""Registry of property checks run by ``mpsvqc verify``.

Each check draws its own random instances from a seeded generator, compares
against an independent oracle and returns a ``CheckResult``. Suites: ``mps``
(contraction oracle, canonical form, truncation identity, stability,
gradients), ``vqc`` (dense-unitary oracle, norm, Heisenberg gate, shift
rule) and ``trotter`` (error slopes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.linalg import expm

from . import mps as M
from . import vqc as V

SUITES = ("mps", "vqc", "trotter")
TROTTER_TAUS = tuple(float(t) for t in np.logspace(-3, -1, 9))

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.diag([1.0, -1.0]).astype(complex)
_I = np.eye(2, dtype=complex)


@dataclass
class CheckResult:
    name: str
    suite: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    table: list = field(default_factory=list)

    def row(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{self.suite:8s} {self.name:32s} {flag}  value={self.value:.3e}  tol={self.tolerance:.1e}  {self.detail}"


_REGISTRY: list = []


def check(suite: str, name: str):
    def deco(fn):
        _REGISTRY.append((suite, name, fn))
        return fn
    return deco


def registered(suite: str | None = None):
    return [(s, n) for s, n, _ in _REGISTRY if suite in (None, "all", s)]


def _result(suite, name, value, tol, detail="", table=None, lower_is_better=True):
    ok = bool(np.isfinite(value) and (value <= tol if lower_is_better else value >= tol))
    return CheckResult(name, suite, ok, float(value), tol, detail, table or [])


# ----------------------------------------------------------------------------- mps oracles


def _direction_gap(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(np.linalg.norm(a / na - b / nb))


def _random_bonds(rng, length, chi_max):
    inner = [int(rng.integers(1, chi_max + 1)) for _ in range(length - 1)]
    return [1] + [min(c, M._exact_bond_bound(n + 1, length)) for n, c in enumerate(inner)] + [1]


def difference_norm_sq(a: M.MpsProjector, b: M.MpsProjector) -> float:
    """||Psi_a - Psi_b||^2 via transfer matrices of the block-sum chain (no materialization)."""
    if a.center != b.center or a.length != b.length:
        raise ValueError("chains must share length and center")
    length = a.length
    sites = []
    for n in range(length):
        x, y = a.sites[n], (-b.sites[n] if n == 0 else b.sites[n])
        if length == 1:
            sites.append(x + y)
            continue
        if n == 0:
            s = np.concatenate([x, y], axis=2)
        elif n == length - 1:
            s = np.concatenate([x, y], axis=0)
        else:
            shp = list(x.shape)
            shp[0] += y.shape[0]
            shp[2] += y.shape[2]
            s = np.zeros(shp)
            s[: x.shape[0], :, : x.shape[2]] = x
            s[x.shape[0]:, :, x.shape[2]:] = y
        sites.append(s)
    env = np.ones((1, 1))
    for n, s in enumerate(sites):
        if s.ndim == 4:
            env = np.einsum("ab,asxf,bsyf->xy", env, s, s)
        else:
            env = np.einsum("ab,asx,bsy->xy", env, s, s)
    return float(env[0, 0])


def stability_chain(length=200, gain=40.0):
    """Chain whose raw contraction grows by ``gain`` per site on the all-|0> input."""
    sites = [np.zeros((1, 2, 2))]
    sites[0][0, 0, 0] = gain
    for _ in range(1, length - 1):
        a = np.zeros((2, 2, 2))
        a[:, 0, :] = gain * np.eye(2)
        sites.append(a)
    last = np.zeros((2, 2, 1, 2))
    last[:, 0, 0, :] = gain * np.eye(2)
    sites.append(last)
    mps = M.MpsProjector(sites, length - 1, 2, "standard").validate()
    phi = np.tile([1.0, 0.0], (length, 1))
    return mps, phi


@check("mps", "oracle_equivalence")
def _c_oracle(rng, n_pairs=100):
    worst = 0.0
    for _ in range(n_pairs):
        length = int(rng.integers(1, 9))
        chi = int(rng.integers(1, 5))
        d_fused = int(rng.integers(1, 5))
        mps = M.random_mps(_random_bonds(rng, length, chi), d_fused,
                           int(rng.integers(0, length)), int(rng.integers(1 << 31)))
        phi = M.angle_encode(rng.uniform(-1, 1, length))
        worst = max(worst, _direction_gap(M.contract_sequential(mps, phi).values,
                                          M.contract_full(mps, phi).values))
    return _result("mps", "oracle_equivalence", worst, 1e-8, f"{n_pairs} random pairs")


def _one_big_bond_chain(rng, chi_set=4, big=8):
    length = int(rng.integers(6, 33))
    bonds = _random_bonds(rng, length, chi_set)
    k = int(rng.integers(3, length - 2))
    bonds[k] = big
    mps = M.random_mps(bonds, int(rng.integers(1, 5)), int(rng.integers(0, length)),
                       int(rng.integers(1 << 31)))
    mps = M.canonicalize(mps)
    c = mps.center
    mps.sites[c] = mps.sites[c] / np.linalg.norm(mps.sites[c])
    return mps


@check("mps", "canonical_isometry")
def _c_canonical(rng, n_chains=50):
    worst = 0.0
    for _ in range(n_chains):
        length = int(rng.integers(2, 33))
        mps = M.random_mps(_random_bonds(rng, length, 6), int(rng.integers(1, 5)),
                           int(rng.integers(0, length)), int(rng.integers(1 << 31)))
        target = int(rng.integers(0, length))
        worst = max(worst, *M.canonical_residuals(M.canonicalize(mps, target)))
        trunc, _ = M.sweep_truncate(M.canonicalize(mps), int(rng.integers(1, 5)))
        worst = max(worst, *M.canonical_residuals(trunc))
    return _result("mps", "canonical_isometry", worst, 1e-10, f"{n_chains} chains, L<=32")


@check("mps", "eckart_young_identity")
def _c_eckart(rng, n_chains=50):
    worst = 0.0
    for _ in range(n_chains):
        mps = _one_big_bond_chain(rng)
        trunc, rep = M.sweep_truncate(mps, 4)
        worst = max(worst, abs(difference_norm_sq(mps, trunc) - rep.total))
    return _result("mps", "eckart_young_identity", worst, 1e-10,
                   f"{n_chains} chains with one oversized bond")


@check("mps", "noop_truncation")
def _c_noop(rng, n_chains=10):
    worst = 0.0
    for _ in range(n_chains):
        mps = M.canonicalize(M.random_mps(_random_bonds(rng, 8, 4), 3, 4,
                                          int(rng.integers(1 << 31))))
        trunc, rep = M.sweep_truncate(mps, 16)
        phi = M.angle_encode(rng.uniform(-1, 1, 8))
        worst = max(worst, rep.total, float(np.max(np.abs(
            M.contract_full(mps, phi).values - M.contract_full(trunc, phi).values))))
    return _result("mps", "noop_truncation", worst, 1e-8)


@check("mps", "normalized_stability")
def _c_stability(rng):
    mps, phi = stability_chain()
    norms = np.array(M.contract_sequential(mps, phi).norms)
    raw = np.array(M.contract_sequential(mps, phi, normalize=False).norms)
    bound_gap = max(0.0, float(np.max(norms - 1.0)), float(np.max((1 - 2e-6) - norms)))
    broken = np.flatnonzero(~(np.isfinite(raw) & (raw > 0)))
    value = bound_gap if broken.size else math.inf
    where = f"unnormalized control leaves float64 range at site {broken[0]}" if broken.size else (
        "unnormalized control stayed finite")
    return _result("mps", "normalized_stability", value, 0.0,
                   f"L=200 norms in [{norms.min():.8f}, {norms.max():.8f}]; {where}")


def _fd_relative_errors(rng, mps, head, phis, labels, n_params=100, step=1e-5):
    _, g = M.grad_mps(mps, phis, labels, head)
    params = mps.parameters() + [head]
    grads = g.sites + ((g.biases + [g.head]) if mps.mode == "activated" else []) + [g.head_w]
    errs, rels = [], [0.0]
    for _ in range(n_params):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + step
        lp, _ = M.grad_mps(mps, phis, labels, head)
        params[k][idx] = old - step
        lm, _ = M.grad_mps(mps, phis, labels, head)
        params[k][idx] = old
        fd = (lp - lm) / (2 * step)
        an = grads[k][idx]
        err = abs(fd - an)
        scale = max(abs(fd), abs(an))
        errs.append(0.0 if err <= 1e-7 else err / scale)
        if scale > 1e-4:
            rels.append(err / scale)
    return max(errs), max(rels)


@check("mps", "gradient_fd")
def _c_grad(rng, n_params=100):
    worst = rel = 0.0
    phis = M.angle_encode_batch(rng.uniform(-1, 1, (6, 8)))
    labels = rng.integers(0, 2, 6)
    for mode in ("standard", "activated"):
        mps = M.init_mps(8, 4, 3, mode=mode, seed=int(rng.integers(1 << 31)), noise=0.3)
        head = rng.standard_normal((2, 3))
        w, r = _fd_relative_errors(rng, mps, head, phis, labels, n_params)
        worst, rel = max(worst, w), max(rel, r)
    return _result("mps", "gradient_fd", worst, 1e-4,
                   f"{n_params} params per mode, L=8, chi=4; max rel err {rel:.1e} on |g|>1e-4")


# ----------------------------------------------------------------------------- vqc oracles


def dense_gate(n, u, qubits):
    """Full 2^n matrix of a gate on ``qubits`` (pair basis index 2*z_i + z_j), by enumeration."""
    dim = 2**n
    out = np.zeros((dim, dim), dtype=complex)
    k = len(qubits)
    for col in range(dim):
        sub_in = 0
        for q in qubits:
            sub_in = 2 * sub_in + ((col >> q) & 1)
        for sub_out in range(2**k):
            row = col
            for pos, q in enumerate(qubits):
                bit = (sub_out >> (k - 1 - pos)) & 1
                row = (row & ~(1 << q)) | (bit << q)
            out[row, col] += u[sub_out, sub_in]
    return out


def zyz_matrix(p, z1, y, z2):
    rz = lambda t: np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])
    ry = expm(-0.5j * y * _Y)
    return np.exp(1j * p) * rz(z1) @ ry @ rz(z2)


def entangler_matrix(kind, params):
    if kind == "cnot":
        return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    if kind == "crz":
        t = params[0]
        return np.diag([1, 1, np.exp(-0.5j * t), np.exp(0.5j * t)])
    ax, ay, az = params
    return expm(-1j * (ax * np.kron(_X, _X) + ay * np.kron(_Y, _Y) + az * np.kron(_Z, _Z)))


def dense_ansatz(spec: V.AnsatzSpec, params) -> np.ndarray:
    n = spec.n_qubits
    offs = spec.block_offsets()
    u = np.eye(2**n, dtype=complex)
    for p in spec.block_order():
        i, j, base = p, p + 1, offs[p]
        left = dense_gate(n, zyz_matrix(*params[base:base + 4]), (i,)) @ dense_gate(
            n, zyz_matrix(*params[base + 4:base + 8]), (j,))
        right = dense_gate(n, zyz_matrix(*params[base + 8:base + 12]), (i,)) @ dense_gate(
            n, zyz_matrix(*params[base + 12:base + 16]), (j,))
        k = V.ENTANGLER_ARITY[spec.entanglers[p]]
        ent = dense_gate(n, entangler_matrix(spec.entanglers[p], params[base + 16:base + 16 + k]),
                         (i, j))
        block = left @ ent @ right if spec.dressing_order == "right-first" else right @ ent @ left
        u = block @ u
    last = offs[-1]
    return dense_gate(n, zyz_matrix(*params[last:last + 4]), (n - 1,)) @ u


def _random_spec(rng, n):
    kinds = tuple(rng.choice(sorted(V.ENTANGLER_ARITY), size=max(n - 1, 0)))
    topo = str(rng.choice(V.TOPOLOGIES))
    return V.AnsatzSpec(n, topo, kinds or (), (), str(rng.choice(["right-first", "left-first"])))


@check("vqc", "dense_oracle")
def _c_dense(rng, n_circuits=30):
    worst = 0.0
    for _ in range(n_circuits):
        n = int(rng.integers(1, 4))
        spec = _random_spec(rng, n)
        params = rng.uniform(-np.pi, np.pi, spec.n_params)
        u = dense_ansatz(spec, params)
        for basis in range(2**n):
            amp = np.zeros(2**n, dtype=complex)
            amp[basis] = 1.0
            got = V.run_ansatz(V.Statevector(n, amp), spec, params).amplitudes
            worst = max(worst, float(np.max(np.abs(got - u[:, basis]))))
    return _result("vqc", "dense_oracle", worst, 1e-10, f"{n_circuits} circuits, N_q<=3, all basis inputs")


@check("vqc", "norm_preservation")
def _c_norm(rng, n_runs=1000):
    worst = 0.0
    for _ in range(n_runs):
        n = int(rng.integers(1, 6))
        spec = _random_spec(rng, n)
        amp = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
        amp /= np.linalg.norm(amp)
        out = V.run_ansatz(V.Statevector(n, amp), spec, rng.uniform(-np.pi, np.pi, spec.n_params))
        worst = max(worst, abs(out.norm() - 1.0))
    return _result("vqc", "norm_preservation", worst, 1e-10, f"{n_runs} random runs")


@check("vqc", "heisenberg_expm")
def _c_heis(rng, n_draws=50):
    worst = 0.0
    for _ in range(n_draws):
        a = rng.uniform(-np.pi, np.pi, 3)
        h = a[0] * np.kron(_X, _X) + a[1] * np.kron(_Y, _Y) + a[2] * np.kron(_Z, _Z)
        u = expm(-1j * h)
        for basis in range(4):
            amp = np.zeros(4, dtype=complex)
            amp[basis] = 1.0
            # pair (0, 1): pair index 2*z0 + z1 while the register index is z0 + 2*z1
            got = V.apply_entangler(V.Statevector(2, amp), (0, 1), "heisenberg", a).amplitudes
            perm = [0, 2, 1, 3]
            col = perm[basis]
            worst = max(worst, float(np.max(np.abs(got[perm] - u[:, col]))))
    return _result("vqc", "heisenberg_expm", worst, 1e-10, f"{n_draws} random couplings")


@check("vqc", "param_shift_fd")
def _c_shift(rng, n_circuits=5, step=1e-5):
    worst = rel_big = 0.0
    phase_worst = 0.0
    for _ in range(n_circuits):
        n = int(rng.integers(2, 5))
        spec = _random_spec(rng, n)
        params = rng.uniform(-np.pi, np.pi, spec.n_params)
        angles = rng.uniform(-np.pi, np.pi, (3, n))
        head = V.ReadoutHead(rng.standard_normal(n), float(rng.standard_normal()))
        _, grad = V.param_shift_grad(spec, params, angles, head)
        for k in range(spec.n_params):
            e = np.zeros(spec.n_params)
            e[k] = step
            pp = V.readout(V.expectations(spec, params + e, angles), head)
            pm = V.readout(V.expectations(spec, params - e, angles), head)
            fd = (pp - pm) / (2 * step)
            err = np.abs(fd - grad[:, k])
            scale = np.maximum(np.abs(fd), np.abs(grad[:, k]))
            rel = np.where(err <= 1e-8, 0.0, err / np.where(scale > 0, scale, 1.0))
            worst = max(worst, float(rel.max()))
            big = scale > 1e-4
            if big.any():
                rel_big = max(rel_big, float((err[big] / scale[big]).max()))
        phase_idx = [o + 4 * m for o in spec.block_offsets()[:-1] for m in range(4)]
        phase_idx.append(spec.block_offsets()[-1])
        phase_worst = max(phase_worst, float(np.max(np.abs(grad[:, phase_idx]))))
    value = worst if phase_worst <= 1e-12 else math.inf
    return _result("vqc", "param_shift_fd", value, 1e-5,
                   f"max rel err {rel_big:.1e} on |g|>1e-4; max global-phase gradient {phase_worst:.1e}")


# ----------------------------------------------------------------------------- trotter


def trotter_generators():
    """Non-commuting pair X0X1 and Z1Z2 on three qubits."""
    a = reduce(np.kron, [_I, _X, _X])
    b = reduce(np.kron, [_Z, _Z, _I])
    return a, b


@check("trotter", "trotter_slope")
def _c_trotter(rng, taus=TROTTER_TAUS):
    a, b = trotter_generators()
    errs = [V.trotter_discrepancy(a, b, t) for t in taus]
    slope, _ = V.fit_loglog_slope(taus, errs)
    table = [("trotter", t, e) for t, e in zip(taus, errs)]
    return _result("trotter", "trotter_slope", abs(slope - 2.0), 0.05, f"slope={slope:.4f}", table)


@check("trotter", "topology_slope")
def _c_topology(rng, taus=TROTTER_TAUS):
    spec = V.AnsatzSpec.uniform(4, entangler="heisenberg")
    params = rng.uniform(-1, 1, spec.n_params)
    angles = rng.uniform(-np.pi, np.pi, (4, 4))
    disc = V.topology_discrepancy(spec, params, angles, taus)
    slope, _ = V.fit_loglog_slope(taus, disc)
    table = [("topology", t, e) for t, e in zip(taus, disc)]
    return _result("trotter", "topology_slope", abs(slope - 2.0), 0.1, f"slope={slope:.4f}", table)


# ----------------------------------------------------------------------------- checkpoints


def check_checkpoint(mps: M.MpsProjector, tol: float = 1e-10) -> list:
    """Invariants of a stored projector; every violated one is named in a failing result."""
    out = []
    try:
        mps.validate()
        out.append(CheckResult("checkpoint_structure", "mps", True, 0.0, 0.0))
    except Exception as exc:  # noqa: BLE001 - reported, not raised
        out.append(CheckResult("checkpoint_structure", "mps", False, math.inf, 0.0, str(exc)))
        return out
    finite = all(np.all(np.isfinite(p)) for p in mps.parameters())
    out.append(CheckResult("checkpoint_finite", "mps", finite, 0.0 if finite else math.inf, 0.0))
    if mps.mode == "standard":
        left, right = M.canonical_residuals(mps)
        out.append(_result("mps", "checkpoint_left_isometry", left, tol,
                            "sites left of the center must satisfy A^T A = I"))
        out.append(_result("mps", "checkpoint_right_isometry", right, tol,
                            "sites right of the center must satisfy A A^T = I"))
    return out


def run(suite: str = "all", seed: int = 0) -> list:
    """Run every registered check in ``suite`` with one generator per check."""
    if suite not in SUITES + ("all",):
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES + ('all',)}")
    results = []
    for k, (s, name, fn) in enumerate(_REGISTRY):
        if suite in ("all", s):
            rng = np.random.default_rng([seed, k])
            results.append(fn(rng))
    return results
