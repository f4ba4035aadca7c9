"""Matrix product state projector: encoding, canonical sweeps, forward passes and gradients.

Layout conventions
------------------
Standard mode: site ``n`` is an array of shape ``(chi_left, 2, chi_right)``;
the orthogonality center additionally carries the feature leg and has shape
``(chi_left, 2, chi_right, d_fused)``. Boundary extents are 1.

Activated mode: the chain keeps a single hidden width ``chi``. Site 0 has
shape ``(1, 2, chi)`` (the left boundary feeds a constant 1 into the
contraction), every later site is ``(chi, 2, chi)``, each site owns a bias of
length ``chi``, and the center owns a ``(chi, d_fused)`` feature head that
maps the final carry onto the feature leg.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, OracleScaleError
from .tensor import Tensor, contract, frobenius_normalize, qr, svd_truncate

__all__ = [
    "ProductState",
    "MpsProjector",
    "FusedFeature",
    "MpsGrad",
    "angle_encode",
    "angle_encode_batch",
    "concat_modalities",
    "init_mps",
    "random_mps",
    "canonicalize",
    "canonical_residuals",
    "sweep_truncate",
    "contract_full",
    "contract_sequential",
    "activated_forward",
    "forward_batch",
    "grad_mps",
    "param_count",
    "full_tensor",
]

PHYS_DIM = 2
ORACLE_MAX_SITES = 12
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class ProductState:
    sites: np.ndarray  # (L, 2)
    source_features: np.ndarray
    out_of_range: int = 0

    def __len__(self):
        return self.sites.shape[0]


@dataclass(frozen=True)
class FusedFeature:
    values: np.ndarray
    norm_log: float = 0.0
    norms: tuple = ()


@dataclass
class MpsProjector:
    sites: list
    center: int
    d_fused: int
    mode: str = "standard"
    biases: list | None = None
    head: np.ndarray | None = None
    seed: int | None = None

    @property
    def length(self) -> int:
        return len(self.sites)

    def bond_dims(self) -> list[int]:
        """Extents of the L+1 virtual bonds, boundaries included."""
        return [self.sites[0].shape[0]] + [a.shape[2] for a in self.sites]

    def copy(self) -> "MpsProjector":
        return copy.deepcopy(self)

    def site_tensor(self, n: int) -> Tensor:
        labels = (f"a{n}", f"s{n}", f"a{n + 1}")
        if self.sites[n].ndim == 4:
            labels += ("l",)
        return Tensor(self.sites[n], labels)

    def parameters(self) -> list[np.ndarray]:
        params = list(self.sites)
        if self.mode == "activated":
            params += list(self.biases) + [self.head]
        return params

    def validate(self):
        if self.mode not in ("standard", "activated"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0 <= self.center < self.length:
            raise ConfigError(f"center {self.center} outside [0, {self.length})")
        for n, a in enumerate(self.sites):
            want = 4 if (self.mode == "standard" and n == self.center) else 3
            if a.ndim != want:
                raise ConfigError(f"site {n} has {a.ndim} legs, expected {want}")
            if a.shape[1] != PHYS_DIM:
                raise ConfigError(f"site {n} physical extent {a.shape[1]} != {PHYS_DIM}")
            if n + 1 < self.length and a.shape[2] != self.sites[n + 1].shape[0]:
                raise ConfigError(f"bond {n + 1} extents disagree")
        if self.sites[0].shape[0] != 1:
            raise ConfigError("left boundary extent must be 1")
        if self.mode == "standard":
            if self.sites[-1].shape[2] != 1:
                raise ConfigError("right boundary extent must be 1")
            if self.sites[self.center].shape[3] != self.d_fused:
                raise ConfigError("feature leg extent != d_fused")
        else:
            chi = self.sites[0].shape[2]
            if any(a.shape[2] != chi for a in self.sites) or any(
                a.shape[0] != chi for a in self.sites[1:]
            ):
                raise ConfigError("activated mode requires a uniform bond width")
            if self.biases is None or len(self.biases) != self.length:
                raise ConfigError("activated mode needs one bias per site")
            if self.head is None or self.head.shape != (chi, self.d_fused):
                raise ConfigError("activated feature head must be (chi, d_fused)")
        return self


# ----------------------------------------------------------------------------- encoding


def angle_encode(features) -> ProductState:
    """Map each feature ``v`` to the local state ``(cos(pi v), sin(pi v))``."""
    v = np.asarray(features, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise NumericError("angle_encode: non-finite feature")
    outside = int(np.count_nonzero(np.abs(v) >= 1.0))
    sites = np.stack([np.cos(np.pi * v), np.sin(np.pi * v)], axis=-1)
    return ProductState(sites, v.copy(), outside)


def angle_encode_batch(features) -> np.ndarray:
    """Vectorized encoding of a (batch, L) array into (batch, L, 2)."""
    v = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("angle_encode: non-finite feature")
    return np.stack([np.cos(np.pi * v), np.sin(np.pi * v)], axis=-1)


def concat_modalities(e_rgb, e_depth, e_ir) -> np.ndarray:
    e_rgb, e_depth, e_ir = (np.asarray(x, dtype=np.float64) for x in (e_rgb, e_depth, e_ir))
    if not (e_rgb.shape[-1] == e_depth.shape[-1] == e_ir.shape[-1]):
        raise DimensionError(
            f"modality lengths differ: {e_rgb.shape[-1]}, {e_depth.shape[-1]}, {e_ir.shape[-1]}"
        )
    return np.concatenate([e_rgb, e_depth, e_ir], axis=-1)


def _phis(phi) -> np.ndarray:
    if isinstance(phi, ProductState):
        return phi.sites
    return np.asarray(phi, dtype=np.float64)


# ----------------------------------------------------------------------------- construction


def _exact_bond_bound(n_bond: int, length: int) -> int:
    return min(PHYS_DIM ** min(n_bond, 62), PHYS_DIM ** min(length - n_bond, 62))


def init_mps(
    length: int,
    chi_init: int,
    d_fused: int,
    center: int | None = None,
    mode: str = "standard",
    seed: int = 0,
    d: int = PHYS_DIM,
    noise: float = 0.01,
) -> MpsProjector:
    """Identity-embedded chain plus seeded Gaussian noise, canonicalized to ``center``."""
    if d != PHYS_DIM:
        raise ConfigError("only a physical dimension of 2 is supported")
    if length < 1 or chi_init < 1 or d_fused < 1:
        raise ConfigError("length, chi_init and d_fused must all be >= 1")
    if center is None:
        center = length // 2
    if not 0 <= center < length:
        raise ConfigError(f"center {center} outside [0, {length})")
    if mode not in ("standard", "activated"):
        raise ConfigError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)

    if mode == "standard":
        bonds = [1] + [
            min(chi_init, _exact_bond_bound(n, length)) for n in range(1, length)
        ] + [1]
        sites = []
        for n in range(length):
            cl, cr = bonds[n], bonds[n + 1]
            eye = np.eye(cl, cr)
            if n == center:
                a = np.broadcast_to(eye[:, None, :, None], (cl, d, cr, d_fused)).copy()
            else:
                a = np.broadcast_to(eye[:, None, :], (cl, d, cr)).copy()
            a += noise * rng.standard_normal(a.shape)
            sites.append(a)
        mps = MpsProjector(sites, center, d_fused, "standard", seed=seed).validate()
        return canonicalize(mps, center)

    chi = chi_init
    sites, biases = [], []
    for n in range(length):
        cl = 1 if n == 0 else chi
        eye = np.eye(cl, chi)
        a = np.broadcast_to(eye[:, None, :], (cl, d, chi)).copy()
        a += noise * rng.standard_normal(a.shape)
        sites.append(a)
        biases.append(noise * rng.standard_normal(chi))
    head = np.eye(chi, d_fused) + noise * rng.standard_normal((chi, d_fused))
    return MpsProjector(sites, center, d_fused, "activated", biases, head, seed).validate()


# ----------------------------------------------------------------------------- gauge moves


def random_mps(bonds, d_fused: int, center: int, seed: int = 0) -> MpsProjector:
    """Standard chain with Gaussian sites and the given L+1 bond extents (boundaries 1)."""
    bonds = list(bonds)
    if bonds[0] != 1 or bonds[-1] != 1:
        raise ConfigError("boundary bond extents must be 1")
    rng = np.random.default_rng(seed)
    sites = []
    for n in range(len(bonds) - 1):
        shape = (bonds[n], PHYS_DIM, bonds[n + 1]) + ((d_fused,) if n == center else ())
        sites.append(rng.standard_normal(shape))
    return MpsProjector(sites, center, d_fused, "standard", seed=seed).validate()


def _require_standard(mps: MpsProjector, what: str):
    if mps.mode != "standard":
        raise ConfigError(f"{what} is defined for the linear (standard) chain only")


def _left_orthogonalize(sites, n):
    """QR site n into a left isometry, pushing R into site n+1."""
    t = Tensor(sites[n], ("l", "s", "r"))
    q, r = qr(t, ("l", "s"), ("r",), bond="k")
    sites[n] = q.data
    nxt = sites[n + 1]
    sites[n + 1] = np.tensordot(r.data, nxt, axes=(1, 0))


def _right_orthogonalize(sites, n):
    """LQ site n into a right isometry, pushing L into site n-1."""
    t = Tensor(sites[n], ("l", "s", "r"))
    q, r = qr(t, ("s", "r"), ("l",), bond="k")
    # site = r^T q^T with q^T right-isometric
    sites[n] = np.transpose(q.data, (2, 0, 1))
    prev = sites[n - 1]
    sites[n - 1] = np.tensordot(prev, r.data.T, axes=(2, 0)) if prev.ndim == 3 else (
        np.moveaxis(np.tensordot(prev, r.data.T, axes=(2, 0)), 3, 2)
    )


def _shift_right(sites, c, chi_set=None):
    """Move the center (with its feature leg) from c to c+1. Returns discarded weight."""
    t = Tensor(sites[c], ("l", "s", "r", "f"))
    if chi_set is None:
        q, r = qr(t, ("l", "s"), ("r", "f"), bond="k")
        left, carry, discarded = q.data, r.data, 0.0
    else:
        res = svd_truncate(t, ("l", "s"), ("r", "f"), chi_set, bond="k")
        left = res.u.data
        carry = res.s[:, None, None] * res.v.data
        discarded = res.discarded_weight
    sites[c] = left
    # carry (k, r, f) x next (r, s, r') -> (k, s, r', f)
    nxt = np.tensordot(carry, sites[c + 1], axes=(1, 0))
    sites[c + 1] = np.transpose(nxt, (0, 2, 3, 1))
    return discarded


def _shift_left(sites, c, chi_set=None):
    """Move the center (with its feature leg) from c to c-1. Returns discarded weight."""
    t = Tensor(sites[c], ("l", "s", "r", "f"))
    if chi_set is None:
        q, r = qr(t, ("s", "r"), ("f", "l"), bond="k")
        right = np.transpose(q.data, (2, 0, 1))
        carry = np.transpose(r.data, (1, 2, 0))  # (f, l, k)
        discarded = 0.0
    else:
        res = svd_truncate(t, ("f", "l"), ("s", "r"), chi_set, bond="k")
        right = res.v.data
        carry = res.u.data * res.s[None, None, :]  # (f, l, k)
        discarded = res.discarded_weight
    sites[c] = right
    # prev (l', s, l) x carry (f, l, k) -> (l', s, f, k) -> (l', s, k, f)
    prv = np.tensordot(sites[c - 1], carry, axes=(2, 1))
    sites[c - 1] = np.transpose(prv, (0, 1, 3, 2))
    return discarded


def canonicalize(mps: MpsProjector, target_center: int | None = None) -> MpsProjector:
    """Bring a standard chain to mixed canonical form centred at ``target_center``.

    Non-truncating; the represented map is unchanged.
    """
    _require_standard(mps, "canonicalize")
    mps.validate()
    target = mps.center if target_center is None else target_center
    if not 0 <= target < mps.length:
        raise ConfigError(f"target center {target} outside [0, {mps.length})")
    out = mps.copy()
    sites, c = out.sites, out.center
    for n in range(c):
        _left_orthogonalize(sites, n)
    for n in range(mps.length - 1, c, -1):
        _right_orthogonalize(sites, n)
    while c < target:
        _shift_right(sites, c)
        c += 1
    while c > target:
        _shift_left(sites, c)
        c -= 1
    out.center = c
    return out


def canonical_residuals(mps: MpsProjector) -> tuple[float, float]:
    """Largest ``||A^T A - I||_F`` left of the center and ``||A A^T - I||_F`` right of it."""
    left = right = 0.0
    for n, a in enumerate(mps.sites):
        if n < mps.center:
            m = a.reshape(-1, a.shape[2])
            left = max(left, float(np.linalg.norm(m.conj().T @ m - np.eye(m.shape[1]))))
        elif n > mps.center:
            m = a.reshape(a.shape[0], -1)
            right = max(right, float(np.linalg.norm(m @ m.conj().T - np.eye(m.shape[0]))))
    return left, right


def _gauge_right(sites, k, chi_set):
    """Move the orthogonality center from k to k+1, leaving any feature leg in place."""
    a = sites[k]
    has_f = a.ndim == 4
    labels = ("l", "s", "r", "f") if has_f else ("l", "s", "r")
    rows = ("l", "s", "f") if has_f else ("l", "s")
    res = svd_truncate(Tensor(a, labels), rows, ("r",), chi_set, bond="k")
    u = res.u.data
    sites[k] = np.transpose(u, (0, 1, 3, 2)) if has_f else u
    carry = res.s[:, None] * res.v.data  # (k, r)
    sites[k + 1] = np.tensordot(carry, sites[k + 1], axes=(1, 0))
    return res.discarded_weight


def _gauge_left(sites, k, chi_set):
    """Move the orthogonality center from k to k-1, leaving any feature leg in place."""
    a = sites[k]
    has_f = a.ndim == 4
    labels = ("l", "s", "r", "f") if has_f else ("l", "s", "r")
    cols = ("s", "r", "f") if has_f else ("s", "r")
    res = svd_truncate(Tensor(a, labels), ("l",), cols, chi_set, bond="k")
    v = res.v.data
    sites[k] = v
    carry = res.u.data * res.s[None, :]  # (l, k)
    prv = np.tensordot(sites[k - 1], carry, axes=(2, 0))
    sites[k - 1] = np.moveaxis(prv, -1, 2) if prv.ndim == 4 else prv
    return res.discarded_weight


@dataclass
class SweepReport:
    discarded: list = field(default_factory=list)  # per interior bond, bonds 1..L-1

    @property
    def total(self) -> float:
        return float(sum(self.discarded))


def sweep_truncate(mps: MpsProjector, chi_set: int, report: SweepReport | None = None):
    """Truncating SVD sweep: gauge center to the right end, to the left end, then home.

    The feature leg stays on the center site throughout, so each bond is
    truncated against the same grouping it has at rest and the local error
    equals the discarded weight. Every bond ends with extent ``<= chi_set``.
    Returns ``(new_mps, SweepReport)`` with discarded weight summed per bond.
    """
    _require_standard(mps, "sweep_truncate")
    if chi_set is None or chi_set < 1:
        raise ConfigError(f"chi_set must be >= 1, got {chi_set}")
    out = mps.copy()
    sites, home, length = out.sites, out.center, out.length
    rep = report if report is not None else SweepReport()
    rep.discarded = [0.0] * max(length - 1, 0)
    c = home
    while c < length - 1:
        rep.discarded[c] += _gauge_right(sites, c, chi_set)
        c += 1
    while c > 0:
        rep.discarded[c - 1] += _gauge_left(sites, c, chi_set)
        c -= 1
    while c < home:
        rep.discarded[c] += _gauge_right(sites, c, chi_set)
        c += 1
    return out, rep


# ----------------------------------------------------------------------------- contraction


def full_tensor(mps: MpsProjector) -> np.ndarray:
    """Materialize Psi as an array of shape (2,)*L + (d_fused,). Small chains only."""
    _require_standard(mps, "full_tensor")
    if mps.length > ORACLE_MAX_SITES:
        raise OracleScaleError(
            f"full materialization limited to L <= {ORACLE_MAX_SITES}, got {mps.length}"
        )
    acc = mps.site_tensor(0)
    for n in range(1, mps.length):
        acc = contract(acc, mps.site_tensor(n), [(f"a{n}", f"a{n}")])
    order = [f"s{n}" for n in range(mps.length)] + ["l"]
    acc = acc.transpose([f"a0"] + order + [f"a{mps.length}"])
    return acc.data[0, ..., 0]


def contract_full(mps: MpsProjector, phi) -> FusedFeature:
    """Reference contraction: build Psi and the full product state, then sum."""
    sites = _phis(phi)
    if sites.shape[0] != mps.length:
        raise DimensionError(f"input has {sites.shape[0]} sites, chain has {mps.length}")
    psi = full_tensor(mps)
    big_phi = np.ones(())
    for n in range(mps.length):
        big_phi = np.multiply.outer(big_phi, sites[n])
    flat = psi.reshape(-1, mps.d_fused)
    return FusedFeature(big_phi.reshape(-1) @ flat, 0.0)


def contract_sequential(
    mps: MpsProjector, phi, eps: float = DEFAULT_EPS, normalize: bool = True
) -> FusedFeature:
    """Left-to-right accumulation with per-step Frobenius normalization.

    ``norms`` holds the norm of each intermediate after normalization (or the
    raw norm when ``normalize`` is False); ``norm_log`` accumulates
    ``log(||T|| + eps)`` of the stripped factors.
    """
    _require_standard(mps, "contract_sequential")
    sites = _phis(phi)
    if sites.shape[0] != mps.length:
        raise DimensionError(f"input has {sites.shape[0]} sites, chain has {mps.length}")
    carry = np.ones(1)
    norm_log = 0.0
    norms = []
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        for n, a in enumerate(mps.sites):
            local = np.tensordot(a, sites[n], axes=(1, 0))  # drop s: (l, r[, f])
            if carry.ndim == 1:
                carry = np.tensordot(carry, local, axes=(0, 0))
            else:
                carry = np.einsum("af,ab->bf", carry, local)
            if normalize:
                carry, raw = frobenius_normalize(carry, eps)
                norm_log += math.log(raw + eps)
                if not np.all(np.isfinite(carry)):
                    raise NumericError(f"non-finite intermediate at site {n}")
                norms.append(float(np.linalg.norm(carry.ravel())))
            else:
                norms.append(float(np.linalg.norm(carry.ravel())))
    return FusedFeature(carry.reshape(-1), norm_log, tuple(norms))


def activated_forward(mps: MpsProjector, phi) -> FusedFeature:
    """Residual tanh recurrence followed by the center's feature head."""
    if mps.mode != "activated":
        raise ConfigError("activated_forward needs an activated-mode chain")
    mps.validate()
    sites = _phis(phi)
    if sites.shape[0] != mps.length:
        raise DimensionError(f"input has {sites.shape[0]} sites, chain has {mps.length}")
    h = forward_batch(mps, sites[None])[0]
    return FusedFeature(h, 0.0)


# ----------------------------------------------------------------------------- batched forward / backward


def _forward_standard(mps, phis, eps):
    b = phis.shape[0]
    carry = np.ones((b, 1))
    cache = []
    for n, a in enumerate(mps.sites):
        x = phis[:, n, :]
        if n < mps.center:
            raw = np.einsum("ba,asc,bs->bc", carry, a, x)
        elif n == mps.center:
            raw = np.einsum("ba,ascl,bs->bcl", carry, a, x)
        else:
            raw = np.einsum("bal,asc,bs->bcl", carry, a, x)
        axes = tuple(range(1, raw.ndim))
        nrm = np.sqrt(np.sum(raw * raw, axis=axes))
        shape = (b,) + (1,) * (raw.ndim - 1)
        out = raw / (nrm + eps).reshape(shape)
        cache.append((carry, raw, nrm))
        carry = out
    return carry.reshape(b, -1), cache


def _backward_standard(mps, phis, cache, g_h, eps):
    b = phis.shape[0]
    g_sites = [None] * mps.length
    g = g_h.reshape((b,) + cache[-1][1].shape[1:])
    for n in range(mps.length - 1, -1, -1):
        carry, raw, nrm = cache[n]
        shape = (b,) + (1,) * (raw.ndim - 1)
        axes = tuple(range(1, raw.ndim))
        denom = (nrm + eps).reshape(shape)
        dot = np.sum(raw * g, axis=axes)
        safe = np.where(nrm > 0, nrm, 1.0)
        coef = np.where(nrm > 0, dot / (safe * (nrm + eps) ** 2), 0.0).reshape(shape)
        g_raw = g / denom - raw * coef
        x = phis[:, n, :]
        a = mps.sites[n]
        if n < mps.center:
            g_sites[n] = np.einsum("ba,bs,bc->asc", carry, x, g_raw)
            g = np.einsum("asc,bs,bc->ba", a, x, g_raw)
        elif n == mps.center:
            g_sites[n] = np.einsum("ba,bs,bcl->ascl", carry, x, g_raw)
            g = np.einsum("ascl,bs,bcl->ba", a, x, g_raw)
        else:
            g_sites[n] = np.einsum("bal,bs,bcl->asc", carry, x, g_raw)
            g = np.einsum("asc,bs,bcl->bal", a, x, g_raw)
    return g_sites


def _forward_activated(mps, phis):
    b = phis.shape[0]
    chi = mps.sites[0].shape[2]
    contr = np.ones((b, 1))
    resid = np.zeros((b, chi))
    cache = []
    for n, a in enumerate(mps.sites):
        delta = np.einsum("ba,asc,bs->bc", contr, a, phis[:, n, :]) + mps.biases[n]
        act = np.tanh(delta)
        v = resid + act
        cache.append((contr, act))
        contr = resid = v
    return resid @ mps.head, resid, cache


def _backward_activated(mps, phis, v_last, cache, g_h):
    g_head = v_last.T @ g_h
    g_v = g_h @ mps.head.T
    g_sites = [None] * mps.length
    g_bias = [None] * mps.length
    for n in range(mps.length - 1, -1, -1):
        contr, act = cache[n]
        g_delta = g_v * (1.0 - act * act)
        g_bias[n] = g_delta.sum(axis=0)
        g_sites[n] = np.einsum("ba,bs,bc->asc", contr, phis[:, n, :], g_delta)
        g_contr = np.einsum("asc,bs,bc->ba", mps.sites[n], phis[:, n, :], g_delta)
        # the residual path and the contraction input are the same carry for n >= 1
        g_v = g_v + g_contr if n > 0 else None
    return g_sites, g_bias, g_head


def forward_batch(mps: MpsProjector, phis, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Fused features for a batch of encoded inputs of shape (B, L, 2)."""
    phis = np.asarray(phis, dtype=np.float64)
    if phis.ndim != 3 or phis.shape[1] != mps.length or phis.shape[2] != PHYS_DIM:
        raise DimensionError(f"expected (B, {mps.length}, 2) inputs, got {phis.shape}")
    if mps.mode == "standard":
        return _forward_standard(mps, phis, eps)[0]
    return _forward_activated(mps, phis)[0]


@dataclass
class MpsGrad:
    sites: list
    biases: list | None
    head: np.ndarray | None
    head_w: np.ndarray

    def flat(self) -> np.ndarray:
        parts = [g.ravel() for g in self.sites]
        if self.biases is not None:
            parts += [g.ravel() for g in self.biases] + [self.head.ravel()]
        parts.append(self.head_w.ravel())
        return np.concatenate(parts)


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def grad_mps(mps: MpsProjector, batch, labels, head_w, eps: float = DEFAULT_EPS):
    """Mean softmax cross-entropy of ``W h`` and its gradient w.r.t. every parameter.

    ``batch`` is a (B, L, 2) array or a sequence of ``ProductState``. Returns
    ``(loss, MpsGrad)``.
    """
    if not isinstance(batch, np.ndarray):
        batch = np.stack([_phis(p) for p in batch])
    labels = np.asarray(labels, dtype=np.int64)
    b = batch.shape[0]
    if b == 0:
        raise ConfigError("grad_mps needs a nonempty batch")
    head_w = np.asarray(head_w, dtype=np.float64)
    if mps.mode == "standard":
        h, cache = _forward_standard(mps, batch, eps)
    else:
        h, v_last, cache = _forward_activated(mps, batch)
    logits = h @ head_w.T
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(b), labels].mean())
    p = np.exp(logp)
    g_logits = p
    g_logits[np.arange(b), labels] -= 1.0
    g_logits /= b
    g_w = g_logits.T @ h
    g_h = g_logits @ head_w
    if mps.mode == "standard":
        grads = MpsGrad(_backward_standard(mps, batch, cache, g_h, eps), None, None, g_w)
    else:
        gs, gb, gh = _backward_activated(mps, batch, v_last, cache, g_h)
        grads = MpsGrad(gs, gb, gh, g_w)
    for n, g in enumerate(grads.sites):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at site {n}")
    return loss, grads


def param_count(mps: MpsProjector) -> int:
    return int(sum(p.size for p in mps.parameters()))


def standard_param_count(length: int, chi: int, d_fused: int, center: int | None = None) -> int:
    """Parameter count of a standard chain with bonds capped by ``chi`` and the exact-rank bound."""
    if center is None:
        center = length // 2
    bonds = [1] + [min(chi, _exact_bond_bound(n, length)) for n in range(1, length)] + [1]
    total = 0
    for n in range(length):
        size = bonds[n] * PHYS_DIM * bonds[n + 1]
        total += size * (d_fused if n == center else 1)
    return total


def uniform_param_count(length: int, chi: int, d_fused: int) -> int:
    """Same as above but with every interior bond exactly ``chi`` (no rank cap)."""
    bonds = [1] + [chi] * (length - 1) + [1]
    total = sum(bonds[n] * PHYS_DIM * bonds[n + 1] for n in range(length))
    center = length // 2
    return total + bonds[center] * PHYS_DIM * bonds[center + 1] * (d_fused - 1)


def _check_sequence_lengths(items: Sequence, length: int):
    for x in items:
        if len(x) != length:
            raise DimensionError("inconsistent input lengths")
