"""Statevector simulator for the unitary-tensor-train classifier.

Basis indexing is LSB-first: qubit ``q`` is bit ``q`` of the amplitude index.
Rotations use the half-angle convention ``R_Y(t) = exp(-i t Y / 2)`` and
``R_Z(t) = exp(-i t Z / 2)``. Two-qubit gate matrices are written in the
pair basis ``|z_i z_j>`` with index ``2 * z_i + z_j``.

A circuit is compiled into a flat list of primitive ops, each either fixed
(``cnot``) or generated by a Pauli word with a two-point spectrum, so every
trainable angle has an exact two-term shift rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, DimensionError, FormatError, NumericError, QubitIndexError

__all__ = [
    "Statevector",
    "AnsatzSpec",
    "ReadoutHead",
    "zero_state",
    "encode_features",
    "encoding_angles",
    "apply_zyz",
    "apply_entangler",
    "run_ansatz",
    "expect_z",
    "readout",
    "expectations",
    "expectation_grads",
    "param_shift_grad",
    "trotter_discrepancy",
    "fit_loglog_slope",
    "topology_discrepancy",
    "read_circuit",
    "write_circuit",
]

ENTANGLER_ARITY = {"cnot": 0, "crz": 1, "heisenberg": 3}
TOPOLOGIES = ("chain", "brickwall")
ZYZ = 4  # (theta_p, theta_z1, theta_y, theta_z2)
CIRCUIT_FORMAT_VERSION = 1
MAX_QUBITS = 20

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_PAULI_PAIRS = {"xx": np.kron(_X, _X), "yy": np.kron(_Y, _Y), "zz": np.kron(_Z, _Z)}
_CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


@dataclass(frozen=True)
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class ReadoutHead:
    weights: np.ndarray
    bias: float = 0.0
    measured: tuple = ()

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "weights", w)
        measured = tuple(self.measured) or tuple(range(len(w)))
        if len(measured) != len(w):
            raise DimensionError(
                f"{len(w)} readout weights for {len(measured)} measured qubits"
            )
        object.__setattr__(self, "measured", measured)


@dataclass(frozen=True)
class AnsatzSpec:
    n_qubits: int
    topology: str = "chain"
    entanglers: tuple = ()
    measured: tuple = ()
    dressing_order: str = "right-first"

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ConfigError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        ents = tuple(self.entanglers) or ("cnot",) * (self.n_qubits - 1)
        if len(ents) == 1 and self.n_qubits > 2:
            ents = ents * (self.n_qubits - 1)
        if len(ents) != self.n_qubits - 1 and self.n_qubits > 1:
            raise ConfigError(f"need {self.n_qubits - 1} entangler kinds, got {len(ents)}")
        if self.n_qubits == 1:
            ents = ()
        for k in ents:
            if k not in ENTANGLER_ARITY:
                raise ConfigError(f"unknown entangler {k!r}; pool is {sorted(ENTANGLER_ARITY)}")
        measured = tuple(self.measured) or tuple(range(self.n_qubits))
        for q in measured:
            if not 0 <= q < self.n_qubits:
                raise ConfigError(f"measured qubit {q} out of range")
        if self.dressing_order not in ("right-first", "left-first"):
            raise ConfigError("dressing_order must be 'right-first' or 'left-first'")
        object.__setattr__(self, "entanglers", ents)
        object.__setattr__(self, "measured", measured)

    @classmethod
    def uniform(cls, n_qubits, topology="chain", entangler="cnot", **kw):
        return cls(n_qubits, topology, (entangler,) * max(n_qubits - 1, 0), **kw)

    def with_topology(self, topology: str) -> "AnsatzSpec":
        return AnsatzSpec(
            self.n_qubits, topology, self.entanglers, self.measured, self.dressing_order
        )

    def block_offsets(self) -> list[int]:
        offs, pos = [], 0
        for kind in self.entanglers:
            offs.append(pos)
            pos += 4 * ZYZ + ENTANGLER_ARITY[kind]
        offs.append(pos)
        return offs

    @property
    def n_params(self) -> int:
        return self.block_offsets()[-1] + ZYZ

    def block_order(self) -> list[int]:
        """Block indices (block p acts on qubits p, p+1) in application order."""
        nb = self.n_qubits - 1
        if self.topology == "chain":
            return list(range(nb))
        return list(range(0, nb, 2)) + list(range(1, nb, 2))

    def layers(self) -> list[list[int]]:
        if self.topology == "chain":
            return [[p] for p in range(self.n_qubits - 1)]
        nb = self.n_qubits - 1
        return [x for x in (list(range(0, nb, 2)), list(range(1, nb, 2))) if x]


# ----------------------------------------------------------------------------- primitive ops


@dataclass
class _Op:
    kind: str  # ry, rz, phase, cnot, xx, yy, zz
    qubits: tuple
    angle: float = 0.0
    param: int | None = None
    coef: float = 1.0
    enc: int | None = None  # encoding op: per-sample angle column


# two-term rules: df/da = factor * (f(a + shift) - f(a - shift))
_SHIFT_RULE = {"ry": (math.pi / 2, 0.5), "rz": (math.pi / 2, 0.5), "xx": (math.pi / 4, 1.0),
               "yy": (math.pi / 4, 1.0), "zz": (math.pi / 4, 1.0)}


def _zyz_ops(q, params, base):
    p, z1, y, z2 = (float(params[base + k]) for k in range(4))
    # U = e^{i p} R_Z(z1) R_Y(y) R_Z(z2): rightmost factor acts first
    return [
        _Op("rz", (q,), z2, base + 3),
        _Op("ry", (q,), y, base + 2),
        _Op("rz", (q,), z1, base + 1),
        _Op("phase", (), p, base + 0),
    ]


def _entangler_ops(kind, i, j, params, base):
    if kind == "cnot":
        return [_Op("cnot", (i, j))]
    if kind == "crz":
        t = float(params[base])
        # CRZ(t) = exp(-i t/4 Z_j) exp(+i t/4 Z_i Z_j)
        return [_Op("rz", (j,), t / 2, base, 0.5), _Op("zz", (i, j), -t / 4, base, -0.25)]
    return [_Op(k, (i, j), float(params[base + n]), base + n) for n, k in enumerate(("xx", "yy", "zz"))]


def _compile(spec: AnsatzSpec, params) -> list[_Op]:
    params = np.asarray(params, dtype=np.float64).ravel()
    if params.size != spec.n_params:
        raise ConfigError(f"ansatz expects {spec.n_params} parameters, got {params.size}")
    offs = spec.block_offsets()
    ops: list[_Op] = []
    for p in spec.block_order():
        i, j, base = p, p + 1, offs[p]
        left = _zyz_ops(i, params, base) + _zyz_ops(j, params, base + ZYZ)
        right = _zyz_ops(i, params, base + 2 * ZYZ) + _zyz_ops(j, params, base + 3 * ZYZ)
        ent = _entangler_ops(spec.entanglers[p], i, j, params, base + 4 * ZYZ)
        if spec.dressing_order == "right-first":
            ops += right + ent + left
        else:
            ops += left + ent + right
    ops += _zyz_ops(spec.n_qubits - 1, params, offs[-1])
    return ops


def _bits(n):
    idx = np.arange(2**n)
    return [((idx >> q) & 1) for q in range(n)]


class _Kernel:
    """Gate application on stacked states of shape (K, B, 2**n)."""

    def __init__(self, n):
        self.n = n
        self.sign = [1.0 - 2.0 * b for b in _bits(n)]

    def one(self, st, u, q):
        k, b, dim = st.shape
        hi, lo = 2 ** (self.n - 1 - q), 2**q
        v = st.reshape(k, b, hi, 2, lo)
        if u.ndim == 2:
            out = np.einsum("ij,kbhjl->kbhil", u, v)
        else:
            out = np.einsum("bij,kbhjl->kbhil", u, v)
        return out.reshape(k, b, dim)

    def two(self, st, u4, i, j):
        k, b, dim = st.shape
        n = self.n
        v = st.reshape((k, b) + (2,) * n)
        ai, aj = 2 + (n - 1 - i), 2 + (n - 1 - j)
        v = np.moveaxis(v, (ai, aj), (-2, -1))
        shp = v.shape
        v = v.reshape(shp[:-2] + (4,)) @ u4.T
        v = np.moveaxis(v.reshape(shp), (-2, -1), (ai, aj))
        return np.ascontiguousarray(v).reshape(k, b, dim)

    def diag(self, st, phases):
        return st * phases

    def apply(self, st, op: _Op, angle):
        if op.kind == "phase":
            return st * np.exp(1j * angle)
        if op.kind == "rz":
            s = self.sign[op.qubits[0]]
            if np.ndim(angle):
                return st * np.exp(-0.5j * np.multiply.outer(angle, s))
            return st * np.exp(-0.5j * angle * s)
        if op.kind == "ry":
            c, s_ = np.cos(np.asarray(angle) / 2), np.sin(np.asarray(angle) / 2)
            u = np.array([[c, -s_], [s_, c]], dtype=complex)
            if u.ndim == 3:
                u = np.moveaxis(u, 2, 0)
            return self.one(st, u, op.qubits[0])
        if op.kind == "zz":
            i, j = op.qubits
            return st * np.exp(-1j * angle * self.sign[i] * self.sign[j])
        if op.kind in ("xx", "yy"):
            u4 = math.cos(angle) * np.eye(4) - 1j * math.sin(angle) * _PAULI_PAIRS[op.kind]
            return self.two(st, u4, *op.qubits)
        if op.kind == "cnot":
            return self.two(st, _CNOT, *op.qubits)
        raise ConfigError(f"unknown op {op.kind!r}")

    def expect_z(self, st):
        prob = np.abs(st) ** 2
        return np.stack([prob @ s for s in self.sign], axis=-1)


def _check_qubit(n, q):
    if not 0 <= q < n:
        raise QubitIndexError(f"qubit {q} out of range for {n} qubits")


# ----------------------------------------------------------------------------- single-state API


def zero_state(n_qubits: int) -> Statevector:
    amp = np.zeros(2**n_qubits, dtype=complex)
    amp[0] = 1.0
    return Statevector(n_qubits, amp)


def encoding_angles(h, weights, bias) -> np.ndarray:
    """Rotation angles ``W h + b`` for one feature vector or a batch of them."""
    h = np.asarray(getattr(h, "values", h), dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != h.shape[-1] or bias.shape != (weights.shape[0],):
        raise DimensionError(
            f"projection {weights.shape} / bias {bias.shape} incompatible with features {h.shape}"
        )
    if not np.all(np.isfinite(h)):
        raise NumericError("encode_features: non-finite feature")
    return h @ weights.T + bias


def _product_state(angles) -> np.ndarray:
    """Amplitudes of (x)_j R_Y(theta_j)|0> for angles of shape (B, n)."""
    angles = np.atleast_2d(angles)
    b, n = angles.shape
    amp = np.ones((b, 1), dtype=complex)
    for j in range(n - 1, -1, -1):
        local = np.stack([np.cos(angles[:, j] / 2), np.sin(angles[:, j] / 2)], axis=1)
        # qubit j is bit j; higher qubits are outer
        amp = (amp[:, :, None] * local[:, None, :]).reshape(b, -1)
    return amp


def encode_features(h, weights, bias, n_qubits: int) -> Statevector:
    angles = encoding_angles(h, weights, bias)
    if angles.shape[-1] != n_qubits:
        raise DimensionError(f"projection gives {angles.shape[-1]} angles for {n_qubits} qubits")
    return Statevector(n_qubits, _product_state(angles[None])[0])


def _single(state: Statevector):
    return state.amplitudes.reshape(1, 1, -1).astype(complex)


def apply_zyz(state: Statevector, qubit, theta_p, theta_z1, theta_y, theta_z2) -> Statevector:
    _check_qubit(state.n_qubits, qubit)
    kern = _Kernel(state.n_qubits)
    st = _single(state)
    for op in _zyz_ops(qubit, [theta_p, theta_z1, theta_y, theta_z2], 0):
        st = kern.apply(st, op, op.angle)
    return Statevector(state.n_qubits, st.reshape(-1))


def apply_entangler(state: Statevector, pair, kind, params=()) -> Statevector:
    i, j = pair
    _check_qubit(state.n_qubits, i)
    _check_qubit(state.n_qubits, j)
    if i == j:
        raise ConfigError("entangler needs two distinct qubits")
    if kind not in ENTANGLER_ARITY:
        raise ConfigError(f"unknown entangler {kind!r}")
    params = np.atleast_1d(np.asarray(params, dtype=np.float64))
    if params.size != ENTANGLER_ARITY[kind]:
        raise ConfigError(f"{kind} takes {ENTANGLER_ARITY[kind]} parameters, got {params.size}")
    kern = _Kernel(state.n_qubits)
    st = _single(state)
    for op in _entangler_ops(kind, i, j, params, 0):
        st = kern.apply(st, op, op.angle)
    return Statevector(state.n_qubits, st.reshape(-1))


def run_ansatz(state: Statevector, spec: AnsatzSpec, params) -> Statevector:
    if state.n_qubits != spec.n_qubits:
        raise ConfigError("state and ansatz qubit counts differ")
    kern = _Kernel(spec.n_qubits)
    st = _single(state)
    for op in _compile(spec, params):
        st = kern.apply(st, op, op.angle)
    return Statevector(spec.n_qubits, st.reshape(-1))


def expect_z(state: Statevector, qubit: int) -> float:
    _check_qubit(state.n_qubits, qubit)
    return float(_Kernel(state.n_qubits).expect_z(state.amplitudes[None])[0, qubit])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def readout(expect, head: ReadoutHead):
    expect = np.asarray(expect, dtype=np.float64)
    if expect.shape[-1] != head.weights.size:
        raise DimensionError(f"{expect.shape[-1]} expectations for {head.weights.size} weights")
    return _sigmoid(expect @ head.weights + head.bias)


# ----------------------------------------------------------------------------- batched evaluation


def _sweep(kern, ops, enc_ops, angles, requests):
    """Run encoding + ansatz once, spawning a shifted copy for each (op_index, delta).

    ``op_index`` counts encoding ops first. Returns the final main state
    (B, dim) and the final shifted states (len(requests), B, dim).
    """
    b = angles.shape[0]
    n = kern.n
    all_ops = enc_ops + ops
    main = np.zeros((1, b, 2**n), dtype=complex)
    main[0, :, 0] = 1.0
    by_op: dict[int, list[int]] = {}
    for r, (k, _) in enumerate(requests):
        by_op.setdefault(k, []).append(r)
    copies = np.zeros((0, b, 2**n), dtype=complex)
    order: list[int] = []
    for k, op in enumerate(all_ops):
        base = angles[:, op.enc] if op.enc is not None else op.angle
        if copies.shape[0]:
            copies = kern.apply(copies, op, base)
        if k in by_op:
            new = [kern.apply(main, op, base + requests[r][1]) for r in by_op[k]]
            copies = np.concatenate([copies] + new, axis=0)
            order += by_op[k]
        main = kern.apply(main, op, base)
    out = np.empty_like(copies)
    out[np.asarray(order, dtype=np.int64)] = copies
    return main[0], out


def _enc_ops(n):
    return [_Op("ry", (j,), 0.0, None, 1.0, enc=j) for j in range(n)]


def expectations(spec: AnsatzSpec, params, angles) -> np.ndarray:
    """Z expectations on the measured qubits, shape (B, len(measured))."""
    angles = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    kern = _Kernel(spec.n_qubits)
    final, _ = _sweep(kern, _compile(spec, params), _enc_ops(spec.n_qubits), angles, [])
    return kern.expect_z(final)[:, list(spec.measured)]


def expectation_grads(spec: AnsatzSpec, params, angles, chunk_amplitudes: int = 1 << 22):
    """Parameter-shift derivatives of every measured Z expectation.

    Returns ``(E, dE_dparams, dE_dangles)`` with shapes (B, M), (B, M, P) and
    (B, M, n_qubits), where ``angles`` are the encoding rotation angles.
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=np.float64))
    b = angles.shape[0]
    n = spec.n_qubits
    kern = _Kernel(n)
    ops = _compile(spec, params)
    enc = _enc_ops(n)
    meas = list(spec.measured)

    # (op_index, +delta, -delta, scale, target) ; target = ("p", idx) or ("a", qubit)
    plan = []
    for j in range(n):
        shift, fac = _SHIFT_RULE["ry"]
        plan.append((j, shift, fac, ("a", j)))
    for k, op in enumerate(ops):
        if op.param is None or op.kind in ("phase", "cnot"):
            continue
        shift, fac = _SHIFT_RULE[op.kind]
        plan.append((n + k, shift, fac * op.coef, ("p", op.param)))

    d_params = np.zeros((b, len(meas), spec.n_params))
    d_angles = np.zeros((b, len(meas), n))
    per_chunk = max(1, chunk_amplitudes // (2 * b * 2**n))
    final = None
    for start in range(0, len(plan), per_chunk):
        part = plan[start:start + per_chunk]
        reqs = []
        for k, shift, _, _ in part:
            reqs += [(k, shift), (k, -shift)]
        final, shifted = _sweep(kern, ops, enc, angles, reqs)
        ez = kern.expect_z(shifted)[..., meas]  # (R, B, M)
        for r, (_, _, fac, (kind, idx)) in enumerate(part):
            diff = fac * (ez[2 * r] - ez[2 * r + 1])
            if kind == "p":
                d_params[:, :, idx] += diff
            else:
                d_angles[:, :, idx] += diff
    if final is None:
        final, _ = _sweep(kern, ops, enc, angles, [])
    e = kern.expect_z(final[None])[0][:, meas]
    return e, d_params, d_angles


def param_shift_grad(spec: AnsatzSpec, params, angles, head: ReadoutHead):
    """Readout probability and its gradient w.r.t. the variational parameters.

    Expectation derivatives come from the shift rule; the sigmoid head is
    chained analytically. Returns ``(p, dp_dparams)`` with shapes (B,), (B, P).
    """
    e, de, _ = expectation_grads(spec, params, angles)
    p = readout(e, head)
    dz = p * (1.0 - p)
    return p, dz[:, None] * np.einsum("m,bmp->bp", head.weights, de)


# ----------------------------------------------------------------------------- Trotter probe


def _check_hermitian(m, name):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square")
    if np.linalg.norm(m - m.conj().T) > 1e-10:
        raise NumericError(f"{name} is not Hermitian")
    return m


def trotter_discrepancy(a, b, tau: float) -> float:
    """Spectral norm of exp(-i tau (a+b)) - exp(-i tau a) exp(-i tau b)."""
    a = _check_hermitian(a, "a")
    b = _check_hermitian(b, "b")
    if a.shape != b.shape:
        raise DimensionError("generators differ in dimension")
    if tau == 0:
        return 0.0
    lhs = expm(-1j * tau * (a + b))
    rhs = expm(-1j * tau * a) @ expm(-1j * tau * b)
    return float(np.linalg.norm(lhs - rhs, 2))


def fit_loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares fit of log y = slope * log x + c. Returns (slope, exp(c))."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise ConfigError("need at least 3 points to fit a slope")
    if np.any(y <= 0):
        raise NumericError("log-log fit needs strictly positive values")
    slope, icpt = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(np.exp(icpt))


def topology_discrepancy(spec: AnsatzSpec, params, angles, taus) -> np.ndarray:
    """Max over inputs of ||psi_chain - psi_brickwall|| with every parameter scaled by tau."""
    params = np.asarray(params, dtype=np.float64)
    angles = np.atleast_2d(angles)
    chain, brick = spec.with_topology("chain"), spec.with_topology("brickwall")
    kern = _Kernel(spec.n_qubits)
    enc = _enc_ops(spec.n_qubits)
    out = []
    for tau in taus:
        sc, _ = _sweep(kern, _compile(chain, tau * params), enc, angles, [])
        sb, _ = _sweep(kern, _compile(brick, tau * params), enc, angles, [])
        out.append(float(np.max(np.linalg.norm(sc - sb, axis=1))))
    return np.asarray(out)


# ----------------------------------------------------------------------------- circuit description file


def write_circuit(spec: AnsatzSpec, path):
    """Circuit description text file: one ``key = value`` per line, version first."""
    lines = [
        f"version = {CIRCUIT_FORMAT_VERSION}",
        f"n_qubits = {spec.n_qubits}",
        f"topology = {spec.topology}",
        f"entanglers = {','.join(spec.entanglers)}",
        f"measured = {','.join(str(q) for q in spec.measured)}",
        f"dressing_order = {spec.dressing_order}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_circuit(path) -> AnsatzSpec:
    fields = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}: malformed line {raw.rstrip()!r}")
            key, value = (x.strip() for x in line.split("=", 1))
            fields[key] = value
    if fields.get("version") != str(CIRCUIT_FORMAT_VERSION):
        raise FormatError(
            f"{path}: unsupported circuit format version {fields.get('version')!r}"
        )
    try:
        n = int(fields["n_qubits"])
        ents = tuple(x for x in fields.get("entanglers", "").split(",") if x)
        measured = tuple(int(x) for x in fields.get("measured", "").split(",") if x)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    return AnsatzSpec(
        n,
        fields.get("topology", "chain"),
        ents,
        measured,
        fields.get("dressing_order", "right-first"),
    )


def spec_to_dict(spec: AnsatzSpec) -> dict:
    return {
        "n_qubits": spec.n_qubits,
        "topology": spec.topology,
        "entanglers": list(spec.entanglers),
        "measured": list(spec.measured),
        "dressing_order": spec.dressing_order,
    }


def spec_from_dict(d: dict) -> AnsatzSpec:
    return AnsatzSpec(
        int(d["n_qubits"]),
        d.get("topology", "chain"),
        tuple(d.get("entanglers", ())),
        tuple(d.get("measured", ())),
        d.get("dressing_order", "right-first"),
    )
