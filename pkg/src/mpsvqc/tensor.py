"""Dense labeled tensors and the handful of kernels the rest of the package needs.

Indices are addressed by string labels rather than position. ``contract``
pairs labels explicitly, ``svd_truncate`` and ``qr`` split a tensor into a
row-label group and a column-label group, and ``frobenius_normalize`` strips
the scale of an intermediate with an epsilon guard.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, LabelCollisionError, NumericError

__all__ = [
    "Tensor",
    "SvdResult",
    "contract",
    "svd_truncate",
    "qr",
    "frobenius_normalize",
]

_EINSUM_LETTERS = string.ascii_letters


@dataclass(frozen=True)
class Tensor:
    """Dense array whose axes carry distinct string labels."""

    data: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.complexfloating):
            data = data.astype(np.float64, copy=False)
        else:
            data = data.astype(np.complex128, copy=False)
        labels = tuple(self.labels)
        if data.ndim != len(labels):
            raise DimensionError(
                f"tensor has {data.ndim} axes but {len(labels)} labels {labels}"
            )
        if len(set(labels)) != len(labels):
            raise LabelCollisionError(f"duplicate labels in {labels}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def extent(self, label: str) -> int:
        return self.data.shape[self.axis(label)]

    def axis(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DimensionError(f"label {label!r} not in {self.labels}") from None

    def transpose(self, labels: Sequence[str]) -> "Tensor":
        labels = tuple(labels)
        if sorted(labels) != sorted(self.labels):
            raise DimensionError(f"{labels} is not a permutation of {self.labels}")
        return Tensor(np.transpose(self.data, [self.axis(x) for x in labels]), labels)

    def relabel(self, mapping: dict[str, str]) -> "Tensor":
        return Tensor(self.data, tuple(mapping.get(x, x) for x in self.labels))

    def matrix(self, rows: Sequence[str], cols: Sequence[str]) -> np.ndarray:
        """Reshape into a matrix with ``rows`` merged (row-major) and ``cols`` merged."""
        rows, cols = tuple(rows), tuple(cols)
        t = self.transpose(rows + cols)
        nr = int(np.prod([self.extent(x) for x in rows], dtype=np.int64))
        return t.data.reshape(nr, -1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data.ravel()))


@dataclass(frozen=True)
class SvdResult:
    u: Tensor
    s: np.ndarray
    v: Tensor
    discarded_weight: float


def contract(a: Tensor, b: Tensor, pairs: Sequence[tuple[str, str]]) -> Tensor:
    """Sum over each ``(label_in_a, label_in_b)`` pair.

    The result carries the uncontracted labels of ``a`` followed by those of
    ``b``. An empty ``pairs`` gives the outer product.
    """
    pairs = list(pairs)
    a_pair = [p[0] for p in pairs]
    b_pair = [p[1] for p in pairs]
    if len(set(a_pair)) != len(a_pair) or len(set(b_pair)) != len(b_pair):
        raise LabelCollisionError(f"a label is paired twice in {pairs}")
    for la, lb in pairs:
        if a.extent(la) != b.extent(lb):
            raise DimensionError(
                f"extent mismatch on pair ({la}, {lb}): {a.extent(la)} vs {b.extent(lb)}"
            )
    out_a = [x for x in a.labels if x not in a_pair]
    out_b = [x for x in b.labels if x not in b_pair]
    out_labels = out_a + out_b
    if len(set(out_labels)) != len(out_labels):
        raise LabelCollisionError(f"surviving labels collide: {out_labels}")

    if a.data.ndim + b.data.ndim - len(pairs) > len(_EINSUM_LETTERS):
        raise DimensionError("too many indices for a single contraction")
    letters = iter(_EINSUM_LETTERS)
    sym_a = {x: next(letters) for x in a.labels}
    sym_b = {}
    for la, lb in pairs:
        sym_b[lb] = sym_a[la]
    for x in b.labels:
        if x not in sym_b:
            sym_b[x] = next(letters)
    spec = "{},{}->{}".format(
        "".join(sym_a[x] for x in a.labels),
        "".join(sym_b[x] for x in b.labels),
        "".join([sym_a[x] for x in out_a] + [sym_b[x] for x in out_b]),
    )
    return Tensor(np.einsum(spec, a.data, b.data), tuple(out_labels))


def _fix_signs(u: np.ndarray, vh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Largest-magnitude entry of each left singular vector made real positive.
    idx = np.argmax(np.abs(u), axis=0)
    pivot = u[idx, np.arange(u.shape[1])]
    mag = np.abs(pivot)
    phase = np.where(mag > 0, pivot / np.where(mag > 0, mag, 1.0), 1.0)
    u = u / phase[np.newaxis, :]
    vh = vh * phase[:, np.newaxis]
    if not np.iscomplexobj(u):
        u, vh = u.real, vh.real
    return u, vh


def svd_truncate(
    t: Tensor,
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    chi_set: int | None = None,
    bond: str = "bond",
) -> SvdResult:
    """Truncated SVD of ``t`` viewed as a (rows, cols) matrix.

    Keeps ``min(rank_extent, chi_set)`` leading singular values. ``u`` carries
    ``row_labels + (bond,)`` and ``v`` carries ``(bond,) + col_labels``.
    """
    if chi_set is not None and chi_set < 1:
        raise DimensionError(f"chi_set must be >= 1, got {chi_set}")
    row_labels, col_labels = tuple(row_labels), tuple(col_labels)
    m = t.matrix(row_labels, col_labels)
    if not np.all(np.isfinite(m)):
        raise NumericError("svd_truncate: input has non-finite entries")
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    u, vh = _fix_signs(u, vh)
    keep = len(s) if chi_set is None else min(len(s), chi_set)
    discarded = float(np.sum(s[keep:] ** 2))
    row_shape = tuple(t.extent(x) for x in row_labels)
    col_shape = tuple(t.extent(x) for x in col_labels)
    ut = Tensor(u[:, :keep].reshape(row_shape + (keep,)), row_labels + (bond,))
    vt = Tensor(vh[:keep].reshape((keep,) + col_shape), (bond,) + col_labels)
    return SvdResult(ut, s[:keep].copy(), vt, discarded)


def qr(
    t: Tensor, row_labels: Sequence[str], col_labels: Sequence[str], bond: str = "bond"
) -> tuple[Tensor, Tensor]:
    """Thin QR with the diagonal of R made nonnegative."""
    row_labels, col_labels = tuple(row_labels), tuple(col_labels)
    m = t.matrix(row_labels, col_labels)
    q, r = np.linalg.qr(m)
    d = np.sign(np.diag(r).real)
    d[d == 0] = 1.0
    q = q * d[np.newaxis, :]
    r = r * d[:, np.newaxis]
    k = q.shape[1]
    row_shape = tuple(t.extent(x) for x in row_labels)
    col_shape = tuple(t.extent(x) for x in col_labels)
    return (
        Tensor(q.reshape(row_shape + (k,)), row_labels + (bond,)),
        Tensor(r.reshape((k,) + col_shape), (bond,) + col_labels),
    )


def frobenius_normalize(t, eps: float = 1e-6):
    """Return ``t / (||t||_F + eps)`` and the pre-normalization norm.

    Works on a ``Tensor`` or a bare ndarray and returns the same kind.
    """
    if isinstance(t, Tensor):
        out, norm = frobenius_normalize(t.data, eps)
        return Tensor(out, t.labels), norm
    arr = np.asarray(t)
    norm = float(np.linalg.norm(arr.ravel()))
    return arr / (norm + eps), norm
