"""Synthetic tri-modal embeddings, the MMEB1 file format, and train/test splitting."""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, RangeError, TruncatedFileError

__all__ = [
    "EmbeddingDataset",
    "SplitSpec",
    "gen_synthetic",
    "save_embeddings",
    "load_embeddings",
    "split",
    "nested_subset",
]

MAGIC = b"MMEB"
VERSION = 1
MODALITIES = ("rgb", "depth", "ir")
_HEADER = struct.Struct("<4sBQQ")
# largest float32 strictly below 1
_F32_EDGE = np.nextafter(np.float32(1.0), np.float32(0.0))


@dataclass
class EmbeddingDataset:
    rgb: np.ndarray
    depth: np.ndarray
    ir: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rgb, self.depth, self.ir = (
            np.ascontiguousarray(x, dtype=np.float32) for x in (self.rgb, self.depth, self.ir)
        )
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        n = self.labels.shape[0]
        if n == 0:
            raise ConfigError("dataset must contain at least one row")
        for name in MODALITIES:
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] != n or arr.shape[1] != self.rgb.shape[1]:
                raise DimensionError(f"{name} block has shape {arr.shape}")
        if np.any(self.labels > 1):
            raise ConfigError("labels must be 0 (spoof) or 1 (live)")

    @property
    def d_emb(self) -> int:
        return self.rgb.shape[1]

    def __len__(self):
        return self.labels.shape[0]

    def features(self) -> np.ndarray:
        """Concatenated (rgb, depth, ir) rows promoted to float64, shape (n, 3 d_emb)."""
        return np.concatenate([self.rgb, self.depth, self.ir], axis=1).astype(np.float64)

    def subset(self, idx) -> "EmbeddingDataset":
        idx = np.asarray(idx, dtype=np.int64)
        meta = dict(self.meta)
        return EmbeddingDataset(self.rgb[idx], self.depth[idx], self.ir[idx], self.labels[idx], meta)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    test: float = 0.2
    seed: int = 0
    stratified: bool = True
    sweep: bool = False

    def __post_init__(self):
        if self.train <= 0 or self.test < 0 or self.train + self.test > 1 + 1e-12:
            raise ConfigError(
                f"split fractions must be positive with sum <= 1, got {self.train}, {self.test}"
            )
        if self.test == 0 and not self.sweep:
            raise ConfigError("an empty test split is only allowed in sweep mode")


def gen_synthetic(
    n_samples: int,
    d_emb: int,
    rho: float = 0.5,
    margin: float = 2.0,
    sigma: float = 0.3,
    seed: int = 0,
    informative: int | None = None,
    latent_scale: float = 1.0,
) -> EmbeddingDataset:
    """Tri-modal embeddings with a tunable shared cross-modal latent.

    Each modality has ``informative`` label-carrying coordinates whose
    pre-activation is ``+-margin/2`` times a fixed random sign, plus noise.
    The remaining coordinates carry a nuisance latent mixing a shared
    component (weight ``sqrt(rho)``) and a modality-private one (weight
    ``sqrt(1 - rho)``), so matched nuisance coordinates across modalities
    correlate with coefficient ``rho`` before squashing. Everything passes
    through tanh.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if d_emb < 1:
        raise ConfigError("d_emb must be >= 1")
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"rho must lie in [0, 1), got {rho}")
    if margin < 0 or sigma < 0:
        raise ConfigError("margin and sigma must be >= 0")
    if informative is None:
        informative = max(1, d_emb // 4)
    if not 1 <= informative <= d_emb:
        raise ConfigError(f"informative must lie in [1, {d_emb}]")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % 2
    labels = labels[rng.permutation(n_samples)]
    cls = 2.0 * labels - 1.0
    signs = rng.choice([-1.0, 1.0], size=(3, informative))
    shared = rng.standard_normal((n_samples, d_emb))
    blocks = []
    for m in range(3):
        private = rng.standard_normal((n_samples, d_emb))
        pre = latent_scale * (np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * private)
        pre[:, :informative] = 0.5 * margin * cls[:, None] * signs[m][None, :]
        pre += sigma * rng.standard_normal((n_samples, d_emb))
        out = np.tanh(pre).astype(np.float32)
        blocks.append(np.clip(out, -_F32_EDGE, _F32_EDGE))
    meta = {
        "generator": "gen_synthetic",
        "n_samples": n_samples,
        "d_emb": d_emb,
        "rho": rho,
        "margin": margin,
        "sigma": sigma,
        "seed": seed,
        "informative": informative,
        "latent_scale": latent_scale,
        "provenance": f"synthetic:seed={seed}",
    }
    return EmbeddingDataset(blocks[0], blocks[1], blocks[2], labels, meta)


# ----------------------------------------------------------------------------- file formats


def _check_range(feats: np.ndarray, where: str):
    bad = np.argwhere(~(np.abs(feats) < 1.0))
    if bad.size:
        r, c = (int(x) for x in bad[0])
        raise RangeError(
            f"{where}: value {feats[r, c]!r} at row {r}, column {c} is outside (-1, 1)", r, c
        )


def _to_bytes(ds: EmbeddingDataset) -> bytes:
    feats = np.concatenate([ds.rgb, ds.depth, ds.ir], axis=1).astype("<f4")
    return (
        _HEADER.pack(MAGIC, VERSION, len(ds), ds.d_emb)
        + ds.labels.astype(np.uint8).tobytes()
        + feats.tobytes(order="C")
    )


def _csv_text(ds: EmbeddingDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label"] + [f"{m}_{k}" for m in MODALITIES for k in range(ds.d_emb)])
    feats = np.concatenate([ds.rgb, ds.depth, ds.ir], axis=1)
    for lab, row in zip(ds.labels, feats):
        w.writerow([int(lab)] + [repr(float(x)) for x in row])
    return buf.getvalue()


def save_embeddings(ds: EmbeddingDataset, path, fmt: str | None = None):
    """Write MMEB1 (binary) or CSV, chosen by ``fmt`` or the file suffix. Atomic."""
    path = os.fspath(path)
    fmt = fmt or ("csv" if path.endswith(".csv") else "bin")
    if fmt == "bin":
        payload = _to_bytes(ds)
    elif fmt == "csv":
        payload = _csv_text(ds).encode("utf-8")
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _load_bin(raw: bytes, path) -> EmbeddingDataset:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, n, d = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    need = _HEADER.size + n + 4 * n * 3 * d
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: payload truncated ({len(raw)} of {need} bytes)")
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes")
    off = _HEADER.size
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)
    feats = np.frombuffer(raw, dtype="<f4", count=n * 3 * d, offset=off + n).reshape(n, 3 * d)
    _check_range(feats, str(path))
    if np.any(labels > 1):
        r = int(np.argmax(labels > 1))
        raise RangeError(f"{path}: label {labels[r]} at row {r} is not 0/1", r, None)
    return EmbeddingDataset(
        feats[:, :d], feats[:, d:2 * d], feats[:, 2 * d:], labels.copy(),
        {"provenance": f"file:{os.path.basename(str(path))}"},
    )


def _load_csv(text: str, path) -> EmbeddingDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0] or rows[0][0] != "label":
        raise FormatError(f"{path}: CSV header must start with 'label'")
    width = len(rows[0]) - 1
    if width % 3:
        raise FormatError(f"{path}: feature column count {width} is not a multiple of 3")
    d = width // 3
    expected = ["label"] + [f"{m}_{k}" for m in MODALITIES for k in range(d)]
    if rows[0] != expected:
        raise FormatError(f"{path}: unexpected CSV header")
    body = rows[1:]
    if not body:
        raise ConfigError(f"{path}: no data rows")
    labels = np.empty(len(body), dtype=np.uint8)
    feats = np.empty((len(body), width), dtype=np.float32)
    for r, row in enumerate(body):
        if len(row) != width + 1:
            raise TruncatedFileError(f"{path}: row {r} has {len(row)} fields, expected {width + 1}")
        labels[r] = int(row[0])
        feats[r] = np.asarray([float(x) for x in row[1:]], dtype=np.float32)
    _check_range(feats, str(path))
    return EmbeddingDataset(feats[:, :d], feats[:, d:2 * d], feats[:, 2 * d:], labels,
                            {"provenance": f"file:{os.path.basename(str(path))}"})


def load_embeddings(path) -> EmbeddingDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] == b"label":
        return _load_csv(raw.decode("utf-8"), path)
    return _load_bin(raw, path)


# ----------------------------------------------------------------------------- splitting


def split(ds: EmbeddingDataset, spec: SplitSpec):
    """Disjoint train/test index partition. Returns ``(train_idx, test_idx)``."""
    n = len(ds)
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        train, test = [], []
        for c in (0, 1):
            idx = np.flatnonzero(ds.labels == c)
            idx = idx[rng.permutation(idx.size)]
            n_tr = int(round(spec.train * idx.size))
            n_te = int(round(spec.test * idx.size))
            n_te = min(n_te, idx.size - n_tr)
            train.append(idx[:n_tr])
            test.append(idx[n_tr:n_tr + n_te])
        train_idx = np.sort(np.concatenate(train))
        test_idx = np.sort(np.concatenate(test))
    else:
        perm = rng.permutation(n)
        n_tr = int(round(spec.train * n))
        n_te = min(int(round(spec.test * n)), n - n_tr)
        train_idx, test_idx = np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_te])
    if train_idx.size == 0 or (test_idx.size == 0 and not spec.sweep):
        raise ConfigError(f"split {spec} leaves an empty partition on {n} rows")
    return train_idx, test_idx


def nested_subset(idx, ratio: float, seed: int = 0) -> np.ndarray:
    """First ``ratio`` of a seeded shuffle of ``idx``; nested across ratios for one seed."""
    if not 0 < ratio <= 1:
        raise ConfigError(f"data ratio must lie in (0, 1], got {ratio}")
    idx = np.asarray(idx, dtype=np.int64)
    perm = np.random.default_rng(seed).permutation(idx.size)
    k = max(1, int(round(ratio * idx.size)))
    return np.sort(idx[perm[:k]])
