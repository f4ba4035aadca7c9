"""Two-stage decoupled training.

Stage one trains the MPS projector through a temporary dense head with a
softmax cross-entropy loss. Stage two freezes the projector, precomputes the
fused features once, and trains the circuit, its input projection and the
weighted Pauli-Z readout with binary cross-entropy. Both stages share global
norm clipping, cosine annealing with warm restarts, and an Adam-style step.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import mps as mpsmod
from . import vqc
from .errors import ConfigError, DimensionError, DivergenceError, LabelError, NumericError, ScheduleError
from .metrics import rates_at_threshold, ScoredSet

__all__ = [
    "TrainConfig",
    "TrainReport",
    "StageOneHead",
    "VqcModel",
    "cross_entropy",
    "bce_from_probability",
    "clip_gradient",
    "cosine_lr",
    "CosineWarmRestarts",
    "AdamState",
    "optimizer_step",
    "stage1_train",
    "stage2_train",
    "init_vqc_model",
    "vqc_predict",
    "mps_features",
]

P_CLAMP = 1e-12


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 20
    batch_size: int = 64
    lr_max: float = 1e-2
    lr_min: float = 1e-5
    restart_steps: int | None = None  # T_r; None means one epoch of steps
    restart_mult: float = 1.0
    clip: float = 1.0
    seed: int = 0
    n_classes: int = 2
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # stage one
    mode: str = "activated"
    chi_init: int = 4
    chi_set: int | None = None
    d_fused: int = 4
    center: int | None = None
    truncate_every: int = 5
    norm_eps: float = 1e-6
    init_noise: float = 0.01
    head_init: str = "zeros"
    # stage two
    n_qubits: int = 4
    topology: str = "chain"
    entangler: str = "cnot"
    data_ratio: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr_min <= self.lr_max:
            raise ConfigError("lr_min must not exceed lr_max")
        if self.restart_steps is not None and self.restart_steps < 1:
            raise ConfigError("restart_steps (T_r) must be >= 1")
        if self.restart_mult < 1:
            raise ConfigError("restart_mult must be >= 1")
        if not self.clip > 0:
            raise ConfigError("clip threshold must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.mode not in ("standard", "activated"):
            raise ConfigError("mode must be 'standard' or 'activated'")
        if self.head_init not in ("zeros", "random"):
            raise ConfigError("head_init must be 'zeros' or 'random'")
        if self.init_noise < 0:
            raise ConfigError("init_noise must be >= 0")
        if self.truncate_every < 1:
            raise ConfigError("truncate_every must be >= 1")
        if self.chi_set is not None and self.chi_set < 1:
            raise ConfigError("chi_set must be >= 1")
        if not 0 < self.data_ratio <= 1:
            raise ConfigError("data_ratio must lie in (0, 1]")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class StageOneHead:
    weights: np.ndarray  # (K, d_fused)

    @classmethod
    def zeros(cls, n_classes, d_fused):
        return cls(np.zeros((n_classes, d_fused)))

    @classmethod
    def random(cls, n_classes, d_fused, seed=0, scale=1.0):
        """Gaussian head; needed in standard mode, where a zero head is a saddle."""
        return cls(scale * np.random.default_rng(seed).standard_normal((n_classes, d_fused)))


@dataclass
class TrainReport:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoints: list = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([s["loss"] for s in self.steps])

    def max_loss_jump(self) -> float:
        x = self.losses()
        return float(np.max(np.abs(np.diff(x)))) if x.size > 1 else 0.0


# ----------------------------------------------------------------------------- losses and schedule


def cross_entropy(logits, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.size:
        raise LabelError(f"label {label} outside [0, {logits.size})")
    if not np.all(np.isfinite(logits)):
        raise NumericError("cross_entropy: non-finite logits")
    z = logits - logits.max()
    return float(np.log(np.sum(np.exp(z))) - z[label])


def bce_from_probability(p, label):
    p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def clip_gradient(g, delta: float, step: int | None = None):
    g = np.asarray(g, dtype=np.float64)
    if delta <= 0:
        raise ConfigError("clip threshold must be > 0")
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient at step {step}")
    norm = float(np.linalg.norm(g))
    if norm > delta:
        return delta * g / norm
    return g


def cosine_lr(t: float, period: float, lr_min: float, lr_max: float) -> float:
    if t < 0 or t > period:
        raise ScheduleError(f"step {t} outside the cycle [0, {period}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / period))


class CosineWarmRestarts:
    """Step counter over restart cycles; ``next()`` returns the rate for the current step."""

    def __init__(self, period: int, lr_min: float, lr_max: float, mult: float = 1.0):
        self.period = period
        self.lr_min, self.lr_max, self.mult = lr_min, lr_max, mult
        self.t = 0

    def next(self) -> float:
        if self.t > self.period:
            self.t = 0
            self.period = max(1, int(round(self.period * self.mult)))
        lr = cosine_lr(self.t, self.period, self.lr_min, self.lr_max)
        self.t += 1
        return lr


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def optimizer_step(params, grads, state: AdamState, lr: float, mode: str = "adam",
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One update; returns ``(new_params, new_state)``. ``mode='sgd'`` is plain descent."""
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise DimensionError(f"shape mismatch {np.shape(p)} vs {np.shape(g)}")
    if mode == "sgd":
        return [p - lr * g for p, g in zip(params, grads)], state
    t = state.t + 1
    m = [beta1 * mi + (1 - beta1) * g for mi, g in zip(state.m, grads)]
    v = [beta2 * vi + (1 - beta2) * g * g for vi, g in zip(state.v, grads)]
    c1, c2 = 1 - beta1**t, 1 - beta2**t
    new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t)


def _flat_norm(grads) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def _clip_all(grads, delta, step):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at step {step}")
    norm = _flat_norm(grads)
    if norm > delta:
        return [g * (delta / norm) for g in grads], norm
    return list(grads), norm


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _acer_05(prob, labels) -> float:
    labels = np.asarray(labels)
    if labels.min() == labels.max():
        return float("nan")
    return rates_at_threshold(ScoredSet(prob, labels), 0.5)[2]


# ----------------------------------------------------------------------------- stage one


def _set_mps_params(mps, flat_params):
    out = mps.copy()
    n = mps.length
    out.sites = list(flat_params[:n])
    if mps.mode == "activated":
        out.biases = list(flat_params[n:2 * n])
        out.head = flat_params[2 * n]
    return out


def stage_one_probability(mps, head: StageOneHead, phis, eps=mpsmod.DEFAULT_EPS):
    h = mpsmod.forward_batch(mps, phis, eps)
    logits = h @ head.weights.T
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p


def stage1_train(mps, head: StageOneHead | None, features, labels, config: TrainConfig,
                 log=None):
    """Train the projector and the temporary head. Returns ``(mps, head, TrainReport)``."""
    if config.stage != 1:
        raise ConfigError("stage1_train needs config.stage == 1")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        raise ConfigError("empty training set")
    if np.any((labels < 0) | (labels >= config.n_classes)):
        raise LabelError("labels outside [0, n_classes)")
    if head is None:
        head = StageOneHead.zeros(config.n_classes, mps.d_fused)
    phis = mpsmod.angle_encode_batch(features)
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = math.ceil(n / config.batch_size)
    sched = CosineWarmRestarts(config.restart_steps or steps_per_epoch, config.lr_min,
                               config.lr_max, config.restart_mult)
    report = TrainReport()
    t0 = time.perf_counter()
    mps = mps.copy()
    w = head.weights.copy()
    params = mps.parameters() + [w]
    state = AdamState.like(params)
    last_good = (mps.copy(), StageOneHead(w.copy()), 0)
    step = 0
    for epoch in range(config.epochs):
        for idx in _batches(n, config.batch_size, rng):
            loss, g = mpsmod.grad_mps(mps, phis[idx], labels[idx], w, config.norm_eps)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step}", step, last_good)
            grads = g.sites + ((g.biases + [g.head]) if mps.mode == "activated" else []) + [g.head_w]
            clipped, pre = _clip_all(grads, config.clip, step)
            lr = sched.next()
            params, state = optimizer_step(params, clipped, state, lr, config.optimizer,
                                           config.beta1, config.beta2, config.adam_eps)
            mps = _set_mps_params(mps, params[:-1])
            w = params[-1]
            report.steps.append({"step": step, "epoch": epoch, "loss": loss, "lr": lr,
                                 "grad_norm_pre": pre,
                                 "grad_norm_post": min(pre, config.clip)})
            step += 1
        if mps.mode == "standard":
            mps = mpsmod.canonicalize(mps)
            if config.chi_set is not None and (epoch + 1) % config.truncate_every == 0:
                mps, _ = mpsmod.sweep_truncate(mps, config.chi_set)
            new_params = mps.parameters() + [w]
            if any(a.shape != b.shape for a, b in zip(new_params, params)):
                state = AdamState.like(new_params)
            params = new_params
        prob = stage_one_probability(mps, StageOneHead(w), phis, config.norm_eps)
        ep_loss = float(-np.mean(np.log(np.clip(prob[np.arange(n), labels], 1e-300, None))))
        if not math.isfinite(ep_loss):
            raise DivergenceError(f"non-finite loss after epoch {epoch}", step, last_good)
        report.epochs.append({"epoch": epoch, "loss": ep_loss,
                              "acer": _acer_05(prob[:, 1], labels),
                              "bond_max": max(mps.bond_dims())})
        last_good = (mps.copy(), StageOneHead(w.copy()), epoch + 1)
        if log:
            log(f"stage1 epoch {epoch}: loss={ep_loss:.5f} acer={report.epochs[-1]['acer']:.4f}")
    report.wall_clock = time.perf_counter() - t0
    return mps, StageOneHead(w), report


# ----------------------------------------------------------------------------- stage two


@dataclass
class VqcModel:
    spec: vqc.AnsatzSpec
    params: np.ndarray
    proj_w: np.ndarray  # (n_qubits, d_fused)
    proj_b: np.ndarray  # (n_qubits,)
    readout_w: np.ndarray  # (len(measured),)
    readout_b: float = 0.0
    feat_mean: np.ndarray | None = None
    feat_scale: np.ndarray | None = None

    def head(self) -> vqc.ReadoutHead:
        return vqc.ReadoutHead(self.readout_w, self.readout_b, self.spec.measured)

    def standardize(self, h):
        h = np.asarray(h, dtype=np.float64)
        if self.feat_mean is None:
            return h
        return (h - self.feat_mean) / self.feat_scale

    def arrays(self):
        out = [("params", self.params), ("proj_w", self.proj_w), ("proj_b", self.proj_b),
               ("readout_w", self.readout_w), ("readout_b", np.array([self.readout_b]))]
        if self.feat_mean is not None:
            out += [("feat_mean", self.feat_mean), ("feat_scale", self.feat_scale)]
        return out

    @classmethod
    def from_arrays(cls, spec, arrays):
        return cls(spec, arrays["params"], arrays["proj_w"], arrays["proj_b"],
                   arrays["readout_w"], float(arrays["readout_b"][0]),
                   arrays.get("feat_mean"), arrays.get("feat_scale"))


def init_vqc_model(spec: vqc.AnsatzSpec, d_fused: int, seed: int = 0, features=None,
                   param_scale: float = 0.1) -> VqcModel:
    """Small random circuit angles, a random input projection, zero readout head.

    When ``features`` is given, their per-dimension mean and spread are stored
    and applied before the projection.
    """
    rng = np.random.default_rng(seed)
    params = param_scale * rng.standard_normal(spec.n_params)
    proj_w = rng.standard_normal((spec.n_qubits, d_fused)) / math.sqrt(d_fused)
    proj_b = np.full(spec.n_qubits, math.pi / 2)
    mean = scale = None
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        mean = features.mean(axis=0)
        scale = features.std(axis=0) + 1e-8
    return VqcModel(spec, params, proj_w, proj_b, np.zeros(len(spec.measured)), 0.0, mean, scale)


def vqc_predict(model: VqcModel, h) -> np.ndarray:
    hs = model.standardize(h)
    angles = vqc.encoding_angles(hs, model.proj_w, model.proj_b)
    e = vqc.expectations(model.spec, model.params, angles)
    return vqc.readout(e, model.head())


def mps_features(mps, features, eps=mpsmod.DEFAULT_EPS, chunk: int = 4096) -> np.ndarray:
    """Fused features of the frozen projector for raw (n, L) feature rows."""
    features = np.asarray(features, dtype=np.float64)
    out = [mpsmod.forward_batch(mps, mpsmod.angle_encode_batch(features[i:i + chunk]), eps)
           for i in range(0, features.shape[0], chunk)]
    return np.concatenate(out, axis=0)


def _stage2_loss_grad(model: VqcModel, hs, y):
    angles = vqc.encoding_angles(hs, model.proj_w, model.proj_b)
    e, de_dp, de_da = vqc.expectation_grads(model.spec, model.params, angles)
    z = e @ model.readout_w + model.readout_b
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    loss = float(np.mean(bce_from_probability(p, y)))
    b = y.size
    gz = (p - y) / b
    g_rw = e.T @ gz
    g_rb = np.array([gz.sum()])
    g_params = np.einsum("b,m,bmp->p", gz, model.readout_w, de_dp)
    g_angles = np.einsum("b,m,bmq->bq", gz, model.readout_w, de_da)
    g_pw = g_angles.T @ hs
    g_pb = g_angles.sum(axis=0)
    return loss, [g_params, g_pw, g_pb, g_rw, g_rb], p


def stage2_train(mps, model: VqcModel, features, labels, config: TrainConfig, log=None,
                 fused=None):
    """Train circuit, projection and readout on frozen-projector features.

    ``fused`` may carry precomputed features; otherwise they are computed once
    from ``features``. Returns ``(model, TrainReport)``; ``mps`` is never modified.
    """
    if config.stage != 2:
        raise ConfigError("stage2_train needs config.stage == 2")
    if mps is None and fused is None:
        raise ConfigError("stage two needs a trained stage-one projector")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ConfigError("empty training set")
    h = fused if fused is not None else mps_features(mps, features, config.norm_eps)
    hs = model.standardize(h)
    n = labels.size
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = math.ceil(n / config.batch_size)
    sched = CosineWarmRestarts(config.restart_steps or steps_per_epoch, config.lr_min,
                               config.lr_max, config.restart_mult)
    params = [model.params.copy(), model.proj_w.copy(), model.proj_b.copy(),
              model.readout_w.copy(), np.array([model.readout_b])]
    state = AdamState.like(params)
    report = TrainReport()
    t0 = time.perf_counter()
    step = 0
    cur = model
    for epoch in range(config.epochs):
        for idx in _batches(n, config.batch_size, rng):
            loss, grads, _ = _stage2_loss_grad(cur, hs[idx], labels[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step}", step, cur)
            clipped, pre = _clip_all(grads, config.clip, step)
            lr = sched.next()
            params, state = optimizer_step(params, clipped, state, lr, config.optimizer,
                                           config.beta1, config.beta2, config.adam_eps)
            cur = dataclasses.replace(cur, params=params[0], proj_w=params[1], proj_b=params[2],
                                      readout_w=params[3], readout_b=float(params[4][0]))
            report.steps.append({"step": step, "epoch": epoch, "loss": loss, "lr": lr,
                                 "grad_norm_pre": pre,
                                 "grad_norm_post": min(pre, config.clip)})
            step += 1
        prob = vqc.readout(
            vqc.expectations(cur.spec, cur.params,
                             vqc.encoding_angles(hs, cur.proj_w, cur.proj_b)), cur.head())
        report.epochs.append({"epoch": epoch,
                              "loss": float(np.mean(bce_from_probability(prob, labels))),
                              "acer": _acer_05(prob, labels)})
        if log:
            log(f"stage2 epoch {epoch}: loss={report.epochs[-1]['loss']:.5f} "
                f"acer={report.epochs[-1]['acer']:.4f}")
    report.wall_clock = time.perf_counter() - t0
    return cur, report
