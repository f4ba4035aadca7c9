"""Shared two-stage pipeline used by the train, eval, sweep and compare-topologies commands.

Keeping one code path means a one-cell sweep reproduces a standalone
train-then-eval run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import datagen
from . import metrics as metricsmod
from . import mps as M
from . import trainer as T
from . import vqc as V


@dataclass
class Stage1Result:
    mps: M.MpsProjector
    head: T.StageOneHead
    report: T.TrainReport
    train_idx: np.ndarray
    test_idx: np.ndarray


@dataclass
class Stage2Result:
    model: T.VqcModel
    report: T.TrainReport
    train_idx: np.ndarray
    test_idx: np.ndarray


def split_indices(ds: datagen.EmbeddingDataset, train: float, test: float, seed: int):
    return datagen.split(ds, datagen.SplitSpec(train, test, seed))


def init_stage1(config: T.TrainConfig, length: int):
    mps = M.init_mps(length, config.chi_init, config.d_fused, config.center, config.mode,
                     config.seed, noise=config.init_noise)
    if config.head_init == "random":
        head = T.StageOneHead.random(config.n_classes, config.d_fused, config.seed)
    else:
        head = T.StageOneHead.zeros(config.n_classes, config.d_fused)
    return mps, head


def run_stage1(ds, config: T.TrainConfig, train_idx, test_idx, log=None) -> Stage1Result:
    x = ds.features()
    y = ds.labels.astype(np.int64)
    mps, head = init_stage1(config, x.shape[1])
    mps, head, report = T.stage1_train(mps, head, x[train_idx], y[train_idx], config, log)
    return Stage1Result(mps, head, report, train_idx, test_idx)


def stage1_scores(mps, head: T.StageOneHead, features, eps=M.DEFAULT_EPS) -> np.ndarray:
    """Probability of the live class under the temporary head."""
    phis = M.angle_encode_batch(features)
    return T.stage_one_probability(mps, head, phis, eps)[:, 1]


def build_spec(config: T.TrainConfig) -> V.AnsatzSpec:
    return V.AnsatzSpec.uniform(config.n_qubits, config.topology, config.entangler)


def run_stage2(mps, ds, config: T.TrainConfig, spec: V.AnsatzSpec, train_idx, test_idx,
               log=None, fused=None) -> Stage2Result:
    """Stage two on a nested ``data_ratio`` subset of the training indices."""
    x = ds.features()
    y = ds.labels.astype(np.float64)
    sub = datagen.nested_subset(train_idx, config.data_ratio, config.seed)
    h = fused if fused is not None else T.mps_features(mps, x, config.norm_eps)
    model = T.init_vqc_model(spec, mps.d_fused, config.seed, h[sub])
    model, report = T.stage2_train(mps, model, None, y[sub], config, log, fused=h[sub])
    return Stage2Result(model, report, sub, test_idx)


def vqc_scores(mps, model: T.VqcModel, features, eps=M.DEFAULT_EPS, fused=None) -> np.ndarray:
    h = fused if fused is not None else T.mps_features(mps, features, eps)
    return T.vqc_predict(model, h)


def evaluate(scores, labels, threshold=0.5, fpr_target=1e-3) -> metricsmod.MetricsReport:
    return metricsmod.evaluate(scores, labels, threshold, fpr_target)


def vqc_param_count(model: T.VqcModel) -> int:
    return int(model.params.size + model.proj_w.size + model.proj_b.size
               + model.readout_w.size + 1)
