"""Command-line entry point: ``mpsvqc <subcommand> [flags]``.

Subcommands: gen-data, train, eval, verify, compare-topologies, sweep, report.
Exit codes: 0 success, 1 runtime or check failure, 2 usage or config error.

Every run directory gets ``manifest.json`` and ``config-resolved.json``.
Primary outputs (datasets, checkpoints, CSV and metrics files) are
byte-identical across reruns with the same seed and flags; timestamps and
wall-clock figures live only in the manifest and ``*_timing.csv`` files.
Heavy modules are imported after argument parsing so ``--threads`` can set
the BLAS thread environment first.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
import time

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CLI_KEYS = ("split_train", "split_test", "threshold", "fpr_target")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


# ----------------------------------------------------------------------------- small io helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _git_blob_sha1(path) -> str:
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _write_json(path, obj):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(x):
    import numpy as np

    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _write_csv(path, header, rows):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(x) for x in r])
    os.replace(tmp, path)


def _cell(x):
    if hasattr(x, "item"):
        x = x.item()
    if isinstance(x, float):
        return repr(float(x))
    return x


def _read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """One output directory plus its manifest bookkeeping."""

    def __init__(self, args, subcommand: str, resume: bool = False):
        self.dir = args.out_dir or os.path.join("runs", subcommand)
        manifest = os.path.join(self.dir, "manifest.json")
        if os.path.exists(manifest) and not (args.force or resume):
            raise UsageError(f"{self.dir} already holds a run; pass --force or pick another --out-dir")
        os.makedirs(self.dir, exist_ok=True)
        self.args = args
        self.subcommand = subcommand
        self.started = _now()
        self.t0 = time.perf_counter()
        self.inputs: dict = {}
        self.outputs: list = []
        self.checkpoints: list = []
        self.extra: dict = {}

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def input(self, path):
        if path:
            self.inputs[os.fspath(path)] = _sha256(path)

    def output(self, name: str, checkpoint: bool = False):
        (self.checkpoints if checkpoint else self.outputs).append(name)
        return self.path(name)

    def resolved(self, config: dict):
        self.config = config
        _write_json(self.output("config-resolved.json"), config)

    def finish(self, status: int = EXIT_OK):
        files = {n: _sha256(self.path(n)) for n in self.outputs if os.path.exists(self.path(n))}
        ckpts = {n: {"sha256": _sha256(self.path(n)), "git_blob_sha1": _git_blob_sha1(self.path(n))}
                 for n in self.checkpoints if os.path.exists(self.path(n))}
        manifest = {
            "subcommand": self.subcommand,
            "argv": list(self.args.argv),
            "config": getattr(self, "config", {}),
            "seed": self.args.seed,
            "inputs": self.inputs,
            "outputs": files,
            "checkpoints": ckpts,
            "tool_version": __version__,
            "started": self.started,
            "finished": _now(),
            "wall_clock_s": round(time.perf_counter() - self.t0, 3),
            "exit_status": status,
        }
        manifest.update(self.extra)
        _write_json(self.path("manifest.json"), manifest)
        return status


# ----------------------------------------------------------------------------- config resolution


def _load_config_file(path):
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


_TRAIN_FLAGS = {
    "stage": "stage", "epochs": "epochs", "batch_size": "batch_size", "lr_max": "lr_max",
    "lr_min": "lr_min", "restart_steps": "restart_steps", "restart_mult": "restart_mult",
    "clip": "clip", "optimizer": "optimizer", "mode": "mode", "chi_init": "chi_init",
    "chi_set": "chi_set", "d_fused": "d_fused", "center": "center",
    "truncate_every": "truncate_every", "init_noise": "init_noise", "head_init": "head_init",
    "nq": "n_qubits", "topology": "topology", "entangler": "entangler",
    "data_ratio": "data_ratio",
}


def resolve_config(args, **fixed):
    """defaults < config file < CLI flags. Returns (TrainConfig, cli-level dict)."""
    from .trainer import TrainConfig

    data = _load_config_file(args.config)
    names = set(TrainConfig.__dataclass_fields__)
    unknown = sorted(set(data) - names - set(CLI_KEYS))
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    train = {k: v for k, v in data.items() if k in names}
    extra = {"split_train": 0.8, "split_test": 0.2, "threshold": 0.5, "fpr_target": 1e-3}
    extra.update({k: v for k, v in data.items() if k in CLI_KEYS})
    for flag, key in _TRAIN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            train[key] = val
    for key in CLI_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            extra[key] = val
    if args.seed is not None:
        train["seed"] = args.seed
    train.update(fixed)
    return TrainConfig.from_dict(train), extra


# ----------------------------------------------------------------------------- shared writers


def _write_report(run: Run, report, name="report.csv"):
    header = ["step", "epoch", "loss", "lr", "grad_norm_pre", "grad_norm_post"]
    _write_csv(run.output(name), header, [[s[k] for k in header] for s in report.steps])


def _write_eval(run: Run, rep, extra: dict | None = None, fpr_target=None):
    from . import plotting

    out = rep.to_json()
    if extra:
        out.update(extra)
    _write_json(run.output("metrics.json"), out)
    _write_csv(run.output("roc.csv"), ["fpr", "tpr", "threshold"], rep.roc)
    plotting.plot_roc(rep.roc, run.output("roc.png"), fpr_target)


def _load_dataset(run: Run, path):
    from .datagen import load_embeddings

    if not path:
        raise UsageError("--data is required")
    if not os.path.exists(path):
        raise UsageError(f"--data {path} does not exist")
    run.input(path)
    return load_embeddings(path)


def _save_stage1(path, res, config, extra_cfg, data_sha):
    from .checkpoint import config_hash, save_mps

    meta = {"stage": 1, "config": config.to_dict(), "cli": extra_cfg,
            "config_hash": config_hash({"train": config.to_dict(), "cli": extra_cfg}),
            "data_sha256": data_sha}
    save_mps(path, res.mps, meta, [("head_w", res.head.weights)])


def _load_stage1(run: Run, path):
    from .checkpoint import load_mps
    from .trainer import StageOneHead

    if not path:
        raise UsageError("--mps-checkpoint is required")
    if not os.path.exists(path):
        raise UsageError(f"--mps-checkpoint {path} does not exist")
    run.input(path)
    mps, meta, arrays = load_mps(path)
    head = StageOneHead(arrays["head_w"]) if "head_w" in arrays else None
    return mps, head, meta


def _save_vqc(path, model, config, mps_sum):
    from .checkpoint import save_arrays
    from .vqc import spec_to_dict

    meta = {"stage": 2, "spec": spec_to_dict(model.spec), "config": config.to_dict(),
            "mps_checksum": mps_sum}
    save_arrays(path, "vqc", meta, model.arrays())


def _load_vqc(run: Run, path):
    from .checkpoint import load_arrays
    from .errors import FormatError
    from .trainer import VqcModel
    from .vqc import spec_from_dict

    run.input(path)
    kind, meta, arrays = load_arrays(path)
    if kind != "vqc":
        raise FormatError(f"{path}: expected a vqc checkpoint, found {kind!r}")
    return VqcModel.from_arrays(spec_from_dict(meta["spec"]), arrays), meta


def _epoch_rows(report):
    return [dict(e) for e in report.epochs]


# ----------------------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    from .datagen import gen_synthetic, save_embeddings

    if args.out_dir is None and args.out:
        args.out_dir = os.path.dirname(os.path.abspath(args.out))
    if args.out and os.path.exists(args.out) and not args.force:
        raise UsageError(f"{args.out} exists; pass --force to overwrite")
    seed = 0 if args.seed is None else args.seed
    ds = gen_synthetic(args.n, args.d_emb, args.rho, args.margin, args.sigma, seed,
                       args.informative, args.latent_scale)
    run = Run(args, "gen-data")
    fmt = args.format
    out = args.out or run.path("data." + ("csv" if fmt == "csv" else "bin"))
    run.resolved({"n": args.n, "d_emb": args.d_emb, "rho": args.rho, "margin": args.margin,
                  "sigma": args.sigma, "informative": ds.meta["informative"],
                  "latent_scale": args.latent_scale, "seed": seed, "format": fmt,
                  "out": os.fspath(out)})
    save_embeddings(ds, out, fmt)
    run.outputs.append(os.path.relpath(out, run.dir))
    print(f"wrote {len(ds)} rows (d_emb={ds.d_emb}) to {out}")
    return run.finish()


def cmd_train(args) -> int:
    from . import pipeline, plotting
    from .checkpoint import mps_checksum

    config, extra = resolve_config(args)
    if config.stage == 2 and not args.mps_checkpoint:
        raise UsageError("stage 2 needs --mps-checkpoint from a stage-one run")
    run = Run(args, "train")
    ds = _load_dataset(run, args.data)
    data_sha = run.inputs[os.fspath(args.data)]
    train_idx, test_idx = pipeline.split_indices(ds, extra["split_train"], extra["split_test"],
                                                 config.seed)
    x = ds.features()
    y = ds.labels.astype(int)
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None

    if config.stage == 1:
        run.resolved({"train": config.to_dict(), "cli": extra, "data": os.fspath(args.data)})
        res = pipeline.run_stage1(ds, config, train_idx, test_idx, log)
        _save_stage1(run.output("mps.ckpt", checkpoint=True), res, config, extra, data_sha)
        _write_report(run, res.report)
        train_rep = pipeline.evaluate(pipeline.stage1_scores(res.mps, res.head, x[train_idx]),
                                      y[train_idx], extra["threshold"], extra["fpr_target"])
        test_rep = pipeline.evaluate(pipeline.stage1_scores(res.mps, res.head, x[test_idx]),
                                     y[test_idx], extra["threshold"], extra["fpr_target"])
        run.extra["train_wall_clock_s"] = res.report.wall_clock
        report = res.report
    else:
        mps, _, meta = _load_stage1(run, args.mps_checkpoint)
        spec = pipeline.build_spec(config)
        if args.circuit:
            from .vqc import read_circuit

            run.input(args.circuit)
            spec = read_circuit(args.circuit)
        from .vqc import spec_to_dict, write_circuit

        run.resolved({"train": config.to_dict(), "cli": extra, "data": os.fspath(args.data),
                      "mps_checkpoint": os.fspath(args.mps_checkpoint),
                      "circuit": spec_to_dict(spec)})
        before = mps_checksum(mps)
        h = pipeline.T.mps_features(mps, x, config.norm_eps)
        res = pipeline.run_stage2(mps, ds, config, spec, train_idx, test_idx, log, fused=h)
        after = mps_checksum(mps)
        if before != after:
            raise RuntimeError("stage two modified the frozen projector")
        write_circuit(spec, run.output("circuit.txt"))
        _save_vqc(run.output("vqc.ckpt", checkpoint=True), res.model, config, after)
        _write_report(run, res.report)
        train_rep = pipeline.evaluate(pipeline.vqc_scores(mps, res.model, None, fused=h[res.train_idx]),
                                      y[res.train_idx], extra["threshold"], extra["fpr_target"])
        test_rep = pipeline.evaluate(pipeline.vqc_scores(mps, res.model, None, fused=h[test_idx]),
                                     y[test_idx], extra["threshold"], extra["fpr_target"])
        run.extra["mps_checksum_before"] = before
        run.extra["mps_checksum_after"] = after
        run.extra["train_wall_clock_s"] = res.report.wall_clock
        report = res.report

    _write_eval(run, test_rep, {
        "split": "test",
        "stage": config.stage,
        "epochs": _epoch_rows(report),
        "train": train_rep.to_json(),
        "n_train": int(len(res.train_idx)),
        "n_test": int(len(test_idx)),
    }, extra["fpr_target"])
    plotting.plot_training(report.steps, run.output("training.png"), f"stage {config.stage}")
    print(f"stage {config.stage}: train ACER={train_rep.acer:.4f} test ACER={test_rep.acer:.4f} "
          f"AUC={test_rep.auc:.4f}")
    return run.finish()


def cmd_eval(args) -> int:
    from . import pipeline

    run = Run(args, "eval")
    ds = _load_dataset(run, args.data)
    mps, head, meta = _load_stage1(run, args.mps_checkpoint)
    cfg = meta.get("config", {})
    cli = meta.get("cli", {})
    seed = cfg.get("seed", 0) if args.seed is None else args.seed
    split_train = cli.get("split_train", 0.8) if args.split_train is None else args.split_train
    split_test = cli.get("split_test", 0.2) if args.split_test is None else args.split_test
    x = ds.features()
    y = ds.labels.astype(int)
    if args.split == "all":
        idx = list(range(len(ds)))
    else:
        tr, te = pipeline.split_indices(ds, split_train, split_test, seed)
        idx = te if args.split == "test" else tr
    eps = cfg.get("norm_eps", 1e-6)
    if args.vqc_checkpoint:
        model, _ = _load_vqc(run, args.vqc_checkpoint)
        scores = pipeline.vqc_scores(mps, model, x[idx], eps)
        source = "vqc"
    else:
        if head is None:
            raise UsageError("the projector checkpoint stores no stage-one head; pass --vqc-checkpoint")
        scores = pipeline.stage1_scores(mps, head, x[idx], eps)
        source = "stage1_head"
    run.resolved({"data": os.fspath(args.data), "split": args.split, "seed": seed,
                  "split_train": split_train, "split_test": split_test,
                  "threshold": args.threshold, "fpr_target": args.fpr_target, "scores": source})
    rep = pipeline.evaluate(scores, y[idx], args.threshold, args.fpr_target)
    _write_eval(run, rep, {"split": args.split, "scores": source}, args.fpr_target)
    print(f"ACER={rep.acer:.4f} APCER={rep.apcer:.4f} BPCER={rep.bpcer:.4f} AUC={rep.auc:.4f} "
          f"TPR@FPR={rep.tpr_at_fpr['value']:.4f}")
    return run.finish()


def cmd_verify(args) -> int:
    from . import plotting, verify

    run = Run(args, "verify")
    seed = 0 if args.seed is None else args.seed
    run.resolved({"suite": args.suite, "seed": seed,
                  "checkpoint": os.fspath(args.checkpoint) if args.checkpoint else None})
    results = []
    if args.checkpoint:
        from .checkpoint import load_mps

        run.input(args.checkpoint)
        mps, _, _ = load_mps(args.checkpoint, validate=False)
        results += verify.check_checkpoint(mps)
    results += verify.run(args.suite, seed)
    for r in results:
        print(r.row())
    _write_csv(run.output("verify.csv"), ["suite", "name", "passed", "value", "tolerance", "detail"],
               [[r.suite, r.name, int(r.passed), r.value, r.tolerance, r.detail] for r in results])
    table = [row for r in results for row in r.table]
    if table:
        _write_csv(run.output("trotter.csv"), ["series", "tau", "error"], table)
        for r in results:
            if r.table:
                taus = [t for _, t, _ in r.table]
                errs = [e for _, _, e in r.table]
                slope = float(r.detail.split("=")[1]) if r.detail.startswith("slope=") else float("nan")
                plotting.plot_slope(taus, errs, run.output(f"{r.name}.png"), slope, r.table[0][0])
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
    return run.finish(EXIT_FAIL if failed else EXIT_OK)


def _parse_grid(text, cast=float, name="grid"):
    try:
        vals = [cast(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name}: cannot parse {text!r}") from None
    if not vals:
        raise UsageError(f"{name} is empty")
    return vals


def cmd_compare_topologies(args) -> int:
    import numpy as np

    from . import pipeline, plotting
    from .errors import NumericError
    from .vqc import ZYZ, AnsatzSpec, fit_loglog_slope, topology_discrepancy

    taus = _parse_grid(args.tau_grid, float, "--tau-grid")
    if len(taus) < 3:
        raise UsageError("--tau-grid needs at least 3 points to fit a slope")
    if any(t <= 0 for t in taus):
        raise UsageError("--tau-grid values must be positive")
    run = Run(args, "compare-topologies")
    seed = 0 if args.seed is None else args.seed
    spec = AnsatzSpec.uniform(args.nq, "chain", args.entangler)
    rng = np.random.default_rng(seed)
    params = rng.uniform(-1.0, 1.0, spec.n_params)
    if args.zero_dressings:
        offs = spec.block_offsets()
        for base in offs[:-1]:
            params[base:base + 4 * ZYZ] = 0.0
        params[offs[-1]:] = 0.0
    angles = rng.uniform(-np.pi, np.pi, (args.n_inputs, args.nq))
    disc = topology_discrepancy(spec, params, angles, taus)
    slope = None
    if disc.max() > 1e-12:
        try:
            slope, _ = fit_loglog_slope(taus, disc)
        except NumericError:
            slope = None
    summary = {"nq": args.nq, "entangler": args.entangler, "zero_dressings": args.zero_dressings,
               "slope": slope, "max_discrepancy": float(disc.max())}
    run.resolved({"nq": args.nq, "entangler": args.entangler, "tau_grid": taus, "seed": seed,
                  "zero_dressings": args.zero_dressings, "n_inputs": args.n_inputs,
                  "data": os.fspath(args.data) if args.data else None})
    _write_csv(run.output("topology.csv"), ["tau", "discrepancy"], list(zip(taus, disc.tolist())))
    if slope is not None:
        plotting.plot_slope(taus, disc.tolist(), run.output("topology.png"), slope,
                            "chain vs brick-wall")
    if args.data:
        config, extra = resolve_config(args, stage=2, n_qubits=args.nq, entangler=args.entangler)
        ds = _load_dataset(run, args.data)
        mps, _, _ = _load_stage1(run, args.mps_checkpoint)
        tr, te = pipeline.split_indices(ds, extra["split_train"], extra["split_test"], config.seed)
        h = pipeline.T.mps_features(mps, ds.features(), config.norm_eps)
        y = ds.labels.astype(int)
        for topo in ("chain", "brickwall"):
            res = pipeline.run_stage2(mps, ds, config, spec.with_topology(topo), tr, te, fused=h)
            rep = pipeline.evaluate(pipeline.vqc_scores(mps, res.model, None, fused=h[te]), y[te],
                                    extra["threshold"], extra["fpr_target"])
            summary[f"{topo}_acer"] = rep.acer
            summary[f"{topo}_auc"] = rep.auc
    _write_json(run.output("topology.json"), summary)
    print(f"slope={slope} max discrepancy={summary['max_discrepancy']:.3e}")
    return run.finish()


def _sweep_cell_hash(base: dict, **cell) -> str:
    from .checkpoint import config_hash

    return config_hash({"base": base, "cell": cell})


def cmd_sweep(args) -> int:
    import numpy as np

    from . import pipeline, plotting
    from .checkpoint import load_mps, mps_checksum
    from .mps import param_count

    d_list = _parse_grid(args.d_fused_list, int, "--d-fused")
    nq_list = _parse_grid(args.nq_list, int, "--nq")
    ratio_list = _parse_grid(args.data_ratio_list, float, "--data-ratio")
    config, extra = resolve_config(args)
    run = Run(args, "sweep", resume=True)
    ds = _load_dataset(run, args.data)
    data_sha = run.inputs[os.fspath(args.data)]
    base = {"train": config.to_dict(), "cli": extra, "data_sha256": data_sha}
    run.resolved({"train": config.to_dict(), "cli": extra, "data": os.fspath(args.data),
                  "d_fused": d_list, "nq": nq_list, "data_ratio": ratio_list})
    tr, te = pipeline.split_indices(ds, extra["split_train"], extra["split_test"], config.seed)
    x = ds.features()
    y = ds.labels.astype(int)
    cells_dir = run.path("cells")
    os.makedirs(cells_dir, exist_ok=True)
    rows, timing = [], []
    computed = skipped = 0
    for d in d_list:
        cfg1 = config.__class__.from_dict({**config.to_dict(), "stage": 1, "d_fused": d})
        s1_dir = os.path.join(cells_dir, f"stage1_d{d}")
        s1_hash = _sweep_cell_hash(base, stage=1, d_fused=d)
        s1_ckpt = os.path.join(s1_dir, "mps.ckpt")
        if _cell_done(s1_dir, s1_hash) and os.path.exists(s1_ckpt):
            mps, _, _ = load_mps(s1_ckpt)
            skipped += 1
        else:
            os.makedirs(s1_dir, exist_ok=True)
            t0 = time.perf_counter()
            res = pipeline.run_stage1(ds, cfg1, tr, te)
            _save_stage1(s1_ckpt, res, cfg1, extra, data_sha)
            _write_json(os.path.join(s1_dir, "cell.json"),
                        {"hash": s1_hash, "wall_clock_s": time.perf_counter() - t0})
            mps = res.mps
            computed += 1
        h = pipeline.T.mps_features(mps, x, cfg1.norm_eps)
        for nq in nq_list:
            for ratio in ratio_list:
                cell = {"stage": 2, "d_fused": d, "nq": nq, "ratio": ratio}
                cdir = os.path.join(cells_dir, f"d{d}_nq{nq}_r{ratio:g}")
                chash = _sweep_cell_hash(base, **cell)
                if _cell_done(cdir, chash):
                    with open(os.path.join(cdir, "cell.json"), encoding="utf-8") as fh:
                        result = json.load(fh)
                    skipped += 1
                else:
                    os.makedirs(cdir, exist_ok=True)
                    t0 = time.perf_counter()
                    cfg2 = config.__class__.from_dict({**cfg1.to_dict(), "stage": 2,
                                                       "n_qubits": nq, "data_ratio": ratio})
                    res = pipeline.run_stage2(mps, ds, cfg2, pipeline.build_spec(cfg2), tr, te,
                                              fused=h)
                    rep = pipeline.evaluate(pipeline.vqc_scores(mps, res.model, None, fused=h[te]),
                                            y[te], extra["threshold"], extra["fpr_target"])
                    result = {
                        "hash": chash,
                        "row": [d, nq, ratio, rep.acer, rep.tpr_at_fpr["value"], rep.auc,
                                param_count(mps), pipeline.vqc_param_count(res.model)],
                        "train_idx_sha256": hashlib.sha256(
                            np.asarray(res.train_idx, dtype="<i8").tobytes()).hexdigest(),
                        "n_train": int(len(res.train_idx)),
                        "wall_clock_s": time.perf_counter() - t0,
                    }
                    _write_json(os.path.join(cdir, "cell.json"), result)
                    computed += 1
                row = list(result["row"])
                rows.append(row + [row[-2] + row[-1]])
                timing.append([d, nq, ratio, result["wall_clock_s"]])
    header = ["d_fused", "nq", "ratio", "acer", "tpr_at_fpr", "auc", "mps_params", "vqc_params",
              "params"]
    _write_csv(run.output("sweep.csv"), header, rows)
    _write_csv(run.path("sweep_timing.csv"), ["d_fused", "nq", "ratio", "wall_clock_s"], timing)
    nesting = _nesting_log(tr, ratio_list, config.seed)
    _write_json(run.output("nesting.json"), nesting)
    plotting.plot_sweep([dict(zip(header, r)) for r in rows], run.output("sweep.png"))
    run.extra.update({"cells_computed": computed, "cells_skipped": skipped,
                      "mps_checksum_last": mps_checksum(mps)})
    print(f"sweep: {len(rows)} rows, {computed} cells computed, {skipped} reused")
    return run.finish()


def _cell_done(cdir, chash) -> bool:
    path = os.path.join(cdir, "cell.json")
    if not os.path.exists(path):
        return False
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh).get("hash") == chash
    except (OSError, json.JSONDecodeError):
        return False


def _nesting_log(train_idx, ratios, seed):
    from .datagen import nested_subset

    ordered = sorted(set(ratios))
    subsets = {r: set(nested_subset(train_idx, r, seed).tolist()) for r in ordered}
    pairs = [{"smaller": a, "larger": b, "subset": subsets[a] <= subsets[b]}
             for a, b in zip(ordered, ordered[1:])]
    return {"ratios": ordered, "sizes": [len(subsets[r]) for r in ordered], "pairs": pairs}


def cmd_report(args) -> int:
    from . import plotting
    from .mps import standard_param_count, uniform_param_count

    run = Run(args, "report")
    run.resolved({"runs": [os.fspath(r) for r in args.runs]})
    summary = []
    for rdir in args.runs:
        if not os.path.isdir(rdir):
            raise UsageError(f"{rdir} is not a directory")
        tag = os.path.basename(os.path.normpath(rdir))
        entry = {"run": tag}
        mpath = os.path.join(rdir, "manifest.json")
        if os.path.exists(mpath):
            with open(mpath, encoding="utf-8") as fh:
                entry["subcommand"] = json.load(fh).get("subcommand")
        rep = os.path.join(rdir, "report.csv")
        if os.path.exists(rep):
            steps = [{k: float(v) for k, v in r.items()} for r in _read_csv(rep)]
            plotting.plot_training(steps, run.output(f"{tag}_training.png"), tag)
            if steps:
                entry["final_loss"] = steps[-1]["loss"]
                jumps = [abs(b["loss"] - a["loss"]) for a, b in zip(steps, steps[1:])]
                entry["max_loss_jump"] = max(jumps) if jumps else 0.0
        met = os.path.join(rdir, "metrics.json")
        if os.path.exists(met):
            with open(met, encoding="utf-8") as fh:
                m = json.load(fh)
            entry.update({"acer": m["acer"], "apcer": m["apcer"], "bpcer": m["bpcer"],
                          "auc": m["auc"], "tpr_at_fpr": m["tpr_at_fpr"]["value"]})
        roc = os.path.join(rdir, "roc.csv")
        if os.path.exists(roc):
            pts = [(float(r["fpr"]), float(r["tpr"]), float(r["threshold"])) for r in _read_csv(roc)]
            plotting.plot_roc(pts, run.output(f"{tag}_roc.png"))
        sw = os.path.join(rdir, "sweep.csv")
        if os.path.exists(sw):
            plotting.plot_sweep(_read_csv(sw), run.output(f"{tag}_sweep.png"))
        for name, label in (("topology.csv", "chain vs brick-wall"),):
            p = os.path.join(rdir, name)
            if os.path.exists(p):
                rows = _read_csv(p)
                taus = [float(r["tau"]) for r in rows]
                errs = [float(r["discrepancy"]) for r in rows]
                if min(errs) > 0:
                    from .vqc import fit_loglog_slope

                    slope, _ = fit_loglog_slope(taus, errs)
                    plotting.plot_slope(taus, errs, run.output(f"{tag}_topology.png"), slope, label)
        tro = os.path.join(rdir, "trotter.csv")
        if os.path.exists(tro):
            from .vqc import fit_loglog_slope

            rows = _read_csv(tro)
            for series in sorted({r["series"] for r in rows}):
                sel = [r for r in rows if r["series"] == series]
                taus = [float(r["tau"]) for r in sel]
                errs = [float(r["error"]) for r in sel]
                slope, _ = fit_loglog_slope(taus, errs)
                entry[f"{series}_slope"] = slope
                plotting.plot_slope(taus, errs, run.output(f"{tag}_{series}.png"), slope, series)
        summary.append(entry)
    keys = sorted({k for e in summary for k in e} - {"run"})
    _write_csv(run.output("summary.csv"), ["run"] + keys,
               [[e["run"]] + [e.get(k, "") for k in keys] for e in summary])
    grid = []
    for length in (24, 96, 384):
        for chi in (4, 8, 16):
            grid.append([length, chi, 4, standard_param_count(length, chi, 4),
                         uniform_param_count(length, chi, 4)])
    _write_csv(run.output("param_counts.csv"),
               ["length", "chi", "d_fused", "params_rank_capped", "params_uniform"], grid)
    print(f"report over {len(summary)} runs written to {run.dir}")
    return run.finish()


# ----------------------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", help="JSON file of TrainConfig keys (flags override it)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None, help="run directory (default runs/<subcommand>)")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads")
    p.add_argument("--force", action="store_true", help="allow reusing an existing run directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _train_flags(p):
    g = p.add_argument_group("training config (overrides --config)")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr-max", type=float)
    g.add_argument("--lr-min", type=float)
    g.add_argument("--restart-steps", type=int)
    g.add_argument("--restart-mult", type=float)
    g.add_argument("--clip", type=float)
    g.add_argument("--optimizer", choices=("adam", "sgd"))
    g.add_argument("--mode", choices=("standard", "activated"))
    g.add_argument("--chi-init", type=int)
    g.add_argument("--chi-set", type=int)
    g.add_argument("--d-fused", type=int)
    g.add_argument("--center", type=int)
    g.add_argument("--truncate-every", type=int)
    g.add_argument("--init-noise", type=float)
    g.add_argument("--head-init", choices=("zeros", "random"))
    g.add_argument("--topology", choices=("chain", "brickwall"))
    g.add_argument("--data-ratio", type=float)
    g.add_argument("--split-train", type=float)
    g.add_argument("--split-test", type=float)
    g.add_argument("--threshold", type=float)
    g.add_argument("--fpr-target", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpsvqc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic tri-modal embedding set")
    _common(p)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--d-emb", type=int, default=8)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--margin", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--informative", type=int, default=None)
    p.add_argument("--latent-scale", type=float, default=1.0)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.add_argument("--out", default=None, help="dataset path (default <out-dir>/data.bin)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="stage-one projector or stage-two circuit training")
    _common(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mps-checkpoint")
    p.add_argument("--circuit", help="circuit description file (stage 2)")
    p.add_argument("--nq", type=int)
    p.add_argument("--entangler", choices=("cnot", "crz", "heisenberg"))
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a dataset split with saved checkpoints")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mps-checkpoint", required=True)
    p.add_argument("--vqc-checkpoint")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--split-train", type=float)
    p.add_argument("--split-test", type=float)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--fpr-target", type=float, default=1e-3)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the property-check suites")
    _common(p)
    p.add_argument("--suite", choices=("mps", "vqc", "trotter", "all"), default="all")
    p.add_argument("--checkpoint", help="also check the invariants of a stored projector")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare-topologies", help="chain vs brick-wall discrepancy under scaling")
    _common(p)
    p.add_argument("--nq", type=int, default=4)
    p.add_argument("--entangler", choices=("cnot", "crz", "heisenberg"), default="heisenberg")
    p.add_argument("--tau-grid", default="0.1,0.0316,0.01,0.00316,0.001")
    p.add_argument("--n-inputs", type=int, default=4)
    p.add_argument("--zero-dressings", action="store_true",
                   help="zero every single-qubit dressing (commuting-entangler control)")
    p.add_argument("--data")
    p.add_argument("--mps-checkpoint")
    _train_flags(p)
    p.set_defaults(func=cmd_compare_topologies)

    p = sub.add_parser("sweep", help="d_fused x nq x data-ratio grid with resumable cells")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--d-fused", dest="d_fused_list", default="4")
    p.add_argument("--nq", dest="nq_list", default="4")
    p.add_argument("--data-ratio", dest="data_ratio_list", default="1.0")
    p.add_argument("--entangler", choices=("cnot", "crz", "heisenberg"))
    g = p.add_argument_group("training config (overrides --config)")
    for flag, kw in (("--epochs", int), ("--batch-size", int), ("--lr-max", float),
                     ("--lr-min", float), ("--restart-steps", int), ("--restart-mult", float),
                     ("--clip", float), ("--chi-init", int), ("--chi-set", int),
                     ("--center", int), ("--truncate-every", int), ("--init-noise", float),
                     ("--split-train", float), ("--split-test", float),
                     ("--threshold", float), ("--fpr-target", float)):
        g.add_argument(flag, type=kw)
    g.add_argument("--optimizer", choices=("adam", "sgd"))
    g.add_argument("--mode", choices=("standard", "activated"))
    g.add_argument("--head-init", choices=("zeros", "random"))
    g.add_argument("--topology", choices=("chain", "brickwall"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render figures and summary tables from run directories")
    _common(p)
    p.add_argument("runs", nargs="+", help="run directories to summarize")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    from .errors import (ConfigError, DivergenceError, LabelError, MpsVqcError, QubitIndexError,
                         ScheduleError)

    usage = (UsageError, ConfigError, LabelError, ScheduleError, QubitIndexError)
    try:
        _apply_threads(args.threads)
        return int(args.func(args))
    except usage as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"{parser.prog} {args.command}: diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (MpsVqcError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"{parser.prog} {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
