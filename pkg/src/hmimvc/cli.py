"""Command-line entry point: ``hmimvc {synth,simulate,train,evaluate,sweep,ablate}``.

Exit codes: 0 success, 2 user or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import data as data_mod
from .errors import (CheckpointError, DegenerateBatchError, DegenerateTemperatureError,
                     DerangementError, DimensionError, HmiError, LoadError,
                     PoisonedGradientError, RatioError, TrainingDiverged)
from .inference import (class_alignment_accuracy, evaluate_recovery, export_csv,
                        export_realignment, impute_mean_latents, impute_missing,
                        imputation_latent_mse)
from .model import DESK_HIDDEN, PAPER_HIDDEN, load_checkpoint, load_params, save_params
from .trainer import TrainConfig, train, training_meta

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

ABLATION_ROWS = (
    ("pre",),
    ("rec",),
    ("cl",),
    ("rec", "pre"),
    ("pre", "cl"),
    ("rec", "cl"),
    ("rec", "pre", "cl"),
)


@dataclass
class RunConfig:
    manifest: str | None = None
    alpha: float = 0.25
    beta: float = 0.25
    seed: int = 0
    normalize: bool = True
    realign: str = "hungarian"
    imputer: str = "dual"
    out: str | None = None
    train: dict = field(default_factory=dict)

    @property
    def gamma(self) -> float:
        return 1.0 - self.alpha - self.beta

    def train_config(self, **overrides) -> TrainConfig:
        params = dict(self.train)
        params["seed"] = self.seed
        params.update(overrides)
        return TrainConfig.from_dict(params)

    def to_json(self) -> str:
        d = asdict(self)
        d["gamma"] = self.gamma
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        d = json.loads(text)
        d.pop("gamma", None)
        return cls(**d)


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmimvc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, need_out=True):
        p.add_argument("--config", help="JSON run config; explicit flags override it")
        p.add_argument("--manifest")
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--masks", help="partition masks file (default: simulate from alpha/beta/seed)")
        p.add_argument("--preset", choices=["desk", "paper"], default=None)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--latent-dim", type=int)
        p.add_argument("--hidden", type=_ints, help="comma-separated hidden widths")
        p.add_argument("--stage-epochs", type=_ints, help="three comma-separated epoch counts")
        p.add_argument("--losses", nargs="+", choices=["rec", "cl", "pre"],
                       help="restrict training to these loss components")
        p.add_argument("--tau-at", choices=["init", "warmup_end"])
        p.add_argument("--realign", choices=["hungarian", "greedy"])
        p.add_argument("--imputer", choices=["dual", "mean"])
        p.add_argument("--no-normalize", action="store_true")
        p.add_argument("--out", required=need_out)

    p = sub.add_parser("synth", help="write the bundled synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dims", type=_ints, default=[20, 30])
    p.add_argument("--noise", type=float, default=data_mod.SYNTH_NOISE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "binary"], default="csv")

    p = sub.add_parser("simulate", help="draw partition masks for a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train on the complete subset")
    run_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, help="stop after this many global epochs")
    p.add_argument("--eval-every", type=int)

    p = sub.add_parser("evaluate", help="recover, cluster and score")
    run_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep", help="grid over missing and unaligned rates")
    run_flags(p)
    p.add_argument("--alphas", type=_floats, required=True)
    p.add_argument("--betas", type=_floats, required=True)
    p.add_argument("--seeds", type=_ints, default=None)

    p = sub.add_parser("ablate", help="train and score the seven loss subsets")
    run_flags(p)
    p.add_argument("--from-train", help="train output directory to reuse for the full row")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_json(Path(args.config).read_text()) if getattr(args, "config", None) else RunConfig()
    train_kw = dict(cfg.train)
    preset = getattr(args, "preset", None)
    if preset == "desk":
        train_kw.update(hidden=list(DESK_HIDDEN), batch_size=128, stage_epochs=[30, 30, 30])
    elif preset == "paper":
        train_kw.update(hidden=list(PAPER_HIDDEN), batch_size=1024, stage_epochs=[150, 150, 150])
    for flag, key in (("manifest", "manifest"), ("alpha", "alpha"), ("beta", "beta"),
                      ("seed", "seed"), ("realign", "realign"), ("imputer", "imputer"),
                      ("out", "out")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "no_normalize", False):
        cfg.normalize = False
    for flag, key in (("batch_size", "batch_size"), ("lr", "lr"), ("latent_dim", "latent_dim"),
                      ("hidden", "hidden"), ("stage_epochs", "stage_epochs"),
                      ("losses", "loss_mask"), ("tau_at", "tau_at"), ("eval_every", "eval_every")):
        value = getattr(args, flag, None)
        if value is not None:
            train_kw[key] = sorted(value) if key == "loss_mask" else value
    if getattr(args, "stage_epochs", None) is not None and len(args.stage_epochs) != 3:
        raise ValueError("--stage-epochs takes exactly three values")
    cfg.train = TrainConfig.from_dict(train_kw).to_dict()
    for key in ("seed", "log_path", "checkpoint_dir"):
        cfg.train.pop(key, None)
    if cfg.manifest is None:
        raise ValueError("--manifest is required")
    return cfg


def _load_data(cfg: RunConfig):
    ds = data_mod.load_dataset(cfg.manifest)
    return data_mod.normalize(ds) if cfg.normalize else ds


def _masks_for(cfg: RunConfig, ds, masks_path=None):
    if masks_path:
        masks = data_mod.PartitionMasks.load(masks_path)
        if masks.n_samples != ds.n_samples:
            raise LoadError(f"{masks_path}: masks cover {masks.n_samples} rows, dataset has {ds.n_samples}")
        return masks
    return data_mod.simulate_corruption(ds, cfg.alpha, cfg.beta, cfg.seed)


def _emit(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if path is not None:
        Path(path).write_text(text + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    ds = data_mod.make_synthetic(args.samples, args.classes, tuple(args.dims), noise=args.noise,
                                 seed=args.seed)
    manifest = data_mod.save_dataset(ds, args.out, fmt=args.format)
    _emit({"manifest": str(manifest), "n_samples": ds.n_samples, "view_dims": ds.view_dims,
           "n_classes": ds.n_classes})
    return EXIT_OK


def cmd_simulate(args) -> int:
    ds = data_mod.load_dataset(args.manifest)
    masks = data_mod.simulate_corruption(ds, args.alpha, args.beta, args.seed)
    masks.save(args.out)
    _emit({"masks": args.out, "n_complete": int(masks.complete_idx.size),
           "n_unaligned": int(masks.unaligned_idx.size), "n_missing": int(masks.missing_idx.size),
           "alpha": args.alpha, "beta": args.beta, "gamma": 1.0 - args.alpha - args.beta})
    return EXIT_OK


def run_training(cfg: RunConfig, ds, masks, out: Path, resume=None, stop_after=None):
    """Train into ``out``: checkpoint.hmiw, train_log.jsonl, config.json, masks.txt."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    masks.save(out / "masks.txt")
    tcfg = cfg.train_config(log_path=str(out / "train_log.jsonl"),
                            checkpoint_dir=str(out / "stages"))
    checkpoint = load_checkpoint(resume) if resume else None
    params, log, tau = train(ds, masks, tcfg, resume=checkpoint, max_epochs=stop_after)
    done = log.records[-1]["epoch"] if log.records else (
        checkpoint.meta.get("epochs_done", 0) if checkpoint else 0)
    save_params(params, out / "checkpoint.hmiw", log.optimizer, training_meta(tcfg, done, tau))
    return params, log, tau


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ds = _load_data(cfg)
    masks = _masks_for(cfg, ds, args.masks)
    out = Path(cfg.out)
    _, log, tau = run_training(cfg, ds, masks, out, resume=args.resume, stop_after=args.stop_after)
    stages = sorted({r["stage"] for r in log.records})
    _emit({"checkpoint": str(out / "checkpoint.hmiw"), "epochs": len(log.records),
           "stages": stages, "tau": None if tau is None else tau.tau,
           "final_loss": log.records[-1]["total"] if log.records else None})
    return EXIT_OK


def evaluate_params(cfg: RunConfig, params, ds, masks, out: Path | None = None) -> dict:
    report, recovered = evaluate_recovery(params, ds, masks, cfg.realign, cfg.imputer, seed=cfg.seed)
    dual = imputation_latent_mse(params, ds, masks, impute_missing(params, ds, masks))
    mean = imputation_latent_mse(params, ds, masks, impute_mean_latents(params, ds, masks))
    result = {
        "nmi": report.nmi, "acc": report.acc, "ari": report.ari,
        "seed": cfg.seed, "alpha": cfg.alpha, "beta": cfg.beta, "gamma": cfg.gamma,
        "realign_method": cfg.realign, "imputer": cfg.imputer, "k": report.k,
        "inertia": report.inertia,
        "realign_class_acc": class_alignment_accuracy(ds, masks, recovered.realignment_map),
        "imputation_mse_dual": dual, "imputation_mse_mean": mean,
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        export_csv(recovered, out / "latents.csv", labels=ds.labels)
        export_realignment(recovered, masks, out / "realignment.csv")
    return result


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    ds = _load_data(cfg)
    masks = _masks_for(cfg, ds, args.masks)
    params = load_params(args.checkpoint, view_dims=ds.view_dims)
    out = Path(cfg.out)
    result = evaluate_params(cfg, params, ds, masks, out)
    (out / "config.json").write_text(cfg.to_json())
    _emit(result, out / "metrics.json")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = resolve_config(args)
    ds = _load_data(base)
    seeds = args.seeds if args.seeds is not None else [base.seed]
    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(base.to_json())
    rows = []
    for alpha in args.alphas:
        for beta in args.betas:
            for seed in seeds:
                cfg = RunConfig(**{**asdict(base), "alpha": alpha, "beta": beta, "seed": seed})
                masks = data_mod.simulate_corruption(ds, alpha, beta, seed)
                params, _, _ = train(ds, masks, cfg.train_config())
                report, _ = evaluate_recovery(params, ds, masks, cfg.realign, cfg.imputer, seed=seed)
                rows.append([alpha, beta, seed, report.nmi, report.acc, report.ari])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha", "beta", "seed", "nmi", "acc", "ari"])
    writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    (out / "sweep.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _label(losses) -> str:
    return "+".join(losses)


def cmd_ablate(args) -> int:
    base = resolve_config(args)
    ds = _load_data(base)
    masks = _masks_for(base, ds, args.masks)
    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(base.to_json())
    rows = []
    for i, losses in enumerate(ABLATION_ROWS, start=1):
        cfg = RunConfig(**asdict(base))
        cfg.train = {**base.train, "loss_mask": sorted(losses)}
        if len(losses) == 3:
            cfg.train["loss_mask"] = None
        row_dir = out / f"row{i}_{_label(losses)}"
        params = _reusable(cfg, row_dir)
        if params is None and len(losses) == 3 and args.from_train:
            params = _reusable(cfg, Path(args.from_train))
        if params is None:
            params, _, _ = run_training(cfg, ds, masks, row_dir)
        report, _ = evaluate_recovery(params, ds, masks, cfg.realign, cfg.imputer, seed=cfg.seed)
        rows.append([i, _label(losses), report.nmi, report.acc, report.ari])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["row", "losses", "nmi", "acc", "ari"])
    writer.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    (out / "ablation.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _training_fields(cfg: RunConfig) -> dict:
    d = json.loads(cfg.to_json())
    d.pop("out", None)
    d.pop("realign", None)
    d.pop("imputer", None)
    return d


def _reusable(cfg: RunConfig, directory: Path):
    """Parameters from a finished training run in ``directory`` with the same settings."""
    ckpt, conf = directory / "checkpoint.hmiw", directory / "config.json"
    if not (ckpt.exists() and conf.exists()):
        return None
    previous = RunConfig.from_json(conf.read_text())
    if _training_fields(previous) != _training_fields(cfg):
        return None
    checkpoint = load_checkpoint(ckpt)
    if checkpoint.meta.get("epochs_done") != sum(cfg.train_config().stage_epochs):
        return None
    return checkpoint.params


COMMANDS = {"synth": cmd_synth, "simulate": cmd_simulate, "train": cmd_train,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep, "ablate": cmd_ablate}

USER_ERRORS = (LoadError, RatioError, DerangementError, DimensionError, CheckpointError,
               DegenerateBatchError, ValueError, FileNotFoundError, KeyError)
NUMERIC_ERRORS = (TrainingDiverged, DegenerateTemperatureError, PoisonedGradientError)


def _limit_threads():
    limit = os.environ.get("HMIMVC_THREADS")
    if not limit:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(limit))


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    limiter = _limit_threads()
    try:
        return COMMANDS[args.command](args)
    except NUMERIC_ERRORS as exc:
        print(f"hmimvc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except USER_ERRORS as exc:
        print(f"hmimvc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HmiError as exc:
        print(f"hmimvc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if limiter is not None:
            limiter.unregister() if hasattr(limiter, "unregister") else limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
