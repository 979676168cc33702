"""Staged mini-batch training on the complete, aligned subset."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import MultiViewDataset, PartitionMasks, sample_pairs
from .errors import DegenerateBatchError, TrainingDiverged
from .model import DESK_HIDDEN, PAPER_HIDDEN, Checkpoint, ModelParams, encode, init_params, save_params
from .numerics import AdamState, adam_step
from .objective import ALL_LOSSES, Temperature, compute_tau, objective

STAGE_NAMES = ("A", "B", "C")
DEFAULT_SCHEDULE = (("rec",), ("rec", "cl"), ("rec", "cl", "pre"))


@dataclass
class TrainConfig:
    batch_size: int = 1024
    lr: float = 1e-4
    stage_epochs: tuple[int, int, int] = (150, 150, 150)
    seed: int = 0
    stage_losses: tuple = DEFAULT_SCHEDULE
    loss_mask: tuple | None = None
    latent_dim: int = 10
    hidden: tuple = PAPER_HIDDEN
    neg_per_pos: int = 1
    exponents: tuple[float, float] = (0.5, 1.5)
    max_loss: float = 1e6
    tau_at: str = "init"
    eval_every: int | None = None
    log_path: str | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if any(e < 0 for e in self.stage_epochs):
            raise ValueError("stage epochs must be non-negative")
        self.stage_epochs = tuple(int(e) for e in self.stage_epochs)
        self.stage_losses = tuple(tuple(s) for s in self.stage_losses)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.exponents = tuple(float(a) for a in self.exponents)
        if self.loss_mask is not None:
            self.loss_mask = tuple(sorted(self.loss_mask))
            if not set(self.loss_mask) <= ALL_LOSSES or not self.loss_mask:
                raise ValueError(f"loss mask must be a non-empty subset of {sorted(ALL_LOSSES)}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """CPU-friendly preset: 256-wide stacks, batch 128, 30 epochs per stage."""
        base = dict(hidden=DESK_HIDDEN, batch_size=128, stage_epochs=(30, 30, 30))
        base.update(overrides)
        return cls(**base)

    def stage_active(self, stage: int) -> frozenset:
        """Losses trained in ``stage``; an ablation mask intersects the schedule
        and falls back to the mask itself where the intersection is empty."""
        active = frozenset(self.stage_losses[stage])
        if self.loss_mask is None:
            return active
        mask = frozenset(self.loss_mask)
        return (active & mask) or mask

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_losses"] = [list(s) for s in self.stage_losses]
        for key in ("stage_epochs", "hidden", "exponents", "loss_mask"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    optimizer: AdamState | None = None

    def stage(self, name: str) -> list[dict]:
        return [r for r in self.records if r["stage"] == name]

    def totals(self, name: str | None = None) -> np.ndarray:
        recs = self.records if name is None else self.stage(name)
        return np.array([r["total"] for r in recs])


def shuffle_batches(complete_idx, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Seeded permutation cut into batches; a trailing batch of one row is merged."""
    idx = np.asarray(complete_idx, dtype=np.int64)
    order = np.random.default_rng(epoch_seed).permutation(idx)
    batches = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def evaluate_during_training(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks,
                             every_k: int, epoch: int, total_epochs: int, seed=0,
                             realign_method: str = "hungarian", imputer: str = "dual"):
    """Run the eval-mode recovery and clustering pipeline on epochs that are a
    multiple of ``every_k`` and on the final epoch. Returns a metric point or None."""
    from .inference import evaluate_recovery

    if every_k < 1:
        raise ValueError("every_k must be at least 1")
    if epoch % every_k and epoch != total_epochs:
        return None
    report, _ = evaluate_recovery(params, ds, masks, realign_method, imputer, seed=seed)
    return {"epoch": epoch, **report.metrics()}


def _stage_of(epoch: int, stage_epochs) -> tuple[int, int]:
    """(stage index, 1-based epoch within stage) for a 1-based global epoch."""
    start = 0
    for s, n in enumerate(stage_epochs):
        if epoch <= start + n:
            return s, epoch - start
        start += n
    raise IndexError(epoch)


def _tau_for(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks, cfg: TrainConfig) -> Temperature:
    x = masks.complete_idx
    z1 = encode(params, 1, ds.views[0][x])
    z2 = encode(params, 2, ds.views[1][x])
    pairs = sample_pairs(masks, x, [cfg.seed, 0, 0, 2], cfg.neg_per_pos).relative_to(x)
    return compute_tau(z1, z2, pairs)


def train(ds: MultiViewDataset, masks: PartitionMasks, config: TrainConfig,
          resume: Checkpoint | None = None, max_epochs: int | None = None):
    """Train the three-stage schedule. Returns ``(params, log, temperature)``.

    ``temperature`` is None if the contrastive loss never became active.
    ``resume`` continues from a checkpoint written by this function;
    ``max_epochs`` stops after that many global epochs (for split runs).
    """
    cfg = config
    x_idx = masks.complete_idx
    if x_idx.size < 2:
        raise DegenerateBatchError("training needs at least two complete instances")
    batch_size = min(cfg.batch_size, x_idx.size)
    total_epochs = sum(cfg.stage_epochs)
    stop = total_epochs if max_epochs is None else min(total_epochs, max_epochs)

    log = TrainLog()
    if resume is None:
        params = init_params(ds.view_dims, cfg.latent_dim, cfg.hidden, cfg.seed)
        tau = None
        done = 0
        adam = AdamState(lr=cfg.lr)
    else:
        params = resume.params.copy()
        meta = resume.meta
        done = int(meta.get("epochs_done", 0))
        tau = Temperature(*meta["tau"]) if meta.get("tau") else None
        adam = resume.adam if resume.adam is not None else AdamState(lr=cfg.lr)

    log_fh = None
    if cfg.log_path:
        log_fh = open(cfg.log_path, "a" if resume is not None else "w")
    if tau is None and cfg.tau_at == "init" and done == 0 and stop > 0 and any(
            "cl" in cfg.stage_active(s) for s in range(3) if cfg.stage_epochs[s]):
        tau = _tau_for(params, ds, masks, cfg)
    try:
        for epoch in range(done + 1, stop + 1):
            stage, stage_epoch = _stage_of(epoch, cfg.stage_epochs)
            active = cfg.stage_active(stage)
            if stage_epoch == 1:
                adam = AdamState(lr=cfg.lr)
            if "cl" in active and tau is None:
                tau = _tau_for(params, ds, masks, cfg)

            started = time.perf_counter()
            blocks = params.trainable()
            sums = {"l_cl": 0.0, "l_pre": 0.0, "l_rec": 0.0, "total": 0.0}
            seen = 0
            for b, batch in enumerate(shuffle_batches(x_idx, batch_size, [cfg.seed, epoch])):
                x1 = ds.views[0][batch]
                x2 = ds.views[1][batch]
                pairs = sample_pairs(masks, batch, [cfg.seed, epoch, b, 1], cfg.neg_per_pos)
                breakdown, grads = objective(params, x1, x2, pairs.relative_to(batch),
                                             None if tau is None else tau.tau, active,
                                             mode="train", exponents=cfg.exponents)
                if not np.isfinite(breakdown.total) or breakdown.total > cfg.max_loss:
                    raise TrainingDiverged(f"loss {breakdown.total!r} out of range", epoch, b)
                adam_step(blocks, grads, adam)
                for key in sums:
                    sums[key] += getattr(breakdown, key) * batch.size
                seen += batch.size

            record = {"epoch": epoch, "stage": STAGE_NAMES[stage], "stage_epoch": stage_epoch,
                      **{k: v / seen for k, v in sums.items()},
                      "active": sorted(active), "tau": None if tau is None else tau.tau,
                      "meta": {"wall_time": time.perf_counter() - started}}
            if cfg.eval_every:
                point = evaluate_during_training(params, ds, masks, cfg.eval_every, epoch,
                                                 total_epochs, seed=cfg.seed)
                if point is not None:
                    log.metrics.append(point)
                    record["metrics"] = {k: point[k] for k in ("nmi", "acc", "ari")}
            log.records.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()

            stage_end = stage_epoch == cfg.stage_epochs[stage]
            if cfg.checkpoint_dir and stage_end:
                Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
                save_params(params, Path(cfg.checkpoint_dir) / f"stage_{STAGE_NAMES[stage]}.hmiw",
                            adam, training_meta(cfg, epoch, tau))
            done = epoch
    finally:
        if log_fh is not None:
            log_fh.close()
    log.optimizer = adam
    return params, log, tau


def training_meta(cfg: TrainConfig, epochs_done: int, tau: Temperature | None) -> dict:
    """Checkpoint metadata; output paths are left out so reruns elsewhere match byte for byte."""
    config = cfg.to_dict()
    for key in ("log_path", "checkpoint_dir"):
        config.pop(key)
    return {"epochs_done": epochs_done,
            "tau": None if tau is None else [tau.tau, tau.n_p, tau.n_n],
            "config": config}

