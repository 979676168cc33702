"""Recover a full latent matrix from corrupted data.

Missing views are imputed by the dual predictors, unaligned view-2 rows are
re-matched to view-1 rows by latent distance, and everything is stitched
back into dataset row order. All functions only look at the *observed* data
(see :func:`hmimvc.data.observed_views`); ground truth enters only through
the scoring helpers at the bottom.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import MultiViewDataset, PartitionMasks, observed_views
from .errors import AssemblyError
from .evaluation import cluster_and_score, hungarian
from .model import ModelParams, decode, encode, predict_latent

ENCODED, IMPUTED, REALIGNED = "encoded", "imputed", "realigned"


@dataclass
class ImputedLatents:
    """Latents for the missing set W, in ``masks.missing_idx`` order."""

    z1: np.ndarray
    z2: np.ndarray
    missing_view: np.ndarray


@dataclass
class RecoveredLatents:
    z: list[np.ndarray]
    provenance: np.ndarray          # (N, 2) tags
    realignment_map: np.ndarray

    @property
    def concat(self) -> np.ndarray:
        return np.hstack(self.z)

    def provenance_counts(self) -> dict[str, int]:
        tags, counts = np.unique(self.provenance, return_counts=True)
        return {str(t): int(c) for t, c in zip(tags, counts)}


def _split_missing(masks: PartitionMasks):
    w = masks.missing_idx
    return w, masks.missing_view == 1, masks.missing_view == 2


def impute_missing(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks) -> ImputedLatents:
    """Encode the present view, predict the absent view's latent."""
    x1, x2 = observed_views(ds, masks)
    w, miss1, miss2 = _split_missing(masks)
    d = params.latent_dim
    z1 = np.zeros((w.size, d))
    z2 = np.zeros((w.size, d))
    if miss1.any():
        z2[miss1] = encode(params, 2, x2[w[miss1]])
        z1[miss1] = predict_latent(params, 2, z2[miss1])
    if miss2.any():
        z1[miss2] = encode(params, 1, x1[w[miss2]])
        z2[miss2] = predict_latent(params, 1, z1[miss2])
    return ImputedLatents(z1, z2, masks.missing_view.copy())


def impute_mean_baseline(ds: MultiViewDataset, masks: PartitionMasks):
    """Raw W rows with the absent view filled by its column mean over the complete set."""
    x1, x2 = observed_views(ds, masks)
    w, miss1, miss2 = _split_missing(masks)
    x1w = x1[w].copy()
    x2w = x2[w].copy()
    x1w[miss1] = x1[masks.complete_idx].mean(axis=0)
    x2w[miss2] = x2[masks.complete_idx].mean(axis=0)
    return x1w, x2w


def impute_mean_latents(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks) -> ImputedLatents:
    x1w, x2w = impute_mean_baseline(ds, masks)
    return ImputedLatents(encode(params, 1, x1w), encode(params, 2, x2w), masks.missing_view.copy())


def realignment_costs(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks) -> np.ndarray:
    """Euclidean distances between view-1 latents and observed view-2 latents of S."""
    x1, x2 = observed_views(ds, masks)
    s = masks.unaligned_idx
    a = encode(params, 1, x1[s])
    b = encode(params, 2, x2[s])
    sq = (a * a).sum(1)[:, None] - 2.0 * a @ b.T + (b * b).sum(1)[None, :]
    return np.sqrt(np.maximum(sq, 0.0))


def greedy_match(cost) -> np.ndarray:
    """Row-by-row nearest unused column; ties go to the smaller index."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    used = np.zeros(n, dtype=bool)
    perm = np.empty(n, dtype=np.int64)
    for i in range(n):
        j = int(np.argmin(np.where(used, np.inf, cost[i])))
        perm[i] = j
        used[j] = True
    return perm


def realign(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks,
            method: str = "hungarian") -> np.ndarray:
    """``map[k] = l``: view-1 row ``S[k]`` pairs with the view-2 row observed at ``S[l]``."""
    if masks.unaligned_idx.size == 0:
        return np.zeros(0, dtype=np.int64)
    cost = realignment_costs(params, ds, masks)
    if method == "hungarian":
        return hungarian(cost)
    if method == "greedy":
        return greedy_match(cost)
    raise ValueError(f"unknown realignment method {method!r}")


def assemble(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks,
             realignment_map: np.ndarray | None, imputed: ImputedLatents | None) -> RecoveredLatents:
    x1, x2 = observed_views(ds, masks)
    s, w, x = masks.unaligned_idx, masks.missing_idx, masks.complete_idx
    if s.size and (realignment_map is None or len(realignment_map) != s.size):
        raise AssemblyError("unaligned set has not been re-aligned")
    if w.size and (imputed is None or imputed.z1.shape[0] != w.size):
        raise AssemblyError("missing set has not been imputed")

    n, d = ds.n_samples, params.latent_dim
    z1 = np.full((n, d), np.nan)
    z2 = np.full((n, d), np.nan)
    prov = np.full((n, 2), "", dtype="<U9")

    z1[x] = encode(params, 1, x1[x])
    z2[x] = encode(params, 2, x2[x])
    prov[x] = ENCODED
    if s.size:
        z1[s] = encode(params, 1, x1[s])
        z2[s] = encode(params, 2, x2[s[realignment_map]])
        prov[s] = REALIGNED
    if w.size:
        z1[w] = imputed.z1
        z2[w] = imputed.z2
        miss1 = imputed.missing_view == 1
        prov[w] = ENCODED
        prov[w[miss1], 0] = IMPUTED
        prov[w[~miss1], 1] = IMPUTED
    if np.isnan(z1).any() or np.isnan(z2).any():
        raise AssemblyError("rows left unfilled; masks do not cover the dataset")
    if realignment_map is None:
        realignment_map = np.zeros(0, dtype=np.int64)
    return RecoveredLatents([z1, z2], prov, np.asarray(realignment_map, dtype=np.int64))


def recover(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks,
            realign_method: str = "hungarian", imputer: str = "dual") -> RecoveredLatents:
    """Impute, re-align and assemble in one call."""
    if imputer == "dual":
        imputed = impute_missing(params, ds, masks)
    elif imputer == "mean":
        imputed = impute_mean_latents(params, ds, masks)
    else:
        raise ValueError(f"unknown imputer {imputer!r}")
    mapping = realign(params, ds, masks, realign_method)
    return assemble(params, ds, masks, mapping, imputed)


def decode_recovered(params: ModelParams, recovered: RecoveredLatents) -> list[np.ndarray]:
    zc = recovered.concat
    return [decode(params, v, zc) for v in (1, 2)]


def export_csv(recovered: RecoveredLatents, path, labels=None) -> None:
    """One row per instance: latent columns, provenance tags, optional label."""
    d = recovered.z[0].shape[1]
    header = [f"z1_{i}" for i in range(d)] + [f"z2_{i}" for i in range(d)] + ["prov1", "prov2"]
    if labels is not None:
        header.append("label")
    zc = recovered.concat
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(zc.shape[0]):
            row = [repr(float(v)) for v in zc[i]] + list(recovered.provenance[i])
            if labels is not None:
                row.append(int(labels[i]))
            writer.writerow(row)


def export_realignment(recovered: RecoveredLatents, masks: PartitionMasks, path) -> None:
    s = masks.unaligned_idx
    lines = ["view1_row,view2_observed_row"]
    lines += [f"{int(s[k])},{int(s[l])}" for k, l in enumerate(recovered.realignment_map)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# scoring against ground truth
# ---------------------------------------------------------------------------

def instance_alignment_accuracy(masks: PartitionMasks, realignment_map) -> float:
    if masks.unaligned_idx.size == 0:
        return 1.0
    k = np.arange(masks.unaligned_idx.size)
    return float(np.mean(masks.shuffle_perm[realignment_map] == k))


def class_alignment_accuracy(ds: MultiViewDataset, masks: PartitionMasks, realignment_map) -> float:
    """Fraction of re-matched partners that share the anchor's class."""
    s = masks.unaligned_idx
    if s.size == 0:
        return 1.0
    partner_true = s[masks.shuffle_perm[realignment_map]]
    return float(np.mean(ds.labels[partner_true] == ds.labels[s]))


def random_alignment_baseline(ds: MultiViewDataset, masks: PartitionMasks) -> float:
    """Expected class-level accuracy of a uniformly random matching."""
    labels = ds.labels[masks.unaligned_idx]
    if labels.size == 0:
        return 1.0
    frac = np.bincount(labels) / labels.size
    return float((frac ** 2).sum())


def true_missing_latents(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks):
    """Latents of the dropped views, encoded from the withheld ground truth."""
    w, miss1, _ = _split_missing(masks)
    z1 = encode(params, 1, ds.views[0][w])
    z2 = encode(params, 2, ds.views[1][w])
    return np.where(miss1[:, None], z1, z2)


def imputation_latent_mse(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks,
                          imputed: ImputedLatents) -> float:
    if masks.missing_idx.size == 0:
        return 0.0
    truth = true_missing_latents(params, ds, masks)
    miss1 = (imputed.missing_view == 1)[:, None]
    guess = np.where(miss1, imputed.z1, imputed.z2)
    return float(((guess - truth) ** 2).sum(1).mean())


def evaluate_recovery(params: ModelParams, ds: MultiViewDataset, masks: PartitionMasks,
                      realign_method: str = "hungarian", imputer: str = "dual", seed=0,
                      restarts: int = 10):
    """Recover latents, cluster them into ``ds.n_classes`` groups and score.

    Returns ``(ClusterReport, RecoveredLatents)``.
    """
    recovered = recover(params, ds, masks, realign_method, imputer)
    report = cluster_and_score(recovered.concat, ds.labels, ds.n_classes, seed=seed, restarts=restarts)
    return report, recovered
