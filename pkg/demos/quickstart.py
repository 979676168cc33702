"""Corrupt a small two-view dataset, train on what is left, recover and cluster."""
import numpy as np

from hmimvc.data import make_synthetic, normalize, simulate_corruption
from hmimvc.inference import class_alignment_accuracy, evaluate_recovery
from hmimvc.trainer import TrainConfig, train

ds = normalize(make_synthetic(600, 3, (6, 8), noise=0.1, seed=0))  # 3 blobs, views of width 6 and 8
print(ds.n_samples, "samples, view dims", ds.view_dims)

masks = simulate_corruption(ds, alpha=0.25, beta=0.25, seed=0)
print("missing", masks.missing_idx.size, "unaligned", masks.unaligned_idx.size,
      "complete", masks.complete_idx.size)  # 150 / 150 / 300

# small network so this finishes in well under a minute
cfg = TrainConfig.desk(seed=0, hidden=(64, 64, 64), batch_size=32, stage_epochs=(10, 10, 10))
params, log, tau = train(ds, masks, cfg)
print("tau", round(tau.tau, 3))
for stage in "ABC":
    totals = log.totals(stage)
    print("stage", stage, "total loss", round(totals[0], 3), "->", round(totals[-1], 3))

report, rec = evaluate_recovery(params, ds, masks, seed=0)
print(report.metrics())
print("class-level alignment", class_alignment_accuracy(ds, masks, rec.realignment_map))
print("provenance", rec.provenance_counts())
print("first recovered row", np.round(rec.concat[0], 3))
