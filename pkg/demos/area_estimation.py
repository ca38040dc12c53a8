"""Estimate a land-cover class share from a binary map plus a field survey.

The map labels every pixel but confuses the two classes some of the time.
Five estimators of the true cover fraction are compared: survey-only,
map-only (biased), the corrected mean, its variance-tuned variant, and the
confusion-matrix post-stratified estimator.

Run: python3 demos/area_estimation.py
"""
import numpy as np

from mapcalib.data import RngSeed
from mapcalib.means import (
    ConfusionCounts,
    gt_only_mean,
    map_only_mean,
    plugin_lambda,
    post_stratified_area,
    ppi_mean,
    ppi_mean_tuned,
)

TRUE_SHARE = 0.35
N, n = 100_000, 400
rng = RngSeed(21).generator()

# =====================================================================
# Population: true labels, then a map that flips 25% of zeros up but
# only 5% of ones down (heavy commission error inflates the class).
# =====================================================================
gt = (rng.random(N) < TRUE_SHARE).astype(float)
flip = np.where(gt == 1.0, rng.random(N) < 0.05, rng.random(N) < 0.25)
map_labels = np.where(flip, 1.0 - gt, gt)

calibration = np.sort(rng.choice(N, size=n, replace=False))
calib_gt = gt[calibration]
calib_preds = map_labels[calibration]

# =====================================================================
# Estimators.
# =====================================================================
results = {
    "survey only": gt_only_mean(calib_gt),
    "map only": map_only_mean(map_labels),
    "corrected": ppi_mean(map_labels, calib_gt, calib_preds),
    "corrected, tuned": ppi_mean_tuned(map_labels, calib_gt, calib_preds),
}

counts = ConfusionCounts.from_labels(calib_preds, calib_gt, num_classes=2)
share_one = float(map_labels.mean())
results["post-stratified"] = post_stratified_area(
    counts, areas=(1.0 - share_one, share_one), j=1)

lam = plugin_lambda(map_labels, calib_gt, calib_preds).lam
print(f"true cover share {TRUE_SHARE:.3f}, map share {share_one:.3f}, "
      f"tuning weight {lam:.3f}\n")
print(f"{'estimator':>18} {'point':>8} {'sigma':>8} {'95% interval':>20} {'hit':>4}")
for name, est in results.items():
    lo, hi = est.interval
    hit = "yes" if lo <= TRUE_SHARE <= hi else "NO"
    print(f"{name:>18} {est.theta:8.4f} {est.sigma:8.4f} "
          f"[{lo:8.4f},{hi:8.4f}] {hit:>4}")

print("\nmap-only lands far from the truth with a tiny interval; every "
      "survey-anchored estimator stays honest, and the corrected ones are "
      "tighter than the survey alone.")
