"""Tuned correction vs confusion-matrix post-stratification, side by side.

Under a proportional construction (calibration confusion counts scaled up,
map shares held fixed, N = 100 n) the two estimators agree on the point
estimate exactly, and their standard errors converge as the survey grows.

Run: python3 demos/equivalence_check.py
"""
import numpy as np

from mapcalib.means import ppi_post_stratified_equivalence

BASE = np.array([[40, 10], [5, 45]])  # rows: map label, cols: true label

print(f"{'n':>7} {'point delta':>12} {'ppi sigma':>10} {'post sigma':>11} "
      f"{'rel sigma delta':>16}")
for scale in (1, 10, 100):
    counts = BASE * scale
    n = int(counts.sum())
    big_n = 100 * n

    # lay the survey out explicitly, then a map with the matching class share
    calib_preds = np.repeat([0.0, 0.0, 1.0, 1.0], counts.flatten())
    calib_gt = np.repeat([0.0, 1.0, 0.0, 1.0], counts.flatten())
    map_share = counts[1].sum() / n
    map_labels = np.zeros(big_n)
    map_labels[: int(round(big_n * map_share))] = 1.0

    report = ppi_post_stratified_equivalence(map_labels, calib_gt, calib_preds)
    print(f"{n:7d} {report.point_delta:12.2e} {report.ppi_sigma:10.5f} "
          f"{report.post_sigma:11.5f} {report.sigma_delta_rel:16.5f}")

print("\npoints agree to machine precision at every size; the sigma gap is "
      "the map-sampling term of the tuned estimator, and it shrinks like "
      "1/sqrt(n) as both designs grow.")
