"""Coverage of corrected vs naive intervals as map error grows.

Sweeps the resampling probability of a label-flipping error process from
0 to 0.8 and reports, per level, how often each estimator's 95% interval
contains the true mean. The naive map interval collapses once errors bite;
the corrected interval holds its nominal rate at every level.

Run: python3 demos/error_sweep.py   (about half a minute on one core)
"""
from mapcalib.simulate import ScenarioSpec, run_scenario, summarize_sweep

spec = ScenarioSpec(
    task="mean",
    levels=(0.0, 0.2, 0.4, 0.6, 0.8),
    replications=60,
    n=150,
    N=8_000,
    estimators=("gt_only", "map_only", "ppi"),
    mean_value=0.35,
    error_kind="bernoulli",
    error_params={"vary": "resample_prob", "label_prob": 0.5},
    b=150,
    base_seed=42,
)

rows = run_scenario(spec, workers=1)
summary = {(e["level"], e["estimator"]): e for e in summarize_sweep(rows)}

print(f"replications per cell: {spec.replications}\n")
print(f"{'error level':>12} {'survey cov':>11} {'map cov':>8} "
      f"{'corrected cov':>14} {'corrected width':>16}")
for level in spec.levels:
    parts = [summary[(level, name)] for name in spec.estimators]
    print(f"{level:12.1f} {parts[0]['coverage']:11.2f} "
          f"{parts[1]['coverage']:8.2f} {parts[2]['coverage']:14.2f} "
          f"{parts[2]['mean_width']:16.4f}")

print("\nthe map column's coverage decays toward zero as flips accumulate; "
      "the corrected column stays near 0.95 at every level. The price is "
      "width: nearly free while the map is good, growing toward (even past) "
      "the survey-only interval once the map is pure noise. The tuned "
      "variant caps that cost by downweighting a useless map.")
