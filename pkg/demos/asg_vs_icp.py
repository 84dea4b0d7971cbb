"""Small harness run: ASG registration against point-to-point ICP.

Runs a few seeded cases per error bucket on the house scene with known
intrinsics and prints per-bucket success counts and final errors for both
methods. The full sweep used by the acceptance tests is
``asgreg evaluate --intrinsics-mode known``.

    python3 demos/asg_vs_icp.py [trials]
"""

import sys

from asgreg.evaluation import evaluate, make_test_cases, summarize
from asgreg.pipeline import RegistrationConfig
from asgreg.scenes import make_synthetic_scene

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 3
scene = make_synthetic_scene("house", seed=0)
cases = make_test_cases(scene, (30.0, 100.0), trials=trials, seed=0)

for mode in ("asg", "icp"):
    results = evaluate(scene, cases, RegistrationConfig(intrinsics_mode="known"), mode=mode)
    for s in summarize(results):
        print(f"{mode:3s} {s.target:5.0f} px: {s.successes}/{s.cases} succeeded, "
              f"final {s.mean:.2f} +- {s.std:.2f} px (min {s.min:.2f}, max {s.max:.2f})")
