"""A tiny three-iteration co-optimization run.

Trains against the fixture trot with an increasing imitation weight, exports
guided rollouts after each iteration and writes the lineage directory.  The
budget is deliberately small, so expect a couple of minutes and a wobbly robot.
"""

import sys
import tempfile
from pathlib import Path

from solo9.coopt import IterationPlan, IterationSpec, run_plan, verify_lineage
from solo9.dataset import augment_zero_waist, fixture_trot_gait
from solo9.discriminator import DiscriminatorConfig
from solo9.policy import PPOConfig, read_metrics

updates = int(sys.argv[1]) if len(sys.argv) > 1 else 10
plan = IterationPlan(
    iterations=[IterationSpec(w_I=w, updates=updates, rollouts=16, rollout_steps=96,
                              tracking_gate=1.0) for w in (0.3, 0.5, 0.7)],
    n_envs=16, disc=DiscriminatorConfig(hidden=(64, 64), batch=256),
    ppo=PPOConfig(hidden=(64, 64)))

out = Path(tempfile.mkdtemp(prefix="solo9_coopt_"))
res = run_plan(plan, augment_zero_waist(fixture_trot_gait()), seed=0, out_dir=out)

for rep in res["reports"]:
    print(f"iteration {rep['iteration']}  w_I {rep['w_I']:.1f}  mean r_I {rep['mean_r_I']:.3f}  "
          f"survival {rep['survival_rate']:.2f}  exported {rep['exported']}")
for entry in res["lineage"]:
    print(f"  dataset {entry['iteration']}: {entry['dataset_hash'][:16]}")
print("lineage verifies:", verify_lineage(out))

m = read_metrics(out / "metrics.csv")
print("last-update discriminator scores: expert %.2f, policy %.2f"
      % (m["disc_d_expert"][-1], m["disc_d_policy"][-1]))
print("artifacts in", out)
