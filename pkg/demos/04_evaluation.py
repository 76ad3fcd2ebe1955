"""Evaluation protocols with scripted and trivial policies.

The steering metric is checked against a constant twist, then the push
protocol is run briefly for the three robot variants with a zero-action
policy (joints held at the default pose by PD).
"""

import dataclasses

from solo9.evaluation import ScriptedTwist, eval_disturbance, eval_steering, load_protocol

steer = load_protocol("steering")
print(f"steering protocol: {steer.lin_vel} m/s forward, {steer.yaw_rates} rad/s yaw, "
      f"{steer.duration:.0f} s episodes")
rep = eval_steering(ScriptedTwist(steer.lin_vel, steer.yaw_rates[0]), steer)
print(f"scripted twist radius {rep.turning_radius:.6f} m (v/w = "
      f"{steer.lin_vel / abs(steer.yaw_rates[0]):.6f})")

push = dataclasses.replace(load_protocol("table3"), n_episodes=4, duration=3.0)
for variant in ("solo9", "solo9_fixed", "solo9_free"):
    rep = eval_disturbance(None, dataclasses.replace(push, variant=variant))
    per = ", ".join(f"{m}: {v['mean_episode_time']:.2f}s" for m, v in rep.by_magnitude.items())
    print(f"{variant:<12s} survival {rep.survival_rate:.2f}  mean time before falling ({per})")
