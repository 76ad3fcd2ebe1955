"""Standing, pushing and twisting the simulated robot.

Settles the 9-DOF model under a PD hold, gives it a lateral shove, then drives
the waist to show the two trunk halves counter-rotating.
"""

import numpy as np

from solo9.physics import ArticulatedModel, apply_push
from solo9.robot import load_robot_spec

DT = 1.0 / 240.0

spec = load_robot_spec("solo9")
model = ArticulatedModel(spec, 1)
print(f"{spec.name}: {model.nj} actuated joints, mass {model.total_mass[0]:.2f} kg")


def hold(st, kp=3.0, kd=0.1):
    return kp * (model.default_pose - st.q) - kd * st.qdot


st = model.make_state(base_pos=[0.0, 0.0, model.standing_height()])
for _ in range(240):
    st = model.step(st, hold(st), DT)
fk = model.foot_kinematics(st)
print("after 1 s standing: base height %.4f m, deepest foot %.2f mm"
      % (st.base_pos[0, 2], -1e3 * fk["p_z"][0].min()))

st = apply_push(st, np.array([[0.0, 0.5]]))
peak = 0.0
for _ in range(240):
    st = model.step(st, hold(st), DT)
    peak = max(peak, abs(st.base_pos[0, 1]))
print("0.5 m/s lateral push: peak sideways drift %.3f m, upright %s"
      % (peak, bool(model.foot_kinematics(st)["contact"][0].any())))

# twist the waist with everything else held
w = model.waist_dof
for _ in range(120):
    tau = hold(st)
    tau[0, w] += 1.0
    st = model.step(st, tau, DT)
print("waist angle after 0.5 s of extra torque: %.3f rad" % st.q[0, w])
