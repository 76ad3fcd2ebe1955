"""From an 8-DOF trot to 9-DOF discriminator windows.

Walks through the motion-data side of the pipeline: build the synthetic trot
fixture, insert the zero waist channel, look at what the discriminator sees,
and round-trip the result through both file formats.
"""

import tempfile
from pathlib import Path

import numpy as np

from solo9.dataset import (DISC_OBS_LAYOUT, augment_zero_waist, drop_waist,
                           extract_discriminator_obs, fixture_trot_gait, load_dataset,
                           sample_windows, save_dataset)
from solo9.evaluation import replay_clip

solo8 = fixture_trot_gait(n_clips=2, n_frames=240)
print(f"solo8 fixture: {len(solo8.clips)} clips, {solo8.dof} joints, "
      f"{solo8.clips[0].shape[1]} columns per frame")

# the waist is inserted as an all-zero joint, so the original is recoverable
solo9 = augment_zero_waist(solo8)
print("augmented dof:", solo9.dof, "| drop_waist recovers solo8:", drop_waist(solo9) == solo8)

obs = extract_discriminator_obs(solo9.clips[0])
print("discriminator features per frame:", obs.shape[1])
for name, sl in DISC_OBS_LAYOUT.items():
    print(f"  {name:<12s} {sl}")

windows, _ = sample_windows(solo9, 4, 2, rng=np.random.default_rng(0))
print("a batch of transition windows:", windows.shape)

with tempfile.TemporaryDirectory() as tmp:
    for suffix in (".mds", ".txt"):
        path = save_dataset(solo9, Path(tmp) / f"trot{suffix}")
        back = load_dataset(path)
        print(f"{suffix} round trip exact: {back == solo9} ({path.stat().st_size} bytes)")

# forward kinematics replay appends world foot positions to every frame
rep = replay_clip(solo9, 0)
feet = rep.clips[0][:, -12:].reshape(-1, 4, 3)
print("lowest foot height over the clip: %.4f m" % feet[..., 2].min())
