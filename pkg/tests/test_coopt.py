import json

import numpy as np
import pytest

from solo9.coopt import (IterationFailed, IterationPlan, IterationSpec, PlanError, load_plan,
                         make_variant, plan_from_dict, run_iteration, run_plan, verify_lineage)
from solo9.dataset import augment_zero_waist, fixture_trot_gait, load_dataset, save_dataset
from solo9.discriminator import DiscriminatorConfig
from solo9.policy import PPOConfig, read_metrics


@pytest.fixture(scope="module")
def ds0():
    return augment_zero_waist(fixture_trot_gait(n_clips=2, n_frames=96))


def small_plan(ws=(0.3, 0.5), **it):
    kw = dict(updates=2, steps=8, rollouts=4, rollout_steps=24, tracking_gate=10.0)
    kw.update(it)
    return IterationPlan(iterations=[IterationSpec(w_I=w, **kw) for w in ws], n_envs=4,
                         disc=DiscriminatorConfig(hidden=(16,), batch=32),
                         ppo=PPOConfig(hidden=(16,)))


def test_plan_validation():
    with pytest.raises(PlanError):
        small_plan(ws=(0.5, 0.3)).validate()
    with pytest.raises(PlanError):
        small_plan(ws=(0.3, 1.2)).validate()
    with pytest.raises(PlanError):
        IterationPlan(iterations=[]).validate()
    with pytest.raises(PlanError):
        plan_from_dict({"iteration": [{"w_I": 0.1, "nope": 1}]})
    assert [it.w_I for it in IterationPlan().iterations] == [0.3, 0.5, 0.7]


def test_plan_file(tmp_path):
    p = tmp_path / "p.toml"
    p.write_text('n_envs = 8\nvariant = "solo9_fixed"\n[defaults]\nupdates = 3\n'
                 '[[iteration]]\nw_I = 0.2\n[[iteration]]\nw_I = 0.6\nupdates = 5\n'
                 '[disc]\nhidden = [32, 32]\n[env.sim]\nfriction = 0.9\n')
    plan = load_plan(p)
    assert plan.n_envs == 8 and plan.variant == "solo9_fixed"
    assert [it.updates for it in plan.iterations] == [3, 5]
    assert plan.disc.hidden == (32, 32) and plan.env.sim.friction == 0.9


def test_variants():
    spec, free = make_variant("solo9_fixed")
    assert spec.n_actuated == 8 and not free
    spec, free = make_variant("solo9_free")
    assert spec.n_actuated == 9 and free
    with pytest.raises(ValueError):
        make_variant("solo12")


def test_export_zero_keeps_dataset(ds0):
    plan = small_plan(ws=(0.3,), export_episodes=0)
    out, ac, disc, rep = run_iteration(plan.iterations[0], ds0, None, None, plan, seed=0)
    assert out is ds0 and rep["exported"] == 0
    assert ac is not None and disc is not None


def test_iteration_counter_and_report(ds0):
    plan = small_plan(ws=(0.3,))
    out, *_, rep = run_iteration(plan.iterations[0], ds0, None, None, plan, seed=1)
    assert out.iteration == ds0.iteration + 1
    assert out.provenance["parent_hash"] == ds0.content_hash()
    for k in ("tracking_error", "survival_rate", "mean_r_I"):
        assert np.isfinite(rep[k])


def test_no_eligible_rollouts_fails(ds0):
    plan = small_plan(ws=(0.3,), tracking_gate=0.0)
    with pytest.raises(IterationFailed) as exc:
        run_iteration(plan.iterations[0], ds0, None, None, plan, seed=0)
    assert exc.value.report["eligible"] == 0


def test_plan_lineage_reproducible(tmp_path, ds0):
    plan = small_plan()
    a = run_plan(plan, ds0, seed=3, out_dir=tmp_path / "a")
    b = run_plan(small_plan(), ds0, seed=3, out_dir=tmp_path / "b")
    assert [e["dataset_hash"] for e in a["lineage"]] == [e["dataset_hash"] for e in b["lineage"]]
    assert verify_lineage(tmp_path / "a")
    for sub in ("datasets/iter_0.mds", "datasets/iter_2.mds", "checkpoints/iter_1.npz",
                "reports/iter_1.json", "lineage.json", "metrics.csv"):
        assert (tmp_path / "a" / sub).exists()
    m = read_metrics(tmp_path / "a" / "metrics.csv")
    for it, w in enumerate((0.3, 0.5)):
        assert np.all(m["w_I"][m["iteration"] == it] == w)
    # tampering with a stored dataset breaks verification
    p = tmp_path / "a" / "datasets" / "iter_1.mds"
    ds = load_dataset(p)
    ds.clips[0][0, 0] += 1.0
    save_dataset(ds, p)
    assert not verify_lineage(tmp_path / "a")


def test_failure_keeps_lineage(tmp_path, ds0):
    plan = small_plan()
    plan.iterations[1].tracking_gate = 0.0
    with pytest.raises(IterationFailed):
        run_plan(plan, ds0, seed=0, out_dir=tmp_path)
    lineage = json.loads((tmp_path / "lineage.json").read_text())
    assert [e["iteration"] for e in lineage] == [0, 1]
    assert "failed" in json.loads((tmp_path / "reports" / "iter_1.json").read_text())


def test_rejects_non_origin_dataset(ds0):
    with pytest.raises(PlanError):
        run_plan(small_plan(), ds0.copy(iteration=2), seed=0)
