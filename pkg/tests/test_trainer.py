import json

import numpy as np
import pytest

from fewview import dataset as dsio
from fewview.errors import NonFiniteGradient, ParseError
from fewview.renderer import ParamGrads
from fewview.trainer import (OptimizerState, StageSchedule, TrainConfig, Trainer,
                             learning_rates, optimizer_step, random_init_scene,
                             run_training)

from conftest import random_scene


def _toy(seed=0, **kw):
    return dsio.generate_toy_scene(seed, dsio.ToyParams(**kw))


def _toy_config(**kw):
    base = dict(iters_pretrain=30, iters_intermediate=30, iters_tune=10,
                n_init=60, sh_degree=1, checkpoint_interval=0,
                densify_start=10, densify_grad=4e-5, max_gaussians=150, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_default_schedule_and_weights():
    cfg = TrainConfig()
    assert (cfg.iters_pretrain, cfg.iters_intermediate, cfg.iters_tune) \
        == (2000, 7500, 500)
    assert (cfg.lambda_photo, cfg.chi_opacity, cfg.zeta_locality) \
        == (1.0, 0.001, 0.001)
    assert (cfg.kappa_consistency, cfg.eta_pretrain) == (1.0, 0.05)
    assert (cfg.alpha_geom, cfg.beta_color, cfg.gamma_sem) == (0.5, 0.05, 0.001)
    assert (cfg.theta_g, cfg.theta_grad) == (10.0, 0.1)
    sched = cfg.schedule()
    assert sched.total == 10000
    assert sched.stage_of(0) == "pretrain"
    assert sched.stage_of(1999) == "pretrain"
    assert sched.stage_of(2000) == "intermediate"
    assert sched.stage_of(9499) == "intermediate"
    assert sched.stage_of(9500) == "tune"


def test_schedule_rejects_negative():
    with pytest.raises(ValueError):
        StageSchedule(iters_pretrain=-1)


def test_config_from_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"iters_pretrain": 5, "lambda_photo": 0.5,
                                "single_stage": True}))
    cfg = TrainConfig.from_file(path)
    assert cfg.iters_pretrain == 5
    assert cfg.lambda_photo == 0.5
    assert cfg.single_stage is True


def test_config_from_keyvalue(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\niters_tune = 7\ntheta_g=3.5\n")
    cfg = TrainConfig.from_file(path)
    assert cfg.iters_tune == 7
    assert cfg.theta_g == 3.5


def test_config_unknown_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"no_such_knob": 1}))
    with pytest.raises(ParseError):
        TrainConfig.from_file(path)


def test_adam_zero_gradient_noop(rng):
    scene = random_scene(rng, n=4)
    means0 = scene.means.copy()
    state = OptimizerState.for_scene(scene)
    lrs = learning_rates(TrainConfig(), 1.0, 0, 100, scene.sh.shape[1])
    optimizer_step(state, ParamGrads.zeros_like(scene), scene, lrs)
    assert np.allclose(scene.means, means0)
    assert state.step == 1


def test_adam_first_step_is_signed_lr(rng):
    scene = random_scene(rng, n=2)
    state = OptimizerState.for_scene(scene)
    grads = ParamGrads.zeros_like(scene)
    grads.opacity_logits[:] = np.array([0.3, -0.7])
    before = scene.opacity_logits.copy()
    lrs = {g: 0.0 for g in ("means", "quats", "log_scales", "sh")}
    lrs["opacity_logits"] = 0.05
    optimizer_step(state, grads, scene, lrs)
    step = scene.opacity_logits - before
    # first Adam step is -lr * sign(g) up to the epsilon correction
    assert np.allclose(step, [-0.05, 0.05], atol=1e-6)


def test_adam_nonfinite_raises(rng):
    scene = random_scene(rng, n=2)
    state = OptimizerState.for_scene(scene)
    grads = ParamGrads.zeros_like(scene)
    grads.means[0, 0] = np.nan
    with pytest.raises(NonFiniteGradient):
        optimizer_step(state, grads, scene, {})


def test_adam_quadratic_convergence(rng):
    """Means converge on a quadratic bowl."""
    scene = random_scene(rng, n=3)
    target = rng.normal(size=(3, 3))
    state = OptimizerState.for_scene(scene)
    lrs = {"means": 0.05, "quats": 0.0, "log_scales": 0.0,
           "opacity_logits": 0.0, "sh": 0.0}
    for _ in range(300):
        grads = ParamGrads.zeros_like(scene)
        grads.means[...] = 2 * (scene.means - target)
        optimizer_step(state, grads, scene, lrs)
    assert np.max(np.abs(scene.means - target)) < 1e-3


def test_moment_remap(rng):
    scene = random_scene(rng, n=5)
    state = OptimizerState.for_scene(scene)
    state.m["means"][:] = np.arange(5)[:, None].astype(float)
    keep = np.array([0, 2, 4])
    state.remap(keep, n_added=2)
    assert state.m["means"].shape == (5, 3)
    assert np.allclose(state.m["means"][:3, 0], [0, 2, 4])
    assert np.all(state.m["means"][3:] == 0)


def test_mean_lr_decays_exponentially():
    cfg = TrainConfig()
    lr0 = learning_rates(cfg, 2.0, 0, 10000, 1)["means"]
    lr_end = learning_rates(cfg, 2.0, 10000, 10000, 1)["means"]
    assert lr0 == pytest.approx(2.0 * 1.6e-4)
    assert lr_end == pytest.approx(2.0 * 1.6e-6)


def test_random_init_properties(rng):
    _, data, _ = _toy()
    cfg = TrainConfig(n_init=200, sh_degree=1, init_opacity=0.1)
    scene = random_init_scene(data, cfg, rng)
    assert len(scene) == 200
    assert np.allclose(scene.opacities, 0.1, atol=1e-9)
    assert scene.sh.shape == (200, 4, 3)
    assert scene.active_sh_degree == 0


def test_short_training_reduces_loss():
    _, data, matches = _toy()
    cfg = _toy_config()
    scene, log = run_training(data, matches, cfg)
    records = [json.loads(l) for l in log]
    losses = [r["loss"] for r in records if "loss" in r and r["stage"] == "pretrain"]
    assert losses[-1] < losses[0]


def test_stage_boundaries_in_log():
    _, data, matches = _toy()
    cfg = _toy_config()
    _, log = run_training(data, matches, cfg)
    starts = {r["stage"]: r["iter"] for r in map(json.loads, log)
              if r.get("event") == "stage_start"}
    assert starts == {"pretrain": 0, "intermediate": 30, "tune": 60}


def test_training_determinism():
    _, data, matches = _toy()
    cfg = _toy_config()
    scene1, log1 = run_training(data, matches, cfg)
    scene2, log2 = run_training(data, matches, cfg)
    assert log1 == log2
    assert np.array_equal(scene1.means, scene2.means)


def test_degenerate_schedule_is_plain_photometric():
    _, data, matches = _toy()
    cfg = _toy_config(iters_pretrain=40, iters_intermediate=0, iters_tune=0)
    scene, log = run_training(data, matches, cfg)
    stages = {json.loads(l).get("stage") for l in log}
    assert "intermediate" not in stages


def test_single_stage_mode():
    _, data, matches = _toy()
    cfg = _toy_config(single_stage=True)
    _, log = run_training(data, matches, cfg)
    stages = {json.loads(l).get("stage") for l in log if "stage" in json.loads(l)}
    assert stages == {"single"}


def test_densification_remaps_moments():
    _, data, matches = _toy()
    cfg = _toy_config(iters_pretrain=60, iters_intermediate=0, iters_tune=0,
                      densify_interval=20, densify_grad=1e-6, densify_start=0,
                      densify_stop_margin=0)
    trainer = Trainer(data, matches, cfg)
    trainer.run()
    for g in trainer.opt.m:
        assert trainer.opt.m[g].shape == getattr(trainer.scene, g).shape


def test_trainer_requires_two_views():
    _, data, matches = _toy()
    solo = dsio.Dataset(data.views[:1], data.images[:1], ["train"],
                        data.names[:1], data.scene_extent)
    with pytest.raises(ValueError):
        Trainer(solo, [], _toy_config())


def test_checkpoints_written(tmp_path):
    _, data, matches = _toy()
    cfg = _toy_config(checkpoint_interval=40)
    run_training(data, matches, cfg, out_dir=tmp_path)
    assert (tmp_path / "scene.ply").exists()
    assert (tmp_path / "checkpoint_000040.ply").exists()
    assert (tmp_path / "train_log.jsonl").exists()
