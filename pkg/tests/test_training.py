import json
import math

import numpy as np
import pandas as pd
import pytest

import stochastic_lwr as slwr

SMALL = {
    "epochs": 6,
    "finetune_epochs": 3,
    "batch_obs": 16,
    "batch_collocation": 24,
    "batch_boundary": 4,
    "balance_every": 2,
    "depth": 1,
    "width": 6,
    "levels": 1,
    "closure_depth": 1,
    "closure_width": 4,
    "learning_rate": 1e-2,
}


@pytest.fixture
def traffic():
    profile = slwr.InitialProfile("sine", (0.4, 0.1, 1))
    return slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.2), initial=profile, horizon=0.5)


@pytest.fixture
def obs(traffic):
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 1.0, 40)
    t = rng.uniform(0.0, 0.5, 40)
    rho = np.clip(traffic.rho0(x) + rng.normal(0, 0.02, 40), 0.05, 0.95)
    return slwr.ObservationSet.from_arrays(traffic, x, t, rho)


@pytest.fixture
def config():
    return slwr.load_train_config(**SMALL)


def test_default_config():
    config = slwr.load_train_config()
    assert config.n_scales == 5
    assert config.lambda_pf == 1.0
    assert config.lambda_bc == 0.1
    assert (config.depth, config.width, config.levels) == (4, 64, 4)
    assert config.finetune_tol == 1e-6


def test_dsm_scales():
    config = slwr.TrainConfig()
    scales = config.dsm_scales(2.0)
    assert scales[0] == pytest.approx(0.2)
    assert scales[-1] == pytest.approx(0.01)
    assert np.all(np.diff(scales) < 0)
    assert np.allclose(np.diff(np.log(scales)), np.log(scales[1] / scales[0]))
    weights = config.dsm_weights(2.0)
    assert weights.sum() == pytest.approx(1.0)
    assert weights[0] / weights[1] == pytest.approx((scales[0] / scales[1]) ** 2)


@pytest.mark.parametrize(
    ("overrides", "match"),
    [
        ({"lambda_pf": -1.0}, "non-negative"),
        ({"scale_min": 0.2}, "scale_min < scale_max"),
        ({"batch_obs": 0}, "batch_obs must be positive"),
        ({"closure": "mystery"}, "mystery"),
        ({"unknown_option": 1}, "unknown_option"),
    ],
)
def test_invalid_config(overrides, match):
    with pytest.raises(slwr.ConfigurationError, match=match):
        slwr.load_train_config(**overrides)


def test_config_file(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"epochs": 7, "closure": "direct"}))
    config = slwr.load_train_config(path, seed=3)
    assert config.epochs == 7
    assert config.closure == "direct"
    assert config.seed == 3
    assert config.to_dict()["epochs"] == 7


def test_speed_observations(traffic):
    obs = slwr.ObservationSet.from_arrays(traffic, [0.2, 0.4], 0.1, [0.75, 0.5], kind="u")
    assert np.allclose(obs.densities[:, 2], [0.25, 0.5])
    assert len(obs) == 2
    assert obs.rho_max == 1.0


@pytest.mark.parametrize(
    ("x", "t", "value", "kind"),
    [
        (0.5, 0.1, 1.0, "rho"),
        (0.5, 0.1, 0.0, "rho"),
        (0.5, 0.1, 1.5, "u"),
        (1.5, 0.1, 0.5, "rho"),
        (0.5, 0.6, 0.5, "rho"),
    ],
)
def test_observation_out_of_domain(traffic, x, t, value, kind):
    with pytest.raises(slwr.DomainError):
        slwr.ObservationSet.from_arrays(traffic, x, t, value, kind=kind)


def test_observation_kinds(traffic):
    frame = pd.DataFrame({"x": [0.1], "t": [0.1], "kind": ["q"], "value": [0.2]})
    with pytest.raises(ValueError, match="'rho' or 'u'"):
        slwr.ObservationSet(frame, traffic)
    with pytest.raises(ValueError, match="lacks columns"):
        slwr.ObservationSet(frame.drop(columns="kind"), traffic)


def test_observation_csv(tmp_path, traffic, obs):
    obs.to_csv(tmp_path / "obs.csv")
    read = slwr.ObservationSet.from_csv(tmp_path / "obs.csv", traffic)
    assert np.allclose(read.densities, obs.densities)

    (tmp_path / "plain.csv").write_text("x,t,kind,value\n0.5,0.1,rho,0.3\n0.6,0.2,u,0.6\n")
    plain = slwr.ObservationSet.from_csv(tmp_path / "plain.csv", traffic)
    assert np.allclose(plain.densities[:, 2], [0.3, 0.4])


def test_observations_from_ensemble(traffic):
    grid = slwr.make_grid(traffic, 16, 20, store_every=5)
    ens = slwr.simulate_ensemble(traffic, grid, 10, seed=1)
    obs = slwr.observations_from_ensemble(ens, [2, 8], [1, 4], n_per_point=5, seed=0)
    assert len(obs) == 20
    assert set(np.round(obs.densities[:, 0], 12)) == set(np.round(grid.x[[2, 8]], 12))
    assert set(obs.densities[:, 1]) == {ens.stored_times[1], ens.stored_times[4]}


def test_train_is_reproducible(obs, traffic, config):
    first = slwr.train(obs, traffic, config)
    second = slwr.train(obs, traffic, config)
    assert np.array_equal(first.score.params, second.score.params)
    assert np.array_equal(first.closure.params, second.closure.params)
    pd.testing.assert_frame_equal(first.log, second.log)


def test_train_log(obs, traffic, config):
    seen = []
    result = slwr.train(obs, traffic, config, callback=lambda epoch, row: seen.append(epoch))
    assert list(result.log.columns) == [
        "epoch",
        "phase",
        "learning_rate",
        "loss",
        "dsm",
        "physics",
        "boundary",
        "lambda_pf",
        "lambda_bc",
        "alpha_0",
    ]
    assert seen == list(range(len(result.log)))
    assert set(result.log["phase"]) <= {"warm", "finetune"}
    assert (result.log["phase"] == "warm").sum() == 6
    assert result.log["learning_rate"].iloc[0] == pytest.approx(1e-2)
    assert np.all(np.isfinite(result.log["loss"]))
    assert not np.array_equal(result.score.params, slwr.ScoreModel(1.0, 1.0, 0.5, 1, 6, 1).params)


def test_frozen_closure_is_kept(obs, traffic, config):
    frozen = slwr.ClosureModel.zero(1.0, 1.0, 0.5, depth=1, width=4, levels=1)
    result = slwr.train(obs, traffic, config, closure=frozen)
    assert np.all(result.closure.params == 0.0)
    assert np.allclose(result.traffic.noise.alphas, [0.2])


def test_learn_noise_without_physics_keeps_alpha(obs, traffic):
    config = slwr.load_train_config(**(SMALL | {"lambda_pf": 0.0, "lambda_bc": 0.0}))
    result = slwr.learn_noise(obs, traffic, config)
    assert result.traffic.noise.alphas[0] == pytest.approx(0.2, rel=1e-12)
    assert np.all(result.log["physics"] == 0.0)


def test_learn_noise_moves_alpha(obs, traffic, config):
    result = slwr.learn_noise(obs, traffic, config)
    assert result.traffic.noise.alphas[0] != pytest.approx(0.2, rel=1e-6)
    assert result.log["alpha_0"].iloc[0] == pytest.approx(0.2)


def test_learn_noise_needs_positive_alpha(obs, config):
    quiet = slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.0), horizon=0.5)
    with pytest.raises(slwr.ConfigurationError, match="positive initial amplitudes"):
        slwr.learn_noise(obs, quiet, config)


def test_divergence_is_reported(obs, traffic, config):
    huge = slwr.ScoreModel(1.0, 1.0, 0.5, depth=0, levels=1, params=np.full(6, 1e5))
    with pytest.raises(slwr.TrainingDivergedError) as excinfo:
        slwr.train(obs, traffic, config, score=huge)
    assert excinfo.value.epoch == 0
    assert excinfo.value.checkpoint is None


def test_checkpoint_round_trip(tmp_path, obs, traffic, config):
    result = slwr.learn_noise(obs, traffic, config)
    result.save(tmp_path / "model.ckpt")
    loaded = slwr.load_checkpoint(tmp_path / "model.ckpt", traffic)
    assert np.array_equal(loaded.score.params, result.score.params)
    assert np.array_equal(loaded.closure.params, result.closure.params)
    assert loaded.closure.kind is result.closure.kind
    assert np.allclose(loaded.traffic.noise.alphas, result.traffic.noise.alphas, rtol=1e-14)
    rho = np.array([0.3, 0.6])
    assert np.array_equal(loaded.score(rho, 0.5, 0.2), result.score(rho, 0.5, 0.2))


def test_checkpoint_keeps_frozen_closure(tmp_path, traffic):
    score = slwr.ScoreModel(1.0, 1.0, 0.5, depth=1, width=4, levels=1)
    closure = slwr.ClosureModel.zero(1.0, 1.0, 0.5, depth=1, width=5, levels=2)
    slwr.save_checkpoint(tmp_path / "model.ckpt", slwr.TrainedModels(score, closure, traffic))
    loaded = slwr.load_checkpoint(tmp_path / "model.ckpt", traffic).closure
    assert loaded.frozen
    assert loaded.levels == 2
    assert loaded.n_params == closure.n_params
    assert not np.any(loaded.params)


def test_checkpoint_domain_mismatch(tmp_path, traffic):
    score = slwr.ScoreModel(1.0, 1.0, 0.5, depth=1, width=4, levels=1)
    closure = slwr.ClosureModel("direct", 1.0, 1.0, 0.5, depth=1, width=4, levels=1)
    slwr.save_checkpoint(tmp_path / "model.ckpt", slwr.TrainedModels(score, closure, traffic))
    longer = slwr.traffic_model(length=2.0, horizon=0.5)
    with pytest.raises(slwr.ConfigurationError, match="does not match"):
        slwr.load_checkpoint(tmp_path / "model.ckpt", longer)


def test_checkpoint_corruption(tmp_path, traffic):
    score = slwr.ScoreModel(1.0, 1.0, 0.5, depth=1, width=4, levels=1)
    closure = slwr.ClosureModel("direct", 1.0, 1.0, 0.5, depth=1, width=4, levels=1)
    path = tmp_path / "model.ckpt"
    slwr.save_checkpoint(path, slwr.TrainedModels(score, closure, traffic))
    raw = bytearray(path.read_bytes())
    raw[40] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(RuntimeError, match="Checksum mismatch"):
        slwr.load_checkpoint(path, traffic)


ACCEPTANCE = {
    "epochs": 3000,
    "finetune_epochs": 200,
    "n_scales": 1,
    "scale_max": 0.02,
    "scale_min": 0.02,
    "batch_obs": 256,
    "batch_collocation": 256,
    "batch_boundary": 32,
    "balance_every": 100,
    "depth": 2,
    "width": 32,
    "levels": 2,
    "closure_depth": 1,
    "closure_width": 8,
    "learning_rate": 5e-3,
}


def diffusion_reference(traffic, width):
    """FPE law at the centre of a spatially constant pure-diffusion run, stored every 0.01."""
    mesh = slwr.DensityMesh(200, 1.0)
    init = slwr.mollified_delta(mesh, 0.5, width)
    span = (0.0, traffic.horizon)
    levels = round(traffic.horizon / 0.01)
    bound = slwr.stability_bound(traffic, slwr.ZeroClosure(), mesh, 0.5, span)
    steps = levels * math.ceil(traffic.horizon / bound / levels)
    return slwr.solve_fpe(traffic, slwr.ZeroClosure(), 0.5, mesh, span, traffic.horizon / steps, init, steps // levels)


def observations_from_reference(traffic, reference, per_level, seed):
    rng = np.random.default_rng(seed)
    t = np.repeat(reference.times[1:], per_level)
    rho = np.concatenate(
        [slwr.sample_particles(reference, j, per_level, seed + j).positions for j in range(1, len(reference.times))]
    )
    return slwr.ObservationSet.from_arrays(traffic, rng.uniform(0.0, 1.0, t.size), t, rho)


def untrained_zero_closure(config, traffic):
    closure = slwr.ClosureModel(
        config.closure, 1.0, 1.0, traffic.horizon, config.closure_depth, config.closure_width, config.levels
    )
    closure.params = np.zeros_like(closure.params)
    return closure


@pytest.mark.slow
def test_joint_training_reproduces_pure_diffusion():
    toy = slwr.traffic_model(noise=slwr.constant_diffusion(0.05), initial=0.5, horizon=0.5)
    config = slwr.load_train_config(**(ACCEPTANCE | {"mollifier_width": 0.1}))
    reference = diffusion_reference(toy, 0.1)
    obs = observations_from_reference(toy, reference, 40, seed=4)
    result = slwr.train(obs, toy, config, closure=untrained_zero_closure(config, toy))
    for t in (0.1, 0.25, 0.5):
        d = slwr.recover_density(slwr.LearnedScore(result.score, 0.5), x=0.5, t=t)
        distance = slwr.operations.total_variation(d, reference, t_index=reference.time_index(t))
        assert distance <= 0.05, (t, distance)


@pytest.mark.slow
def test_learn_noise_recovers_alpha():
    truth = slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.2), initial=0.5, horizon=1.0)
    config = slwr.load_train_config(**(ACCEPTANCE | {"mollifier_width": 0.05}))
    reference = diffusion_reference(truth, 0.05)
    obs = observations_from_reference(truth, reference, 20, seed=8)
    guess = truth.with_noise(slwr.quadratic_noise(alpha=0.05))
    result = slwr.learn_noise(obs, guess, config, closure=untrained_zero_closure(config, guess))
    assert result.traffic.noise.alphas[0] == pytest.approx(0.2, rel=0.3)
