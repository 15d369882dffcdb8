import numpy as np
import pytest

import stochastic_lwr as slwr
from stochastic_lwr._score import bc_terms, dsm_perturbations, dsm_terms, encode, encode_derivative, physics_terms

SIGMA2 = 0.01
VAR0 = 0.05**2


def variance(t):
    return VAR0 + SIGMA2 * t


def gaussian():
    return slwr.AnalyticScore(
        lambda r, x, t: -(r - 0.5) / variance(t),
        d_rho=lambda r, x, t: -1.0 / variance(t),
        d_t=lambda r, x, t: (r - 0.5) * SIGMA2 / variance(t) ** 2,
    )


@pytest.fixture
def traffic():
    noise = slwr.NoiseStructure(
        [slwr.NoiseMode(0.3, (1.0, 0.5)), slwr.NoiseMode(0.2, (1.0,), slwr.SpatialBasis("sin", 1.0))],
        rho_max=1.0,
        length=1.0,
    )
    return slwr.traffic_model(noise=noise, initial=slwr.InitialProfile("sine", (0.4, 0.1, 1)), horizon=0.5)


@pytest.fixture
def score():
    return slwr.ScoreModel(1.0, 1.0, 0.5, depth=2, width=8, levels=2, seed=3)


@pytest.fixture
def closure():
    return slwr.ClosureModel("structured_m", 1.0, 1.0, 0.5, depth=1, width=6, levels=2, seed=4)


@pytest.fixture
def collocation():
    return slwr.lhs_sample(12, [(0.05, 0.95), (0.0, 1.0), (0.0, 0.5)], seed=5)


def test_encode():
    z = np.array([0.1, 0.7])
    h = 1e-6
    fd = (encode(z + h, 3) - encode(z - h, 3)) / (2 * h)
    assert encode(z, 3).shape == (2, 6)
    assert np.allclose(encode_derivative(z, 3), fd, atol=1e-6)


def test_score_model_shape(score):
    assert score.input_width == 9
    assert score(np.full((2, 3), 0.5), 0.2, 0.1).shape == (2, 3)
    assert "depth=2" in repr(score)
    with pytest.raises(ValueError, match="score parameters"):
        slwr.ScoreModel(1.0, 1.0, 0.5, depth=2, width=8, levels=2, params=np.zeros(3))


def test_eval_with_derivatives(score):
    rho = np.array([0.2, 0.45, 0.8])
    x = np.array([0.1, 0.5, 0.9])
    t = np.array([0.05, 0.25, 0.4])
    s, s1, s2, st = slwr.eval_with_derivatives(score, rho, x, t)
    h = 1e-4
    assert np.allclose(s, score(rho, x, t))
    assert np.allclose(s1, (score(rho + h, x, t) - score(rho - h, x, t)) / (2 * h), rtol=1e-5, atol=1e-7)
    assert np.allclose(
        s2, (score(rho + h, x, t) - 2 * score(rho, x, t) + score(rho - h, x, t)) / h**2, rtol=1e-3, atol=1e-4
    )
    assert np.allclose(st, (score(rho, x, t + h) - score(rho, x, t - h)) / (2 * h), rtol=1e-5, atol=1e-7)


def test_copy_is_independent(score):
    twin = score.copy()
    twin.params[0] += 1.0
    assert twin.params[0] != score.params[0]


def test_gaussian_residual_vanishes():
    traffic = slwr.traffic_model(noise=slwr.constant_diffusion(SIGMA2))
    zero = slwr.ClosureModel.zero(1.0, 1.0, 0.5)
    rho = np.linspace(0.3, 0.7, 9)
    residual = slwr.fpe_residual(gaussian(), zero, traffic, rho, 0.5, 0.2)
    assert np.allclose(residual, 0.0, atol=1e-9)
    v, v1, v2 = slwr.closed_velocity(gaussian(), zero, traffic, rho, 0.5, 0.2)
    assert np.allclose(v, 0.5 * SIGMA2 * (rho - 0.5) / variance(0.2))
    assert np.allclose(v1, 0.5 * SIGMA2 / variance(0.2))
    assert np.allclose(v2, 0.0)


def test_physics_loss_of_exact_score_is_zero(collocation):
    traffic = slwr.traffic_model(noise=slwr.constant_diffusion(SIGMA2))
    zero = slwr.ClosureModel.zero(1.0, 1.0, 0.5)
    assert slwr.physics_loss(gaussian(), zero, traffic, collocation) == pytest.approx(0.0, abs=1e-16)
    with pytest.raises(ValueError, match="empty"):
        slwr.physics_loss(gaussian(), zero, traffic, np.zeros((0, 3)))


def test_closure_kinds(traffic):
    rho = np.array([0.2, 0.6])
    for kind in slwr.ClosureNetKind:
        closure = slwr.ClosureModel(kind, 1.0, 1.0, 0.5, depth=1, width=5, levels=2)
        (b, b1, b2), _ = closure.forward(traffic.flux, rho, 0.3, 0.1)
        h = 1e-5
        up = closure(traffic.flux, rho + h, 0.3, 0.1)
        down = closure(traffic.flux, rho - h, 0.3, 0.1)
        assert np.allclose(b1, (up - down) / (2 * h), rtol=1e-5, atol=1e-7)
        assert np.allclose(b2, (up - 2 * b + down) / h**2, rtol=1e-3, atol=1e-4)
    zero = slwr.ClosureModel.zero(1.0, 1.0, 0.5)
    assert zero.frozen
    assert np.all(zero(traffic.flux, rho, 0.3, 0.1) == 0.0)


def test_meanfield_net_is_linear_in_speed(traffic):
    closure = slwr.ClosureModel("meanfield_net", 1.0, 1.0, 0.5, depth=1, width=5, levels=2)
    b = closure(traffic.flux, np.array([0.25, 0.5, 0.75]), 0.3, 0.1)
    assert b[1] == pytest.approx(0.0, abs=1e-12)
    assert b[0] == pytest.approx(-b[2])


def _finite_difference(func, params, indices, h=1e-6):
    out = []
    for k in indices:
        step = np.zeros_like(params)
        step[k] = h
        out.append((func(params + step) - func(params - step)) / (2 * h))
    return np.array(out)


def test_physics_gradients(score, closure, traffic, collocation):
    term = physics_terms(score, closure, traffic, collocation)
    assert term.value == pytest.approx(slwr.physics_loss(score, closure, traffic, collocation))
    indices = np.arange(0, score.n_params, 11)
    fd = _finite_difference(
        lambda p: slwr.physics_loss(score.copy(p), closure, traffic, collocation), score.params, indices
    )
    assert np.allclose(term.theta[indices], fd, rtol=1e-4, atol=1e-7)

    indices = np.arange(0, closure.n_params, 5)
    fd = _finite_difference(
        lambda p: slwr.physics_loss(score, closure.copy(p), traffic, collocation), closure.params, indices
    )
    assert np.allclose(term.phi[indices], fd, rtol=1e-4, atol=1e-7)

    log_alpha = np.log(traffic.noise.alphas)

    def by_alpha(raw):
        noisy = traffic.with_noise(traffic.noise.with_alphas(np.exp(raw)))
        return slwr.physics_loss(score, closure, noisy, collocation)

    fd = _finite_difference(by_alpha, log_alpha, range(2))
    assert np.allclose(term.raw_alpha, fd, rtol=1e-4, atol=1e-7)


def test_dsm_perturbations_stay_inside():
    rng = np.random.default_rng(0)
    rho = np.array([0.01, 0.5, 0.99] * 100)
    eps = dsm_perturbations(rho, np.array([0.1, 0.01]), 1.0, rng)
    perturbed = rho + np.array([[0.1], [0.01]]) * eps
    assert eps.shape == (2, 300)
    assert np.all((perturbed > 0) & (perturbed < 1))


def test_dsm_scale_too_large():
    with pytest.raises(slwr.ConfigurationError, match="too large"):
        dsm_perturbations(np.full(1000, 0.001), np.array([100.0]), 1.0, np.random.default_rng(0))


def test_dsm_gradient(score):
    rng = np.random.default_rng(2)
    x, t, rho = rng.uniform(0, 1, 20), rng.uniform(0, 0.5, 20), rng.uniform(0.2, 0.8, 20)
    scales, weights = np.array([0.1, 0.02]), np.array([1.0, 0.04])
    eps = dsm_perturbations(rho, scales, 1.0, rng)
    term = dsm_terms(score, x, t, rho, eps, scales, weights)
    assert term.value > 0
    indices = np.arange(0, score.n_params, 13)
    fd = _finite_difference(
        lambda p: dsm_terms(score.copy(p), x, t, rho, eps, scales, weights, grad=False).value, score.params, indices
    )
    assert np.allclose(term.theta[indices], fd, rtol=1e-5, atol=1e-6)


def test_dsm_minimiser_is_the_kernel_score():
    rho = np.full(4, 0.5)
    eps = np.array([[0.3, -1.2, 0.4, 2.0]])
    kernel = slwr.AnalyticScore(lambda r, x, t: -(r - 0.5) / 0.05**2)
    term = dsm_terms(kernel, np.zeros(4), np.zeros(4), rho, eps, [0.05], [1.0])
    assert term.value == pytest.approx(0.0, abs=1e-20)


def test_lhs_is_stratified():
    points = slwr.lhs_sample(10, [(0.0, 1.0), (2.0, 4.0)], seed=7)
    assert sorted(np.floor(points[:, 0] * 10).astype(int)) == list(range(10))
    assert sorted(np.floor((points[:, 1] - 2.0) / 2.0 * 10).astype(int)) == list(range(10))
    assert np.array_equal(points, slwr.lhs_sample(10, [(0.0, 1.0), (2.0, 4.0)], seed=7))
    with pytest.raises(ValueError, match="at least one"):
        slwr.lhs_sample(0, [(0.0, 1.0)], seed=0)


def test_bc_gradients(score, closure, traffic):
    boundary = np.array([[0.2, 0.1], [0.7, 0.4]])
    initial = np.array([0.3, 0.8])
    term = bc_terms(score, closure, traffic, boundary, initial, 0.05)
    assert term.value == pytest.approx(slwr.bc_loss(score, closure, traffic, boundary, initial, 0.05))
    indices = np.arange(0, score.n_params, 9)
    fd = _finite_difference(
        lambda p: slwr.bc_loss(score.copy(p), closure, traffic, boundary, initial, 0.05), score.params, indices
    )
    assert np.allclose(term.theta[indices], fd, rtol=1e-4, atol=1e-7)
    indices = np.arange(0, closure.n_params, 7)
    fd = _finite_difference(
        lambda p: slwr.bc_loss(score, closure.copy(p), traffic, boundary, initial, 0.05), closure.params, indices
    )
    assert np.allclose(term.phi[indices], fd, rtol=1e-4, atol=1e-7)


def test_initial_law_loss_prefers_matching_gaussian(traffic):
    zero = slwr.ClosureModel.zero(1.0, 1.0, 0.5)
    centre = float(traffic.rho0(0.3))

    def candidate(width):
        return slwr.AnalyticScore(lambda r, x, t: -(r - centre) / width**2)

    matching = slwr.bc_loss(candidate(0.05), zero, traffic, np.zeros((0, 2)), [0.3], 0.05)
    wider = slwr.bc_loss(candidate(0.2), zero, traffic, np.zeros((0, 2)), [0.3], 0.05)
    assert matching < 1e-6
    assert wider > 100 * matching


def test_learned_wrappers(score, closure, traffic):
    source = slwr.LearnedScore(score, 0.4)
    assert np.allclose(source(np.array([0.3]), 0.2), score(np.array([0.3]), 0.4, 0.2))
    learned = slwr.LearnedClosure(closure, traffic)
    assert learned.kind is slwr.ClosureKind.LEARNED
    assert np.allclose(learned(np.array([0.3]), 0.4, 0.2), closure(traffic.flux, np.array([0.3]), 0.4, 0.2))


def test_grid_score_of_diffusion():
    traffic = slwr.traffic_model(noise=slwr.constant_diffusion(SIGMA2))
    mesh = slwr.DensityMesh(200, 1.0)
    init = slwr.mollified_delta(mesh, 0.5, 0.05)
    dt = slwr.stability_bound(traffic, slwr.ZeroClosure(), mesh, 0.5, (0.0, 0.5)) / 2
    pgrid = slwr.solve_fpe(traffic, slwr.ZeroClosure(), 0.5, mesh, (0.0, 0.5), dt, init, store_every=20)
    grid_score = slwr.GridScore(pgrid)
    rho = np.linspace(0.4, 0.6, 5)
    s, s1, _s2, st = slwr.eval_with_derivatives(grid_score, rho, 0.5, 0.3)
    assert np.allclose(s1, -1.0 / variance(0.3), rtol=0.05)
    residual = slwr.fpe_residual(grid_score, slwr.ClosureModel.zero(1.0, 1.0, 0.5), traffic, rho, 0.5, 0.3)
    assert np.sqrt(np.mean(residual**2)) < 0.1 * np.sqrt(np.mean(st**2))
