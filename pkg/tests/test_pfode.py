import numpy as np
import pytest

import stochastic_lwr as slwr

SIGMA2 = 0.01
VAR0 = 0.05**2


def gaussian_score(rho_hat, t):
    return -(rho_hat - 0.5) / (VAR0 + SIGMA2 * t)


@pytest.fixture
def diffusion():
    return slwr.traffic_model(noise=slwr.constant_diffusion(SIGMA2))


@pytest.fixture
def velocity(diffusion):
    return slwr.assemble_velocity(slwr.ZeroClosure(), diffusion, slwr.FunctionScore(gaussian_score, 1.0), 0.5)


def test_gaussian_transport_is_exact(velocity):
    start = np.array([0.4, 0.45, 0.5, 0.62])
    moved = slwr.transport_particles(velocity, slwr.ParticleSet(start, 0.0), 0.5, 0.01)
    stretch = np.sqrt((VAR0 + SIGMA2 * 0.5) / VAR0)
    assert moved.t_current == 0.5
    assert np.allclose(moved.positions, 0.5 + (start - 0.5) * stretch, atol=1e-6)


def test_backward_transport_returns(velocity):
    start = slwr.ParticleSet(np.linspace(0.35, 0.65, 7), 0.0)
    forward = slwr.transport_particles(velocity, start, 0.3, 0.01)
    back = slwr.transport_particles(velocity, forward, 0.0, 0.01)
    assert back.t_current == 0.0
    assert np.allclose(back.positions, start.positions, atol=1e-6)


def test_no_steps_for_zero_span(velocity):
    start = slwr.ParticleSet(np.array([0.3]), 0.2)
    assert slwr.transport_particles(velocity, start, 0.2, 0.01).positions.tolist() == [0.3]


def test_weights():
    assert np.allclose(slwr.ParticleSet(np.zeros(4), 0.0).weights, 0.25)


def test_velocity_decomposition():
    model = slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.2))
    velocity = slwr.assemble_velocity(slwr.ZeroClosure(), model, slwr.FunctionScore(gaussian_score, 1.0), 0.3)
    rho = np.array([0.2, 0.5, 0.8])
    table = slwr.velocity_decomposition(velocity, rho, 0.1)
    assert list(table.columns) == ["rho_hat", "advection", "ito", "score", "total"]
    assert np.allclose(table["advection"], 0.0)
    assert np.allclose(table["ito"], slwr.ito_drift(model, rho, 0.3))
    assert np.allclose(table["total"], velocity(rho, 0.1))
    assert np.allclose(table["total"], table["advection"] + table["ito"] + table["score"])


def test_position_mismatch(diffusion):
    score = slwr.FunctionScore(gaussian_score, 1.0, x=0.2)
    with pytest.raises(ValueError, match="x=0.2"):
        slwr.assemble_velocity(slwr.ZeroClosure(), diffusion, score, 0.5)


def test_non_finite_velocity(diffusion):
    velocity = slwr.assemble_velocity(
        slwr.ZeroClosure(), diffusion, slwr.FunctionScore(lambda r, t: np.where(r > 0.5, np.nan, 0.0), 1.0), 0.5
    )
    with pytest.raises(slwr.TransportError) as excinfo:
        slwr.transport_particles(velocity, slwr.ParticleSet(np.array([0.2, 0.7]), 0.0), 0.1, 0.05)
    assert excinfo.value.particle == 1


def test_raising_score_names_the_particle(diffusion):
    def picky(rho_hat, t):
        if np.any(rho_hat > 0.6):
            raise ValueError("outside the fitted range")
        return np.zeros_like(rho_hat)

    velocity = slwr.assemble_velocity(slwr.ZeroClosure(), diffusion, slwr.FunctionScore(picky, 1.0), 0.5)
    with pytest.raises(slwr.TransportError, match="fitted range") as excinfo:
        slwr.transport_particles(velocity, slwr.ParticleSet(np.array([0.2, 0.3, 0.7, 0.9]), 0.0), 0.1, 0.05)
    assert excinfo.value.particle == 2


def test_boundary_compatibility(diffusion):
    inward = slwr.assemble_velocity(
        slwr.ZeroClosure(), diffusion, slwr.FunctionScore(lambda r, t: 4.0 * (r - 0.5), 1.0), 0.5
    )
    report = slwr.check_boundary_compatibility(inward, [0.0, 0.5], 0.01)
    assert report.passed
    assert [check["t"] for check in report.to_dict()["times"]] == [0.0, 0.5]

    outward = slwr.assemble_velocity(slwr.ZeroClosure(), diffusion, slwr.FunctionScore(gaussian_score, 1.0), 0.5)
    report = slwr.check_boundary_compatibility(outward, [0.0], 0.01)
    assert not report.passed
    assert report.checks[0].v_left < 0


@pytest.fixture
def diffusion_grid(diffusion):
    mesh = slwr.DensityMesh(200, 1.0)
    init = slwr.mollified_delta(mesh, 0.5, 0.05)
    dt = slwr.stability_bound(diffusion, slwr.ZeroClosure(), mesh, 0.5, (0.0, 0.5)) / 2
    return slwr.solve_fpe(diffusion, slwr.ZeroClosure(), 0.5, mesh, (0.0, 0.5), dt, init, store_every=50)


def test_sample_particles(diffusion_grid):
    particles = slwr.sample_particles(diffusion_grid, 0, 20_000, seed=1)
    mean, std = diffusion_grid.moments(0)
    assert particles.t_current == 0.0
    assert np.mean(particles.positions) == pytest.approx(mean, abs=4 * std / np.sqrt(20_000))
    again = slwr.sample_particles(diffusion_grid, 0, 20_000, seed=1)
    assert np.array_equal(particles.positions, again.positions)


def test_tabulated_score(diffusion_grid):
    score = slwr.TabulatedScore(diffusion_grid)
    assert score.t_span == (0.0, pytest.approx(0.5))
    rho = np.linspace(0.4, 0.6, 5)
    assert np.allclose(score(rho, 0.0), gaussian_score(rho, 0.0), rtol=0.02, atol=0.05)
    lo, hi = score.band(0.0)
    assert 0.0 < lo < 0.5 < hi < 1.0
    score(np.array([0.0]), 0.0)
    assert score.extrapolations == 1
    score(np.array([0.0, 0.5, 1.0]), 0.25)
    assert score.extrapolations == 2
    score.reset_extrapolations()
    assert score.extrapolations == 0
    with pytest.raises(ValueError, match="outside the score coverage"):
        score(rho, 0.6)


def test_particles_follow_the_fpe(diffusion, diffusion_grid):
    velocity = slwr.assemble_velocity(slwr.ZeroClosure(), diffusion, slwr.TabulatedScore(diffusion_grid), 0.5)
    particles = slwr.sample_particles(diffusion_grid, 0, 5000, seed=2)
    moved = slwr.transport_particles(velocity, particles, 0.5, 0.005)
    assert slwr.operations.wasserstein_1(moved, diffusion_grid) < 0.01
    _, std = diffusion_grid.moments()
    assert np.std(moved.positions) == pytest.approx(std, rel=0.05)


def test_extrapolations_count_particles_per_transport(diffusion, diffusion_grid):
    score = slwr.TabulatedScore(diffusion_grid)
    velocity = slwr.assemble_velocity(slwr.ZeroClosure(), diffusion, score, 0.5)
    particles = slwr.ParticleSet(np.array([0.0, 0.45, 0.5, 0.55]), 0.0)
    for _ in range(2):
        slwr.transport_particles(velocity, particles, 0.05, 0.005)
        # only the particle starting below the band, however many stages saw it
        assert score.extrapolations == 1
