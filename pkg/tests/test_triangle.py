import numpy as np
import pytest

import stochastic_lwr as slwr
from stochastic_lwr import _triangle
from stochastic_lwr._pfode import transport_particles
from stochastic_lwr._triangle import stable_steps


@pytest.mark.parametrize("multiple", [1, 20])
def test_stable_steps(multiple):
    model = slwr.traffic_model(horizon=0.5)
    n = stable_steps(model, 64, multiple)
    assert n % multiple == 0
    assert model.horizon / n * 64 <= 0.8 + 1e-12
    assert model.horizon / (n - multiple) * 64 > 0.8 - 1e-12


def test_zero_noise_is_skipped():
    quiet = slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.0), initial=0.3, horizon=0.5)
    report = slwr.triangle(quiet, n_real=10, seed=0)
    assert report.passed
    assert report.w1_mc_fpe == 0.0
    assert "zero noise" in report.notes[0]
    assert report.to_dict()["w1_threshold"] == pytest.approx(0.02)


def test_report_thresholds():
    report = slwr.TriangleReport(0.5, 1.0, 100, 0, 0.03, 0.1, 0.01, 0.01, 0.001, 1.0)
    assert not report.passed
    report.w1_mc_fpe = 0.01
    assert report.passed
    report.ks_pf_fpe = 0.05
    assert not report.passed


@pytest.mark.slow
def test_triangle_default_model():
    profile = slwr.InitialProfile("sine", (0.4, 0.1, 1))
    model = slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.2), initial=profile, horizon=0.5)
    report = slwr.triangle(model, n_real=20_000, seed=11)
    assert report.passed, report.to_dict()
    assert np.isfinite(report.w1_pf_fpe)


def test_flow_starts_ten_solver_steps_in(monkeypatch):
    calls = []

    def spy(field, particles, t_target, dt_ode):
        calls.append((particles.t_current, t_target, dt_ode, field.score_source.pgrid))
        return transport_particles(field, particles, t_target, dt_ode)

    monkeypatch.setattr(_triangle, "transport_particles", spy)
    profile = slwr.InitialProfile("sine", (0.4, 0.1, 1))
    model = slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.2), initial=profile, horizon=0.1)
    report = slwr.triangle(model, n_real=200, seed=3, nx=16, n_cells=100, n_bins=20, n_particles=500)
    [(t_start, t_target, dt_ode, pgrid)] = calls
    assert dt_ode == pgrid.dt_fpe
    assert t_start == pytest.approx(10 * pgrid.dt_fpe)
    assert t_target == pytest.approx(0.1)
    assert np.isfinite(report.ks_pf_fpe)
