import json

import numpy as np
import pytest

import stochastic_lwr as slwr


def test_greenshields_values():
    model = slwr.traffic_model()
    assert float(slwr.flux_value(model, 0.5)) == pytest.approx(0.25)
    assert float(slwr.flux_prime(model, 0.0)) == pytest.approx(1.0)
    assert float(slwr.flux_prime(model, 1.0)) == pytest.approx(-1.0)
    assert float(slwr.flux_third(model, 0.3)) == 0.0


@pytest.mark.parametrize("rho", [-0.1, 1.2])
def test_flux_outside_range(rho):
    model = slwr.traffic_model()
    with pytest.raises(slwr.DomainError, match="outside"):
        slwr.flux_value(model, rho)


def test_capacity():
    rho_c, q_max = slwr.capacity(slwr.traffic_model())
    assert rho_c == pytest.approx(0.5)
    assert q_max == pytest.approx(0.25)

    drake = slwr.traffic_model(flux=slwr.drake(k0=0.3))
    rho_c, q_max = slwr.capacity(drake)
    assert rho_c == pytest.approx(0.3)
    assert q_max == pytest.approx(0.3 * np.exp(-0.5))


def test_speed_relation():
    model = slwr.traffic_model()
    assert float(slwr.speed_value(model, 0.0)) == pytest.approx(1.0)
    assert float(slwr.speed_value(model, 0.25)) == pytest.approx(0.75)
    assert slwr.speed_inverse(model, 0.75) == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(slwr.DomainError, match="invertible range"):
        slwr.speed_inverse(model, 1.5)


def test_sigma_squared_closed_form():
    model = slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.2))
    rho = np.array([0.0, 0.25, 0.5, 1.0])
    expected = (0.2 * rho * (1 - rho)) ** 2
    assert np.allclose(slwr.sigma_squared(model, rho, 0.3), expected)


def test_sigma_squared_derivatives_match_finite_differences():
    noise = slwr.NoiseStructure(
        [slwr.NoiseMode(0.3, (1.0, 0.5)), slwr.NoiseMode(0.1, (2.0,), slwr.SpatialBasis("sin", 1.0))],
        rho_max=1.0,
        length=1.0,
    )
    model = slwr.traffic_model(noise=noise)
    rho = np.linspace(0.1, 0.9, 9)
    x = 0.4
    d = slwr.sigma_squared_derivatives(model, rho, x, order=3)
    h = 1e-4
    for j in range(1, 4):
        fd = (
            slwr.sigma_squared_derivatives(model, rho + h, x, order=j - 1)[j - 1]
            - slwr.sigma_squared_derivatives(model, rho - h, x, order=j - 1)[j - 1]
        ) / (2 * h)
        assert np.allclose(d[j], fd, rtol=1e-6, atol=1e-9)


def test_ito_drift():
    model = slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.2))
    # Σ² = 0.04 ρ²(1-ρ)², derivative at 0.25 is 0.04·2ρ(1-ρ)(1-2ρ)
    expected = -0.5 * 0.04 * 2 * 0.25 * 0.75 * 0.5
    assert float(slwr.ito_drift(model, 0.25, 0.5)) == pytest.approx(expected)


def test_with_alphas():
    noise = slwr.quadratic_noise(alpha=0.2)
    scaled = noise.with_alphas([0.4])
    assert scaled.alphas.tolist() == [0.4]
    assert np.allclose(scaled.sigma_squared(0.5, 0.0), 4 * noise.sigma_squared(0.5, 0.0))
    with pytest.raises(slwr.DomainError, match="Expected 1 amplitudes"):
        noise.with_alphas([0.1, 0.2])


def test_constant_diffusion_test_mode():
    noise = slwr.constant_diffusion(0.02)
    assert noise.is_test_mode
    assert np.allclose(noise.derivatives(np.array([0.1, 0.9]), 0.5, order=2), [[0.02, 0.02], [0, 0], [0, 0]])
    with pytest.raises(slwr.DomainError):
        slwr.constant_diffusion(-1.0)


def test_sine_initial_profile():
    profile = slwr.InitialProfile("sine", (0.4, 0.1, 1))
    model = slwr.traffic_model(initial=profile, length=2.0)
    assert float(model.rho0(0.5)) == pytest.approx(0.5)
    assert float(model.rho0(1.5)) == pytest.approx(0.3)


def test_validate_default_model():
    report = slwr.validate_assumptions(slwr.load_model())
    assert report.ok
    assert report.all_passed
    assert set(report.to_dict()["checks"]) == {
        "flux_endpoints",
        "flux_concavity",
        "noise_endpoints",
        "noise_nondegeneracy",
        "initial_data",
    }


def test_validate_initial_outside():
    report = slwr.validate_assumptions(slwr.traffic_model(initial=1.0))
    assert not report.ok
    assert not report["initial_data"].passed
    assert report["initial_data"].probe is not None


def test_validate_zero_noise_is_advisory():
    report = slwr.validate_assumptions(slwr.traffic_model(noise=slwr.quadratic_noise(alpha=0.0)))
    assert report.ok
    assert not report["noise_nondegeneracy"].passed
    assert not report["noise_nondegeneracy"].fatal


def test_validate_drake_is_advisory():
    report = slwr.validate_assumptions(slwr.traffic_model(flux=slwr.drake(k0=0.3)))
    assert report.ok
    assert not report["flux_endpoints"].fatal


def test_validate_constant_diffusion_advisory():
    report = slwr.validate_assumptions(slwr.traffic_model(noise=slwr.constant_diffusion(0.02)))
    assert report.ok
    assert not report["noise_endpoints"].passed


def test_model_dict_round_trip():
    model = slwr.load_model()
    assert slwr.model_from_dict(slwr.model_to_dict(model)) == model


def test_si_quantity_strings(tmp_path):
    config = {
        "units": "si",
        "flux": {"kind": "greenshields", "u_f": "36 km/h", "rho_max": "0.2 / m"},
        "noise": {"modes": [{"alpha": 0.01}]},
        "domain": {"L": "2 km", "T": "10 min"},
        "initial": {"kind": "constant", "values": [0.05]},
    }
    path = tmp_path / "model.json"
    path.write_text(json.dumps(config))
    model = slwr.load_model(path)
    assert model.flux.u_f == pytest.approx(10.0)
    assert model.domain_length == pytest.approx(2000.0)
    assert model.horizon == pytest.approx(600.0)
    assert model.rho_max == pytest.approx(0.2)


def test_quantity_string_needs_si():
    config = slwr.model_to_dict(slwr.load_model())
    config["domain"]["L"] = "2 km"
    with pytest.raises(slwr.ConfigurationError, match="requires 'units: si'"):
        slwr.model_from_dict(config)


def test_missing_key():
    config = slwr.model_to_dict(slwr.load_model())
    del config["flux"]["u_f"]
    with pytest.raises(slwr.ConfigurationError, match="flux.u_f"):
        slwr.model_from_dict(config)


def test_missing_file(tmp_path):
    with pytest.raises(slwr.ConfigurationError, match="does not exist"):
        slwr.load_model(tmp_path / "missing.json")


def test_yaml_model_file(tmp_path):
    path = tmp_path / "model.yaml"
    path.write_text(
        "flux: {kind: drake, u_f: 1.0, rho_max: 1.0, drake_k0: 0.4}\n"
        "noise: {constant_sigma2: 0.01}\n"
        "domain: {L: 1.0, T: 1.0}\n"
        "initial: {kind: constant, values: [0.5]}\n"
    )
    model = slwr.load_model(path)
    assert model.flux.kind is slwr.FluxKind.DRAKE
    assert isinstance(model.noise, slwr.ConstantDiffusion)
