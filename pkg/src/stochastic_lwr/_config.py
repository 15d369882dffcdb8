"""Reading model configuration files.

Model files are JSON (or YAML) mappings. With ``units: si`` physical values may
be given as quantity strings such as ``"100 km/h"``; they are converted to
SI-coherent numbers with mammos-units. With ``units: normalized`` only plain
numbers are accepted.
"""

from __future__ import annotations

import json
import os
from logging import getLogger
from pathlib import Path
from typing import TYPE_CHECKING, Any

import mammos_units as u
import yaml

from stochastic_lwr._errors import ConfigurationError, DomainError
from stochastic_lwr._model import (
    ConstantDiffusion,
    FluxFunction,
    InitialProfile,
    NoiseMode,
    NoiseStructure,
    SpatialBasis,
    TrafficModel,
)

if TYPE_CHECKING:
    import stochastic_lwr

logger = getLogger(__name__)

DATA_DIR = (Path(__file__).parent / "data").resolve()

# SI-coherent target unit per physical key
_SI_UNITS = {
    "u_f": "m / s",
    "rho_max": "1 / m",
    "drake_k0": "1 / m",
    "L": "m",
    "T": "s",
    "epsilon": "m2 / s",
}


def read_mapping(filename: str | os.PathLike) -> dict[str, Any]:
    """Read a JSON or YAML mapping from ``filename``.

    The format is chosen from the suffix; ``.yaml``/``.yml`` are parsed as YAML,
    anything else as JSON.

    Raises:
        ConfigurationError: If the file is missing, unparsable or not a mapping.
    """
    path = Path(filename)
    if not path.is_file():
        raise ConfigurationError(f"Configuration file '{path}' does not exist.")
    text = path.read_text()
    try:
        data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"Cannot parse configuration file '{path}': {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration file '{path}' must contain a mapping, got {type(data).__name__}.")
    logger.debug("read configuration from '%s'", path)
    return data


def _physical(value: Any, key: str, units: str) -> float:
    """Convert a configuration value to a float in the model's unit system."""
    if isinstance(value, bool):
        raise ConfigurationError(f"Value of '{key}' must be a number, got {value!r}.")
    if isinstance(value, int | float):
        return float(value)
    if isinstance(value, str):
        if units != "si":
            raise ConfigurationError(
                f"Quantity string {value!r} for '{key}' requires 'units: si', the file uses '{units}'."
            )
        try:
            return float(u.Quantity(value).to(u.Unit(_SI_UNITS[key])).value)
        except (ValueError, TypeError, u.UnitsError) as exc:
            raise ConfigurationError(f"Cannot convert {value!r} for '{key}' to {_SI_UNITS[key]}: {exc}") from exc
    raise ConfigurationError(f"Value of '{key}' must be a number or quantity string, got {value!r}.")


def _require(mapping: dict, key: str, section: str) -> Any:
    try:
        return mapping[key]
    except KeyError:
        raise ConfigurationError(f"Missing key '{section}.{key}' in model configuration.") from None


def model_from_dict(config: dict[str, Any]) -> stochastic_lwr.TrafficModel:
    """Build a :py:class:`~stochastic_lwr.TrafficModel` from a configuration mapping.

    Args:
        config: Mapping with the sections ``flux``, ``noise``, ``domain``,
            ``initial`` and optionally ``viscosity`` and ``units``.

    Raises:
        ConfigurationError: If keys are missing or values cannot be converted.

    Examples:
        >>> import stochastic_lwr as slwr
        >>> model = slwr.model_from_dict({
        ...     "units": "normalized",
        ...     "flux": {"kind": "greenshields", "u_f": 1.0, "rho_max": 1.0},
        ...     "noise": {"modes": [{"alpha": 0.2}]},
        ...     "domain": {"L": 1.0, "T": 0.5},
        ...     "initial": {"kind": "constant", "values": [0.5]},
        ... })
        >>> model.flux.kind
        <FluxKind.GREENSHIELDS: 'greenshields'>
    """
    units = config.get("units", "normalized")
    if units not in ("si", "normalized"):
        raise ConfigurationError(f"Unknown unit system {units!r}; expected 'si' or 'normalized'.")

    flux_cfg = _require(config, "flux", "")
    domain_cfg = _require(config, "domain", "")
    init_cfg = _require(config, "initial", "")
    noise_cfg = _require(config, "noise", "")

    try:
        table = flux_cfg.get("table")
        flux = FluxFunction(
            kind=_require(flux_cfg, "kind", "flux"),
            u_f=_physical(_require(flux_cfg, "u_f", "flux"), "u_f", units),
            rho_max=_physical(_require(flux_cfg, "rho_max", "flux"), "rho_max", units),
            drake_k0=_physical(flux_cfg["drake_k0"], "drake_k0", units) if "drake_k0" in flux_cfg else None,
            table_rho=tuple(table["rho"]) if table else None,
            table_q=tuple(table["q"]) if table else None,
        )
        length = _physical(_require(domain_cfg, "L", "domain"), "L", units)
        horizon = _physical(_require(domain_cfg, "T", "domain"), "T", units)

        if "constant_sigma2" in noise_cfg:
            noise = ConstantDiffusion(float(noise_cfg["constant_sigma2"]), flux.rho_max, length)
        else:
            modes = []
            for mode in _require(noise_cfg, "modes", "noise"):
                basis = mode.get("basis", {})
                param = basis.get("param")
                modes.append(
                    NoiseMode(
                        alpha=float(_require(mode, "alpha", "noise.modes[]")),
                        s_tilde_coeffs=tuple(mode.get("s_tilde_coeffs", (1.0,))),
                        basis=SpatialBasis(
                            basis.get("kind", "constant"), tuple(param) if isinstance(param, list) else param
                        ),
                    )
                )
            noise = NoiseStructure(modes, flux.rho_max, length)

        initial = InitialProfile(
            kind=_require(init_cfg, "kind", "initial"),
            values=tuple(_require(init_cfg, "values", "initial")),
            table_x=tuple(init_cfg["x"]) if "x" in init_cfg else None,
        )
        viscosity = _physical(config.get("viscosity", {}).get("epsilon", 0.0), "epsilon", units)
        return TrafficModel(flux, noise, length, horizon, initial, viscosity, units)
    except DomainError as exc:
        raise ConfigurationError(f"Invalid model configuration: {exc}") from exc
    except (TypeError, AttributeError) as exc:
        raise ConfigurationError(f"Malformed model configuration: {exc}") from exc
    except ValueError as exc:
        # unknown enum members
        raise ConfigurationError(f"Invalid model configuration: {exc}") from exc


def model_to_dict(model: stochastic_lwr.TrafficModel) -> dict[str, Any]:
    """Inverse of :py:func:`model_from_dict` with plain numbers."""
    flux = model.flux
    flux_cfg = {"kind": str(flux.kind), "u_f": flux.u_f, "rho_max": flux.rho_max}
    if flux.drake_k0 is not None:
        flux_cfg["drake_k0"] = flux.drake_k0
    if flux.table_rho is not None:
        flux_cfg["table"] = {"rho": list(flux.table_rho), "q": list(flux.table_q)}
    if isinstance(model.noise, ConstantDiffusion):
        noise_cfg = {"constant_sigma2": model.noise.sigma2}
    else:
        noise_cfg = {
            "modes": [
                {
                    "alpha": m.alpha,
                    "s_tilde_coeffs": list(m.s_tilde_coeffs),
                    "basis": {
                        "kind": str(m.basis.kind),
                        "param": list(m.basis.param) if isinstance(m.basis.param, tuple) else m.basis.param,
                    },
                }
                for m in model.noise.modes
            ]
        }
    initial = {"kind": str(model.initial_profile.kind), "values": list(model.initial_profile.values)}
    if model.initial_profile.table_x is not None:
        initial["x"] = list(model.initial_profile.table_x)
    return {
        "units": model.units,
        "flux": flux_cfg,
        "noise": noise_cfg,
        "domain": {"L": model.domain_length, "T": model.horizon},
        "initial": initial,
        "viscosity": {"epsilon": model.viscosity},
    }


def load_model(filename: str | os.PathLike | None = None) -> stochastic_lwr.TrafficModel:
    """Read a model file; without ``filename`` the bundled default model is loaded.

    Raises:
        ConfigurationError: If the file is missing or invalid.
    """
    path = Path(filename) if filename is not None else DATA_DIR / "default_model.json"
    return model_from_dict(read_mapping(path))
