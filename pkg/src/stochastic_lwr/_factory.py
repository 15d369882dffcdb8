"""Convenience factory functions for often used model components.

Provides short-hands for the Greenshields and Drake fundamental diagrams, the
symmetric quadratic noise and the constant-diffusion test mode.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

from stochastic_lwr._model import (
    ConstantDiffusion,
    FluxFunction,
    FluxKind,
    InitialProfile,
    NoiseMode,
    NoiseStructure,
    SpatialBasis,
    TrafficModel,
)

if TYPE_CHECKING:
    import stochastic_lwr


def greenshields(u_f: float = 1.0, rho_max: float = 1.0) -> stochastic_lwr.FluxFunction:
    """Create the Greenshields flux ``f(ρ) = u_f ρ (1 - ρ/ρ_max)``.

    Args:
        u_f: Free-flow speed.
        rho_max: Jam density.

    Returns:
        FluxFunction of kind ``greenshields``.

    """
    return FluxFunction(FluxKind.GREENSHIELDS, u_f=u_f, rho_max=rho_max)


def drake(u_f: float = 1.0, rho_max: float = 1.0, k0: float = 0.5) -> stochastic_lwr.FluxFunction:
    """Create the Drake flux ``f(ρ) = u_f ρ exp(-ρ²/(2 k0²))``.

    Args:
        u_f: Free-flow speed.
        rho_max: Jam density.
        k0: Critical-density scale; the flux peaks at ``ρ = k0``.

    Returns:
        FluxFunction of kind ``drake``.

    """
    return FluxFunction(FluxKind.DRAKE, u_f=u_f, rho_max=rho_max, drake_k0=k0)


def quadratic_noise(
    alpha: float = 0.2, rho_max: float = 1.0, length: float = 1.0, basis: SpatialBasis | None = None
) -> stochastic_lwr.NoiseStructure:
    """Create single-mode noise ``σ(ρ) = α ρ(ρ_max - ρ)`` with spatial weight ``basis``.

    Without ``basis`` the forcing is spatially uniform, ``e(x) = 1``.
    """
    mode = NoiseMode(alpha, (1.0,), basis if basis is not None else SpatialBasis())
    return NoiseStructure([mode], rho_max=rho_max, length=length)


def constant_diffusion(sigma2: float, rho_max: float = 1.0, length: float = 1.0) -> stochastic_lwr.ConstantDiffusion:
    """Create the test-mode noise with ``Σ² ≡ sigma2``."""
    return ConstantDiffusion(sigma2, rho_max=rho_max, length=length)


def traffic_model(
    flux: FluxFunction | None = None,
    noise: NoiseStructure | ConstantDiffusion | None = None,
    length: float = 1.0,
    horizon: float = 0.5,
    initial: InitialProfile | float = 0.5,
    viscosity: float = 0.0,
) -> stochastic_lwr.TrafficModel:
    """Assemble a :py:class:`~stochastic_lwr.TrafficModel` with sensible defaults.

    Args:
        flux: Fundamental diagram, Greenshields with unit parameters by default.
        noise: Noise structure; defaults to :py:func:`quadratic_noise`.
        length: Road length.
        horizon: Time horizon.
        initial: Initial profile, or a number for a constant initial state.
        viscosity: Viscous regularisation.

    Examples:
        >>> import stochastic_lwr as slwr
        >>> model = slwr.traffic_model(initial=0.3)
        >>> float(model.rho0(0.7))
        0.3
    """
    flux = flux if flux is not None else greenshields()
    if noise is None:
        noise = quadratic_noise(rho_max=flux.rho_max, length=length)
    if not isinstance(initial, InitialProfile):
        initial = InitialProfile("constant", (float(initial),))
    return TrafficModel(flux, noise, length, horizon, initial, viscosity)
