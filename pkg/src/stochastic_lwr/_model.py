"""Traffic model: fundamental diagram, noise structure and domain.

Defines the building blocks of the Itô-type stochastic LWR model

    dρ = -∂ₓ f(ρ) dt + Σₖ σₖ(ρ) eₖ(x) dWₖ

together with executable checks of the standing assumptions (concave flux,
endpoint-vanishing and non-degenerate noise, interior initial data).

All classes are frozen dataclasses and can be shared between workers.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from stochastic_lwr._errors import DomainError

if TYPE_CHECKING:
    import numpy.typing

logger = logging.getLogger(__name__)

# relative tolerance used when deciding whether a density lies inside [0, rho_max]
_RANGE_TOL = 1e-12


class FluxKind(enum.StrEnum):
    """Registered fundamental diagrams."""

    GREENSHIELDS = "greenshields"
    DRAKE = "drake"
    TABULATED_SMOOTH = "tabulated_smooth"


class BasisKind(enum.StrEnum):
    """Spatial basis functions available for the noise modes."""

    CONSTANT = "constant"
    SIN = "sin"
    COS = "cos"
    GAUSSIAN = "gaussian"


class InitialKind(enum.StrEnum):
    """Shapes of the initial density profile."""

    CONSTANT = "constant"
    SINE = "sine"
    CUSTOM_TABLE = "custom_table"


def _check_density(rho: numpy.typing.ArrayLike, rho_max: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    tol = _RANGE_TOL * rho_max
    bad = ~((rho >= -tol) & (rho <= rho_max + tol))
    if np.any(bad):
        offending = rho[bad].flat[0]
        raise DomainError(f"Density {offending!r} is outside [0, {rho_max}].")
    return rho


def _check_position(x: numpy.typing.ArrayLike, length: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    tol = _RANGE_TOL * length
    bad = ~((x >= -tol) & (x <= length + tol))
    if np.any(bad):
        offending = x[bad].flat[0]
        raise DomainError(f"Position {offending!r} is outside [0, {length}].")
    return x


@dataclass(frozen=True)
class FluxFunction:
    """Fundamental diagram ``f(ρ) = ρ v(ρ)``.

    Args:
        kind: Which registered flux to use.
        u_f: Free-flow speed.
        rho_max: Jam density.
        drake_k0: Critical-density scale of the Drake model (Drake only).
        table_rho: Density samples of a tabulated flux (tabulated only).
        table_q: Flow samples of a tabulated flux (tabulated only).

    Examples:
        >>> import stochastic_lwr as slwr
        >>> flux = slwr.FluxFunction(slwr.FluxKind.GREENSHIELDS, u_f=1.0, rho_max=1.0)
        >>> float(flux.value(0.5))
        0.25
        >>> float(flux.prime(1.0))
        -1.0
    """

    kind: FluxKind
    u_f: float
    rho_max: float
    drake_k0: float | None = None
    table_rho: tuple[float, ...] | None = None
    table_q: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FluxKind(self.kind))
        if self.u_f <= 0 or self.rho_max <= 0:
            raise DomainError(f"u_f and rho_max must be positive, got u_f={self.u_f}, rho_max={self.rho_max}.")
        if self.kind is FluxKind.DRAKE and (self.drake_k0 is None or self.drake_k0 <= 0):
            raise DomainError(f"Drake flux requires a positive drake_k0, got {self.drake_k0!r}.")
        if self.kind is FluxKind.TABULATED_SMOOTH:
            if self.table_rho is None or self.table_q is None or len(self.table_rho) != len(self.table_q):
                raise DomainError("Tabulated flux requires table_rho and table_q of equal length.")
            if len(self.table_rho) < 4:
                raise DomainError("Tabulated flux requires at least four samples.")

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(np.asarray(self.table_rho, dtype=float), np.asarray(self.table_q, dtype=float))

    def _fd_step(self, order: int) -> float:
        return self.rho_max * (1e-5, 1e-4, 1e-3)[order - 1]

    def _value(self, rho: np.ndarray) -> np.ndarray:
        if self.kind is FluxKind.GREENSHIELDS:
            return self.u_f * rho * (1.0 - rho / self.rho_max)
        if self.kind is FluxKind.DRAKE:
            return self.u_f * rho * np.exp(-(rho**2) / (2.0 * self.drake_k0**2))
        return self._spline(rho)

    def _prime(self, rho: np.ndarray) -> np.ndarray:
        if self.kind is FluxKind.GREENSHIELDS:
            return self.u_f * (1.0 - 2.0 * rho / self.rho_max)
        if self.kind is FluxKind.DRAKE:
            k2 = self.drake_k0**2
            return self.u_f * np.exp(-(rho**2) / (2.0 * k2)) * (1.0 - rho**2 / k2)
        h = self._fd_step(1)
        return (self._value(rho + h) - self._value(rho - h)) / (2.0 * h)

    def _second(self, rho: np.ndarray) -> np.ndarray:
        if self.kind is FluxKind.GREENSHIELDS:
            return np.full_like(rho, -2.0 * self.u_f / self.rho_max)
        if self.kind is FluxKind.DRAKE:
            k2 = self.drake_k0**2
            return self.u_f * np.exp(-(rho**2) / (2.0 * k2)) * (-3.0 * rho / k2 + rho**3 / k2**2)
        h = self._fd_step(2)
        return (self._value(rho + h) - 2.0 * self._value(rho) + self._value(rho - h)) / h**2

    def _third(self, rho: np.ndarray) -> np.ndarray:
        if self.kind is FluxKind.GREENSHIELDS:
            return np.zeros_like(rho)
        if self.kind is FluxKind.DRAKE:
            k2 = self.drake_k0**2
            return self.u_f * np.exp(-(rho**2) / (2.0 * k2)) * (-3.0 / k2 + 6.0 * rho**2 / k2**2 - rho**4 / k2**3)
        h = self._fd_step(3)
        f = self._value
        return (f(rho + 2 * h) - 2 * f(rho + h) + 2 * f(rho - h) - f(rho - 2 * h)) / (2.0 * h**3)

    def value(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Flow ``f(ρ)``."""
        return self._value(_check_density(rho, self.rho_max))

    def prime(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Characteristic speed ``f'(ρ)``."""
        return self._prime(_check_density(rho, self.rho_max))

    def second(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Curvature ``f''(ρ)``."""
        return self._second(_check_density(rho, self.rho_max))

    def third(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Third derivative ``f'''(ρ)``."""
        return self._third(_check_density(rho, self.rho_max))

    def speed(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Speed-density relation ``v(ρ) = f(ρ) / ρ`` with ``v(0) = f'(0)``."""
        rho = _check_density(rho, self.rho_max)
        safe = np.where(rho > 0, rho, 1.0)
        return np.where(rho > 0, self._value(safe) / safe, self._prime(np.zeros_like(rho)))

    def speed_inverse(self, u: float) -> float:
        """Density on the decreasing branch of ``v`` with ``v(ρ) = u``.

        Raises:
            DomainError: If ``u`` is not strictly between ``v(rho_max)`` and ``v(0)``.
        """
        v_lo = float(self.speed(self.rho_max))
        v_hi = float(self.speed(0.0))
        if not v_lo < u < v_hi:
            raise DomainError(f"Speed {u!r} is outside the invertible range ({v_lo}, {v_hi}).")
        return float(brentq(lambda r: float(self.speed(r)) - u, 0.0, self.rho_max, xtol=1e-14, rtol=1e-14))

    @cached_property
    def capacity(self) -> tuple[float, float]:
        """Critical density and capacity ``(ρ_c, q_max)`` of a unimodal flux."""
        if self.kind is FluxKind.GREENSHIELDS:
            rho_c = 0.5 * self.rho_max
        elif self.kind is FluxKind.DRAKE and self.drake_k0 < self.rho_max:
            rho_c = self.drake_k0
        else:
            lo, hi = float(self._prime(np.float64(0.0))), float(self._prime(np.float64(self.rho_max)))
            if lo <= 0 or hi >= 0:
                raise DomainError(f"Flux of kind {self.kind} is not unimodal on [0, {self.rho_max}].")
            rho_c = brentq(lambda r: float(self._prime(np.float64(r))), 0.0, self.rho_max, xtol=1e-15)
        return rho_c, float(self._value(np.float64(rho_c)))


@dataclass(frozen=True)
class SpatialBasis:
    """Spatial weight ``e(x)`` of one noise mode.

    ``param`` is the wavenumber for ``sin``/``cos``, ``(centre, width)`` for
    ``gaussian`` and unused for ``constant``.
    """

    kind: BasisKind = BasisKind.CONSTANT
    param: float | tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BasisKind(self.kind))
        if self.kind is BasisKind.GAUSSIAN and (not isinstance(self.param, tuple | list) or len(self.param) != 2):
            raise DomainError(f"Gaussian basis needs param=(centre, width), got {self.param!r}.")
        if isinstance(self.param, list):
            object.__setattr__(self, "param", tuple(self.param))

    def __call__(self, x: np.ndarray, length: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        match self.kind:
            case BasisKind.CONSTANT:
                return np.ones_like(x)
            case BasisKind.SIN:
                return np.sin(float(self.param) * math.pi * x / length)
            case BasisKind.COS:
                return np.cos(float(self.param) * math.pi * x / length)
            case BasisKind.GAUSSIAN:
                centre, width = self.param
                return np.exp(-0.5 * ((x - centre) / width) ** 2)


@dataclass(frozen=True)
class NoiseMode:
    """One noise mode ``σ(ρ) e(x)`` with ``σ(ρ) = α ρ(ρ_max - ρ) s̃(ρ)``.

    Args:
        alpha: Mode amplitude α ≥ 0.
        s_tilde_coeffs: Coefficients of the positive shape polynomial s̃ in
            ascending order, degree at most three.
        basis: Spatial weight function.
    """

    alpha: float
    s_tilde_coeffs: tuple[float, ...] = (1.0,)
    basis: SpatialBasis = field(default_factory=SpatialBasis)

    def __post_init__(self):
        object.__setattr__(self, "s_tilde_coeffs", tuple(float(c) for c in self.s_tilde_coeffs))
        if not 1 <= len(self.s_tilde_coeffs) <= 4:
            raise DomainError(f"s_tilde_coeffs must have 1 to 4 entries, got {len(self.s_tilde_coeffs)}.")
        if self.alpha < 0:
            raise DomainError(f"Noise amplitude alpha must be non-negative, got {self.alpha}.")


class NoiseStructure:
    """Factorised noise structure with ``K`` modes.

    The factor ``ρ(ρ_max - ρ)`` makes every ``σ_k`` vanish at both density
    bounds. Derivatives of ``Σ²`` up to third order are exact polynomial
    derivatives.

    Args:
        modes: The noise modes.
        rho_max: Jam density of the accompanying flux.
        length: Domain length used by the spatial basis.

    Examples:
        >>> import stochastic_lwr as slwr
        >>> noise = slwr.NoiseStructure([slwr.NoiseMode(0.2)], rho_max=1.0, length=1.0)
        >>> round(float(noise.sigma_squared(0.5, 0.3)), 12)
        0.0025
    """

    def __init__(self, modes: list[NoiseMode] | tuple[NoiseMode, ...], rho_max: float, length: float):
        self.modes = tuple(modes)
        self.rho_max = float(rho_max)
        self.length = float(length)
        q = Polynomial([0.0, self.rho_max, -1.0])
        # unit-amplitude squared profiles (q s̃)², one per mode
        self._profiles = tuple((q * Polynomial(m.s_tilde_coeffs)) ** 2 for m in self.modes)
        self._sigma_polys = tuple(q * Polynomial(m.s_tilde_coeffs) for m in self.modes)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(modes={list(self.modes)!r}, rho_max={self.rho_max}, length={self.length})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, NoiseStructure):
            return NotImplemented
        return (self.modes, self.rho_max, self.length) == (other.modes, other.rho_max, other.length)

    def __hash__(self) -> int:
        return hash((self.modes, self.rho_max, self.length))

    @property
    def n_modes(self) -> int:
        """Number of modes ``K``."""
        return len(self.modes)

    @property
    def alphas(self) -> np.ndarray:
        """Mode amplitudes."""
        return np.array([m.alpha for m in self.modes])

    @property
    def is_zero(self) -> bool:
        """True if every mode has zero amplitude."""
        return all(m.alpha == 0 for m in self.modes)

    @property
    def is_test_mode(self) -> bool:
        """False: the factorised structure always satisfies endpoint vanishing."""
        return False

    def with_alphas(self, alphas: numpy.typing.ArrayLike) -> NoiseStructure:
        """Copy of the structure with new mode amplitudes."""
        alphas = np.asarray(alphas, dtype=float)
        if alphas.shape != (self.n_modes,):
            raise DomainError(f"Expected {self.n_modes} amplitudes, got shape {alphas.shape}.")
        modes = [NoiseMode(float(a), m.s_tilde_coeffs, m.basis) for a, m in zip(alphas, self.modes, strict=True)]
        return NoiseStructure(modes, self.rho_max, self.length)

    def basis_values(self, x: numpy.typing.ArrayLike) -> np.ndarray:
        """Array of shape ``(K, *x.shape)`` with ``e_k(x)``."""
        x = np.asarray(x, dtype=float)
        return np.stack([m.basis(x, self.length) for m in self.modes]) if self.modes else np.zeros((0, *x.shape))

    def sigma_values(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Array of shape ``(K, *rho.shape)`` with ``σ_k(ρ)``."""
        rho = np.asarray(rho, dtype=float)
        if not self.modes:
            return np.zeros((0, *rho.shape))
        return np.stack([m.alpha * p(rho) for m, p in zip(self.modes, self._sigma_polys, strict=True)])

    def shape_values(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Array of shape ``(K, *rho.shape)`` with ``s̃_k(ρ)``."""
        rho = np.asarray(rho, dtype=float)
        if not self.modes:
            return np.zeros((0, *rho.shape))
        return np.stack([Polynomial(m.s_tilde_coeffs)(rho) for m in self.modes])

    def amplitudes(self, rho: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Per-mode forcing weights ``σ_k(ρ) e_k(x)``, shape ``(K, *broadcast)``."""
        return self.sigma_values(rho) * self.basis_values(x)

    def mode_derivatives(self, rho: np.ndarray, x: np.ndarray, order: int = 3) -> np.ndarray:
        """Unit-amplitude contributions ``∂ʲ_ρ[(q s̃_k)²] e_k(x)²``.

        Returns:
            Array of shape ``(K, order + 1, *broadcast)``. Multiplying by ``α_k²``
            and summing over ``k`` gives the derivatives of ``Σ²``.
        """
        rho = np.asarray(rho, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(rho.shape, x.shape)
        out = np.zeros((self.n_modes, order + 1, *shape))
        e2 = self.basis_values(x) ** 2
        for k, profile in enumerate(self._profiles):
            for j in range(order + 1):
                out[k, j] = profile.deriv(j)(rho) * e2[k] if j else profile(rho) * e2[k]
        return out

    def derivatives(self, rho: numpy.typing.ArrayLike, x: numpy.typing.ArrayLike, order: int = 3) -> np.ndarray:
        """``Σ²`` and its ρ-derivatives, shape ``(order + 1, *broadcast)``."""
        terms = self.mode_derivatives(rho, x, order)
        return np.einsum("k,kj...->j...", self.alphas**2, terms)

    def sigma_squared(self, rho: numpy.typing.ArrayLike, x: numpy.typing.ArrayLike) -> np.ndarray:
        """Aggregate intensity ``Σ²(ρ, x) = Σ_k σ_k(ρ)² e_k(x)²``."""
        return self.derivatives(rho, x, order=0)[0]


class ConstantDiffusion:
    """Test-mode noise with ``Σ² ≡ sigma2`` (a single constant mode).

    This structure violates endpoint vanishing on purpose; it exists so that the
    pure-diffusion configuration with its analytic solutions can be exercised.
    """

    def __init__(self, sigma2: float, rho_max: float, length: float):
        if sigma2 < 0:
            raise DomainError(f"sigma2 must be non-negative, got {sigma2}.")
        self.sigma2 = float(sigma2)
        self.rho_max = float(rho_max)
        self.length = float(length)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(sigma2={self.sigma2}, rho_max={self.rho_max}, length={self.length})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConstantDiffusion):
            return NotImplemented
        return (self.sigma2, self.rho_max, self.length) == (other.sigma2, other.rho_max, other.length)

    def __hash__(self) -> int:
        return hash((self.sigma2, self.rho_max, self.length))

    n_modes = 1
    is_test_mode = True

    @property
    def alphas(self) -> np.ndarray:
        return np.array([math.sqrt(self.sigma2)])

    @property
    def is_zero(self) -> bool:
        return self.sigma2 == 0

    def with_alphas(self, alphas: numpy.typing.ArrayLike) -> ConstantDiffusion:
        (alpha,) = np.asarray(alphas, dtype=float)
        return ConstantDiffusion(float(alpha) ** 2, self.rho_max, self.length)

    def sigma_values(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        return np.full((1, *rho.shape), math.sqrt(self.sigma2))

    def basis_values(self, x: numpy.typing.ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.ones((1, *x.shape))

    def amplitudes(self, rho: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.sigma_values(rho) * self.basis_values(x)

    def mode_derivatives(self, rho: np.ndarray, x: np.ndarray, order: int = 3) -> np.ndarray:
        shape = np.broadcast_shapes(np.shape(rho), np.shape(x))
        out = np.zeros((1, order + 1, *shape))
        out[0, 0] = 1.0
        return out

    def derivatives(self, rho: numpy.typing.ArrayLike, x: numpy.typing.ArrayLike, order: int = 3) -> np.ndarray:
        shape = np.broadcast_shapes(np.shape(rho), np.shape(x))
        out = np.zeros((order + 1, *shape))
        out[0] = self.sigma2
        return out

    def sigma_squared(self, rho: numpy.typing.ArrayLike, x: numpy.typing.ArrayLike) -> np.ndarray:
        return self.derivatives(rho, x, order=0)[0]


@dataclass(frozen=True)
class InitialProfile:
    """Initial density ``ρ₀(x)``.

    ``values`` holds ``(c,)`` for constant, ``(mean, amplitude, wavenumber)``
    for ``ρ₀ = mean + amplitude·sin(2π·wavenumber·x/L)`` and the density samples
    of a custom table whose positions are ``table_x``.
    """

    kind: InitialKind
    values: tuple[float, ...]
    table_x: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", InitialKind(self.kind))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.kind is InitialKind.CUSTOM_TABLE and (self.table_x is None or len(self.table_x) != len(self.values)):
            raise DomainError("Custom initial table requires table_x of the same length as values.")

    def __call__(self, x: numpy.typing.ArrayLike, length: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        match self.kind:
            case InitialKind.CONSTANT:
                return np.full_like(x, self.values[0])
            case InitialKind.SINE:
                mean, amplitude, wavenumber = (*self.values, 1.0)[:3]
                return mean + amplitude * np.sin(2.0 * math.pi * wavenumber * x / length)
            case InitialKind.CUSTOM_TABLE:
                return np.interp(x, self.table_x, self.values)


@dataclass(frozen=True)
class TrafficModel:
    """Stochastic LWR model on ``[0, L] × [0, T]``.

    Args:
        flux: Fundamental diagram.
        noise: Noise structure (factorised modes or constant test mode).
        domain_length: Road length ``L``.
        horizon: Time horizon ``T``.
        initial_profile: Initial density ``ρ₀``.
        viscosity: Viscous regularisation ``ε ≥ 0``; zero gives the raw model.
        units: Unit system the numbers are expressed in, ``si`` or ``normalized``.
    """

    flux: FluxFunction
    noise: NoiseStructure | ConstantDiffusion
    domain_length: float
    horizon: float
    initial_profile: InitialProfile
    viscosity: float = 0.0
    units: str = "normalized"

    def __post_init__(self):
        if self.domain_length <= 0 or self.horizon <= 0:
            raise DomainError(
                f"Domain length and horizon must be positive, got L={self.domain_length}, T={self.horizon}."
            )
        if self.viscosity < 0:
            raise DomainError(f"Viscosity must be non-negative, got {self.viscosity}.")
        if self.units not in ("si", "normalized"):
            raise DomainError(f"Unknown unit system {self.units!r}; expected 'si' or 'normalized'.")

    @property
    def rho_max(self) -> float:
        """Jam density."""
        return self.flux.rho_max

    def rho0(self, x: numpy.typing.ArrayLike) -> np.ndarray:
        """Initial density at ``x``."""
        return self.initial_profile(x, self.domain_length)

    def with_noise(self, noise: NoiseStructure | ConstantDiffusion) -> TrafficModel:
        """Copy of the model with a different noise structure."""
        return TrafficModel(
            self.flux, noise, self.domain_length, self.horizon, self.initial_profile, self.viscosity, self.units
        )


def flux_value(model: TrafficModel, rho: numpy.typing.ArrayLike) -> np.ndarray:
    """Flow ``f(ρ)``.

    Raises:
        DomainError: If ``rho`` leaves ``[0, rho_max]``.
    """
    return model.flux.value(rho)


def flux_prime(model: TrafficModel, rho: numpy.typing.ArrayLike) -> np.ndarray:
    """Characteristic speed ``f'(ρ)``."""
    return model.flux.prime(rho)


def sigma_squared(model: TrafficModel, rho: numpy.typing.ArrayLike, x: numpy.typing.ArrayLike) -> np.ndarray:
    """Aggregate diffusion intensity ``Σ²(ρ, x) = 2 D(ρ, x)``.

    Raises:
        DomainError: If ``rho`` or ``x`` are out of range.
    """
    rho = _check_density(rho, model.rho_max)
    x = _check_position(x, model.domain_length)
    return model.noise.sigma_squared(rho, x)


def sigma_squared_derivatives(
    model: TrafficModel, rho: numpy.typing.ArrayLike, x: numpy.typing.ArrayLike, order: int = 3
) -> np.ndarray:
    """``Σ²`` and its first ``order`` density derivatives, stacked on axis 0."""
    rho = _check_density(rho, model.rho_max)
    x = _check_position(x, model.domain_length)
    return model.noise.derivatives(rho, x, order)


def ito_drift(model: TrafficModel, rho: numpy.typing.ArrayLike, x: numpy.typing.ArrayLike) -> np.ndarray:
    """Noise-induced drift ``-½ ∂_ρ Σ²(ρ, x)``."""
    return -0.5 * sigma_squared_derivatives(model, rho, x, order=1)[1]


def flux_third(model: TrafficModel, rho: numpy.typing.ArrayLike) -> np.ndarray:
    """Third flux derivative ``f'''(ρ)``."""
    return model.flux.third(rho)


def speed_value(model: TrafficModel, rho: numpy.typing.ArrayLike) -> np.ndarray:
    """Speed ``v(ρ) = f(ρ)/ρ`` with ``v(0) = u_f``."""
    return model.flux.speed(rho)


def speed_inverse(model: TrafficModel, u: float) -> float:
    """Density on the decreasing branch of the speed relation with ``v(ρ) = u``."""
    return model.flux.speed_inverse(u)


def capacity(model: TrafficModel) -> tuple[float, float]:
    """Critical density and road capacity ``(ρ_c, q_max)``."""
    return model.flux.capacity


@dataclass
class AssumptionCheck:
    """Outcome of one standing-assumption check.

    ``probe`` holds the first violating ``(ρ, x)`` pair (or ``(x,)``) if the
    check failed.
    """

    name: str
    passed: bool
    fatal: bool
    detail: str = ""
    probe: tuple[float, ...] | None = None


@dataclass
class ValidationReport:
    """Pass/fail list of the standing-assumption checks."""

    checks: list[AssumptionCheck]

    @property
    def ok(self) -> bool:
        """True if no fatal check failed."""
        return all(c.passed or not c.fatal for c in self.checks)

    @property
    def all_passed(self) -> bool:
        """True if every check passed, advisory ones included."""
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self) -> dict:
        """Plain mapping suitable for YAML output."""
        return {
            "ok": self.ok,
            "checks": {
                c.name: {
                    "passed": c.passed,
                    "fatal": c.fatal,
                    "detail": c.detail,
                    "probe": list(c.probe) if c.probe is not None else None,
                }
                for c in self.checks
            },
        }


def validate_assumptions(model: TrafficModel, probes: int = 1000) -> ValidationReport:
    """Check the standing assumptions of the model on sampled probes.

    Checks concavity and endpoint values of the flux, endpoint vanishing and
    non-degeneracy of the noise, and the interior range of the initial data.
    Drake endpoint and concavity results are advisory; so are the noise checks
    of the constant-diffusion test mode.

    Args:
        model: Model to check.
        probes: Number of density (and position) probes.

    Returns:
        The validation report. This function never raises on a failed check.
    """
    flux = model.flux
    rho_max = model.rho_max
    length = model.domain_length
    rho = np.linspace(0.0, rho_max, probes)
    interior_rho = rho[1:-1]
    x = np.linspace(0.0, length, min(probes, 64))
    checks = []

    advisory_flux = flux.kind is not FluxKind.GREENSHIELDS
    f0 = float(flux._value(np.float64(0.0)))
    f_end = float(flux._value(np.float64(rho_max)))
    endpoint_ok = abs(f0) <= 1e-12 and abs(f_end) <= 1e-12
    checks.append(
        AssumptionCheck(
            "flux_endpoints",
            endpoint_ok,
            fatal=not advisory_flux,
            detail=f"f(0)={f0:.3e}, f(rho_max)={f_end:.3e}" + (" (advisory)" if advisory_flux else ""),
            probe=None if endpoint_ok else ((0.0,) if abs(f0) > 1e-12 else (rho_max,)),
        )
    )

    curvature = flux._second(rho)
    bad = np.flatnonzero(curvature > 1e-12)
    checks.append(
        AssumptionCheck(
            "flux_concavity",
            bad.size == 0,
            fatal=not advisory_flux,
            detail="f'' <= 0 on all probes" if bad.size == 0 else f"f''={curvature[bad[0]]:.3e} > 0",
            probe=None if bad.size == 0 else (float(rho[bad[0]]),),
        )
    )

    noise = model.noise
    test_mode = noise.is_test_mode
    sig_ends = noise.sigma_values(np.array([0.0, rho_max]))
    ends_ok = bool(np.all(sig_ends == 0.0))
    checks.append(
        AssumptionCheck(
            "noise_endpoints",
            ends_ok,
            fatal=not test_mode,
            detail="sigma_k vanish at 0 and rho_max" if ends_ok else "sigma_k do not vanish at the density bounds",
            probe=None if ends_ok else (0.0,),
        )
    )

    if noise.is_zero:
        checks.append(
            AssumptionCheck("noise_nondegeneracy", False, fatal=False, detail="zero-noise configuration (advisory)")
        )
    else:
        rr, xx = np.meshgrid(interior_rho, x[1:-1] if x.size > 2 else x, indexing="ij")
        sigma2 = noise.sigma_squared(rr, xx)
        shape_ok = True
        if not test_mode:
            # s̃_k changing sign makes Σ² vanish even if basis values are fine
            shapes = noise.shape_values(interior_rho)
            sign_change = np.flatnonzero(np.any(shapes <= 0, axis=0))
            shape_ok = sign_change.size == 0
        bad = np.argwhere(sigma2 <= 0)
        if bad.size or not shape_ok:
            if not shape_ok:
                probe = (float(interior_rho[sign_change[0]]), float(xx[0, 0]))
            else:
                i, j = bad[0]
                probe = (float(rr[i, j]), float(xx[i, j]))
            checks.append(
                AssumptionCheck(
                    "noise_nondegeneracy",
                    False,
                    fatal=not test_mode,
                    detail=f"Sigma^2 <= 0 at rho={probe[0]:.6g}, x={probe[1]:.6g}",
                    probe=probe,
                )
            )
        else:
            checks.append(AssumptionCheck("noise_nondegeneracy", True, fatal=not test_mode, detail="Sigma^2 > 0"))

    x_fine = np.linspace(0.0, length, probes)
    rho0 = model.rho0(x_fine)
    bad = np.flatnonzero(~((rho0 > 0) & (rho0 < rho_max)))
    checks.append(
        AssumptionCheck(
            "initial_data",
            bad.size == 0,
            fatal=True,
            detail="0 < rho0 < rho_max" if bad.size == 0 else f"rho0={rho0[bad[0]]:.6g} at x={x_fine[bad[0]]:.6g}",
            probe=None if bad.size == 0 else (float(x_fine[bad[0]]),),
        )
    )

    report = ValidationReport(checks)
    for check in report.checks:
        if not check.passed:
            logger.debug("assumption check %s failed: %s", check.name, check.detail)
    return report
