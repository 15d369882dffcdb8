"""Score network, learnable closures and the training losses.

The score ``s_θ(ρ̂; x, t)`` is a :py:class:`~stochastic_lwr._network.TaylorMLP`
over ``(ρ̂/ρ_max, γ(x/L), γ(t/T))`` with sinusoidal encoding ``γ``. Its exact
input derivatives feed the score-form Fokker–Planck residual

    R = ∂ₜs + v ∂s + (∂v) s + ∂²v,   v = b - ½∂Σ² - ½Σ² s,

and every loss returns its gradient with respect to the score parameters, the
closure parameters and the logarithmic noise amplitudes.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import logsumexp
from scipy.stats import qmc, truncnorm

from stochastic_lwr._errors import ConfigurationError
from stochastic_lwr._fpe import Closure, ClosureKind, numerical_score
from stochastic_lwr._inference import cumulative_rule, gauss_legendre
from stochastic_lwr._network import TaylorMLP

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    import numpy.typing

    import stochastic_lwr

logger = logging.getLogger(__name__)

# rejection rate above which a DSM scale is considered too large
MAX_REJECTION = 0.99
# minimum number of draws before the rejection rate is judged
_MIN_DRAWS = 1000
# cumulative-integral order and normalisation nodes for log p_θ in the boundary loss
_CUMULATIVE_ORDER = 8
_NORM_NODES = 24
_INITIAL_NODES = 16


class ClosureNetKind(enum.StrEnum):
    """Parameterisations of the learned drift ``b_φ``."""

    STRUCTURED_M = "structured_m"
    MEAN_FIELD_NET = "meanfield_net"
    DIRECT = "direct"


def encode(z: numpy.typing.ArrayLike, levels: int) -> np.ndarray:
    """Sinusoidal encoding ``(sin 2⁰πz, cos 2⁰πz, …, sin 2^{M-1}πz, cos 2^{M-1}πz)``.

    Args:
        z: Coordinates scaled to ``[0, 1]``.
        levels: Number of frequencies ``M``.

    Returns:
        Array of shape ``(*z.shape, 2 * levels)``.

    Examples:
        >>> from stochastic_lwr._score import encode
        >>> encode(0.0, 2).tolist()
        [0.0, 1.0, 0.0, 1.0]
    """
    z = np.asarray(z, dtype=float)
    freq = np.pi * 2.0 ** np.arange(levels)
    phase = z[..., None] * freq
    out = np.empty((*z.shape, 2 * levels))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def encode_derivative(z: numpy.typing.ArrayLike, levels: int) -> np.ndarray:
    """Derivative of :py:func:`encode` with respect to ``z``."""
    z = np.asarray(z, dtype=float)
    freq = np.pi * 2.0 ** np.arange(levels)
    phase = z[..., None] * freq
    out = np.empty((*z.shape, 2 * levels))
    out[..., 0::2] = freq * np.cos(phase)
    out[..., 1::2] = -freq * np.sin(phase)
    return out


def _flatten(rho_hat, x, t) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple[int, ...]]:
    rho, x, t = np.broadcast_arrays(
        np.asarray(rho_hat, dtype=float), np.asarray(x, dtype=float), np.asarray(t, dtype=float)
    )
    return rho.ravel(), x.ravel(), t.ravel(), rho.shape


def _column(a: np.ndarray | None, n: int) -> np.ndarray:
    return np.zeros(n) if a is None else a[:, 0]


@dataclass
class _Pass:
    """Forward record needed by a vector-Jacobian product."""

    caches: list
    n: int
    extra: tuple = ()


class ScoreModel:
    """Scalar score network with exact input derivatives.

    Args:
        rho_max: Jam density; the density input is ``ρ̂ / rho_max``.
        length: Domain length ``L``.
        horizon: Time horizon ``T``.
        depth: Number of hidden layers ``L_net``.
        width: Hidden width ``H``.
        levels: Encoding levels ``M``.
        params: Flat parameter vector; Xavier-initialised from ``seed`` if omitted.
        seed: Initialisation seed.
    """

    def __init__(
        self,
        rho_max: float,
        length: float,
        horizon: float,
        depth: int = 4,
        width: int = 64,
        levels: int = 4,
        params: numpy.typing.ArrayLike | None = None,
        seed: int = 0,
    ):
        self.rho_max = float(rho_max)
        self.length = float(length)
        self.horizon = float(horizon)
        self.depth = int(depth)
        self.width = int(width)
        self.levels = int(levels)
        self.network = TaylorMLP([self.input_width] + [self.width] * self.depth + [1])
        if params is None:
            self.params = self.network.init_params(np.random.default_rng(seed))
        else:
            self.params = np.array(params, dtype=float)
            if self.params.shape != (self.network.n_params,):
                raise ValueError(f"Expected {self.network.n_params} score parameters, got shape {self.params.shape}.")

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(depth={self.depth}, width={self.width}, levels={self.levels}, "
            f"n_params={self.n_params})"
        )

    @property
    def input_width(self) -> int:
        """Encoded input width ``1 + 4M``."""
        return 1 + 4 * self.levels

    @property
    def n_params(self) -> int:
        """Number of trainable parameters."""
        return self.network.n_params

    def copy(self, params: numpy.typing.ArrayLike | None = None) -> ScoreModel:
        """Same architecture with a copy of (or new) parameters."""
        return ScoreModel(
            self.rho_max,
            self.length,
            self.horizon,
            self.depth,
            self.width,
            self.levels,
            self.params if params is None else params,
        )

    def _channels(self, rho: np.ndarray, x: np.ndarray, t: np.ndarray, derivatives: bool) -> list:
        scaled_t = t / self.horizon
        u = np.column_stack([rho / self.rho_max, encode(x / self.length, self.levels), encode(scaled_t, self.levels)])
        if not derivatives:
            return [u]
        d_rho = np.zeros_like(u)
        d_rho[:, 0] = 1.0 / self.rho_max
        d_t = np.zeros_like(u)
        d_t[:, 1 + 2 * self.levels :] = encode_derivative(scaled_t, self.levels) / self.horizon
        return [u, d_rho, None, d_t]

    def forward(
        self, rho_hat: numpy.typing.ArrayLike, x: numpy.typing.ArrayLike, t: numpy.typing.ArrayLike, derivatives=True
    ) -> tuple[list[np.ndarray], _Pass]:
        """Flat ``[s, ∂s, ∂²s, ∂ₜs]`` (only ``[s]`` without derivatives) and the pass record."""
        rho, x, t, _shape = _flatten(rho_hat, x, t)
        outputs, caches = self.network.forward(self.params, self._channels(rho, x, t, derivatives))
        n = rho.size
        channels = [_column(c, n) for c in outputs] if derivatives else [outputs[0][:, 0]]
        return channels, _Pass(caches, n)

    def vjp(self, record: _Pass, cotangents: Sequence[np.ndarray | None]) -> np.ndarray:
        """Parameter gradient of ``Σ_c <cotangent_c, channel_c>``."""
        columns = [None if c is None else c[:, None] for c in cotangents]
        return self.network.backward(self.params, record.caches, columns)

    def __call__(self, rho_hat, x, t) -> np.ndarray:
        """Score values ``s_θ(ρ̂; x, t)``."""
        shape = np.broadcast_shapes(np.shape(rho_hat), np.shape(x), np.shape(t))
        (s,), _ = self.forward(rho_hat, x, t, derivatives=False)
        return s.reshape(shape)


class AnalyticScore:
    """Score with closed-form derivatives, used in place of a network.

    Every argument is a function ``f(rho_hat, x, t)``; missing derivatives are zero.
    """

    n_params = 0

    def __init__(
        self,
        value: Callable,
        d_rho: Callable | None = None,
        d2_rho: Callable | None = None,
        d_t: Callable | None = None,
        rho_max: float = 1.0,
    ):
        self.functions = (value, d_rho, d2_rho, d_t)
        self.rho_max = float(rho_max)

    def forward(self, rho_hat, x, t, derivatives=True):
        rho, x, t, _shape = _flatten(rho_hat, x, t)
        funcs = self.functions if derivatives else self.functions[:1]
        channels = [
            np.zeros_like(rho) if f is None else np.broadcast_to(np.asarray(f(rho, x, t), dtype=float), rho.shape)
            for f in funcs
        ]
        return channels, _Pass([], rho.size)

    def vjp(self, record, cotangents):
        return np.zeros(0)

    def __call__(self, rho_hat, x, t):
        shape = np.broadcast_shapes(np.shape(rho_hat), np.shape(x), np.shape(t))
        (s,), _ = self.forward(rho_hat, x, t, derivatives=False)
        return s.reshape(shape)


class GridScore:
    """Finite-difference score of a :py:class:`~stochastic_lwr.DensityGrid` with derivatives.

    Score, its first two density derivatives and its time derivative are
    tabulated on the unmasked cells at every stored time and interpolated
    linearly. The position argument is ignored.
    """

    n_params = 0

    def __init__(self, pgrid: stochastic_lwr.DensityGrid):
        self.rho_max = pgrid.mesh.rho_max
        self.times = np.asarray(pgrid.times, dtype=float)
        h = pgrid.mesh.h
        scores = [numerical_score(pgrid, j) for j in range(self.times.size)]
        valid = np.logical_and.reduce([s.valid for s in scores])
        lo, hi = np.flatnonzero(valid)[[0, -1]]
        # drop the one-sided end cells of the common band
        band = slice(lo + 1, hi)
        self.centers = pgrid.mesh.cell_centers[band]
        s = np.array([sc.values[band] for sc in scores])
        s1 = np.gradient(s, h, axis=1)
        s2 = np.gradient(s1, h, axis=1)
        st = np.gradient(s, self.times, axis=0) if self.times.size > 1 else np.zeros_like(s)
        self._tables = (s, s1, s2, st)

    def _interp(self, table: np.ndarray, rho: np.ndarray, t: np.ndarray) -> np.ndarray:
        j = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, max(self.times.size - 2, 0))
        if self.times.size == 1:
            return np.interp(rho, self.centers, table[0])
        w = np.clip((t - self.times[j]) / (self.times[j + 1] - self.times[j]), 0.0, 1.0)
        out = np.empty_like(rho)
        for k in np.unique(j):
            sel = j == k
            left = np.interp(rho[sel], self.centers, table[k])
            right = np.interp(rho[sel], self.centers, table[k + 1])
            out[sel] = (1.0 - w[sel]) * left + w[sel] * right
        return out

    def forward(self, rho_hat, x, t, derivatives=True):
        rho, _x, t, _shape = _flatten(rho_hat, x, t)
        tables = self._tables if derivatives else self._tables[:1]
        return [self._interp(table, rho, t) for table in tables], _Pass([], rho.size)

    def vjp(self, record, cotangents):
        return np.zeros(0)


class ClosureModel:
    """Learnable conditional drift ``b_φ``.

    ``STRUCTURED_M`` learns ``m_φ(ρ̂, x, t)`` with ``b = -f'(ρ̂) m_φ``;
    ``MEAN_FIELD_NET`` learns a smooth mean density ``ρ̄_φ(x, t)`` with
    ``b = -f'(ρ̂) ∂ₓρ̄_φ``; ``DIRECT`` learns ``b`` itself. A frozen closure
    keeps its parameters during training.
    """

    def __init__(
        self,
        kind: ClosureNetKind | str,
        rho_max: float,
        length: float,
        horizon: float,
        depth: int = 2,
        width: int = 32,
        levels: int = 4,
        params: numpy.typing.ArrayLike | None = None,
        seed: int = 1,
        frozen: bool = False,
    ):
        self.kind = ClosureNetKind(kind)
        self.rho_max = float(rho_max)
        self.length = float(length)
        self.horizon = float(horizon)
        self.depth = int(depth)
        self.width = int(width)
        self.levels = int(levels)
        self.frozen = bool(frozen)
        n_in = 4 * self.levels if self.kind is ClosureNetKind.MEAN_FIELD_NET else 1 + 4 * self.levels
        self.network = TaylorMLP([n_in] + [self.width] * self.depth + [1])
        if params is None:
            self.params = self.network.init_params(np.random.default_rng(seed))
        else:
            self.params = np.array(params, dtype=float)
            if self.params.shape != (self.network.n_params,):
                raise ValueError(f"Expected {self.network.n_params} closure parameters, got shape {self.params.shape}.")

    @classmethod
    def zero(cls, rho_max: float, length: float, horizon: float, kind=ClosureNetKind.STRUCTURED_M, **kwargs):
        """Frozen closure with all parameters zero, so ``b_φ ≡ 0``."""
        closure = cls(kind, rho_max, length, horizon, frozen=True, **kwargs)
        closure.params = np.zeros_like(closure.params)
        return closure

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(kind={self.kind.value!r}, n_params={self.n_params}, frozen={self.frozen})"

    @property
    def n_params(self) -> int:
        """Number of parameters."""
        return self.network.n_params

    def copy(self, params: numpy.typing.ArrayLike | None = None) -> ClosureModel:
        """Same architecture with a copy of (or new) parameters."""
        return ClosureModel(
            self.kind,
            self.rho_max,
            self.length,
            self.horizon,
            self.depth,
            self.width,
            self.levels,
            self.params if params is None else params,
            frozen=self.frozen,
        )

    def _channels(self, rho: np.ndarray, x: np.ndarray, t: np.ndarray) -> list:
        ex = encode(x / self.length, self.levels)
        et = encode(t / self.horizon, self.levels)
        if self.kind is ClosureNetKind.MEAN_FIELD_NET:
            u = np.column_stack([ex, et])
            d_x = np.zeros_like(u)
            d_x[:, : 2 * self.levels] = encode_derivative(x / self.length, self.levels) / self.length
            return [u, d_x]
        u = np.column_stack([rho / self.rho_max, ex, et])
        d_rho = np.zeros_like(u)
        d_rho[:, 0] = 1.0 / self.rho_max
        return [u, d_rho]

    def forward(
        self, flux: stochastic_lwr.FluxFunction, rho_hat, x, t
    ) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray], _Pass]:
        """Flat ``(b, ∂b, ∂²b)`` with respect to ``ρ̂`` and the pass record."""
        rho, x, t, _shape = _flatten(rho_hat, x, t)
        n = rho.size
        outputs, caches = self.network.forward(self.params, self._channels(rho, x, t))
        value, d1, d2 = (_column(c, n) for c in outputs[:3])
        if self.kind is ClosureNetKind.DIRECT:
            return (value, d1, d2), _Pass(caches, n)
        clipped = np.clip(rho, 0.0, flux.rho_max)
        f1, f2, f3 = flux.prime(clipped), flux.second(clipped), flux.third(clipped)
        if self.kind is ClosureNetKind.MEAN_FIELD_NET:
            return (-f1 * d1, -f2 * d1, -f3 * d1), _Pass(caches, n, (f1, f2, f3))
        b = -f1 * value
        b1 = -f2 * value - f1 * d1
        b2 = -f3 * value - 2.0 * f2 * d1 - f1 * d2
        return (b, b1, b2), _Pass(caches, n, (f1, f2, f3))

    def vjp(self, record: _Pass, cotangents: Sequence[np.ndarray]) -> np.ndarray:
        """Parameter gradient of ``<b̄, b> + <b̄', ∂b> + <b̄'', ∂²b>``."""
        bbar, b1bar, b2bar = cotangents
        if self.kind is ClosureNetKind.DIRECT:
            channel_bars = [bbar, b1bar, b2bar]
        elif self.kind is ClosureNetKind.MEAN_FIELD_NET:
            f1, f2, f3 = record.extra
            channel_bars = [None, -f1 * bbar - f2 * b1bar - f3 * b2bar]
        else:
            f1, f2, f3 = record.extra
            channel_bars = [
                -f1 * bbar - f2 * b1bar - f3 * b2bar,
                -f1 * b1bar - 2.0 * f2 * b2bar,
                -f1 * b2bar,
            ]
        return self.network.backward(
            self.params, record.caches, [None if c is None else c[:, None] for c in channel_bars]
        )

    def __call__(self, flux: stochastic_lwr.FluxFunction, rho_hat, x, t) -> np.ndarray:
        """Drift values ``b_φ(ρ̂, x, t)``."""
        shape = np.broadcast_shapes(np.shape(rho_hat), np.shape(x), np.shape(t))
        (b, _b1, _b2), _ = self.forward(flux, rho_hat, x, t)
        return b.reshape(shape)


@dataclass
class _VelocityPass:
    rho: np.ndarray
    x: np.ndarray
    shape: tuple[int, ...]
    s: list[np.ndarray]
    b: tuple[np.ndarray, np.ndarray, np.ndarray]
    sigma: np.ndarray
    v: tuple[np.ndarray, np.ndarray, np.ndarray]
    score_pass: _Pass
    closure_pass: _Pass

    @property
    def residual(self) -> np.ndarray:
        s, s1, _s2, st = self.s
        v, v1, v2 = self.v
        return st + v * s1 + v1 * s + v2


def _velocity_pass(score, closure: ClosureModel, traffic, rho_hat, x, t) -> _VelocityPass:
    rho, xf, tf, shape = _flatten(rho_hat, x, t)
    s_channels, score_pass = score.forward(rho, xf, tf)
    (b, b1, b2), closure_pass = closure.forward(traffic.flux, rho, xf, tf)
    sig = traffic.noise.derivatives(np.clip(rho, 0.0, traffic.rho_max), xf, order=3)
    s, s1, s2, _st = s_channels
    v = b - 0.5 * sig[1] - 0.5 * sig[0] * s
    v1 = b1 - 0.5 * sig[2] - 0.5 * (sig[1] * s + sig[0] * s1)
    v2 = b2 - 0.5 * sig[3] - 0.5 * (sig[2] * s + 2.0 * sig[1] * s1 + sig[0] * s2)
    return _VelocityPass(rho, xf, shape, s_channels, (b, b1, b2), sig, (v, v1, v2), score_pass, closure_pass)


def eval_with_derivatives(
    model: ScoreModel, rho_hat, x, t
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Score and its exact derivatives ``(s, ∂s/∂ρ̂, ∂²s/∂ρ̂², ∂s/∂t)``.

    Examples:
        >>> import stochastic_lwr as slwr
        >>> net = slwr.ScoreModel(rho_max=1.0, length=1.0, horizon=1.0, depth=0, levels=1)
        >>> net.params[:] = 0.0
        >>> net.params[0] = 3.0  # weight of the density input
        >>> s, ds, d2s, dt = slwr.eval_with_derivatives(net, 0.2, 0.5, 0.1)
        >>> float(ds), float(d2s), float(dt)
        (3.0, 0.0, 0.0)
    """
    shape = np.broadcast_shapes(np.shape(rho_hat), np.shape(x), np.shape(t))
    channels, _ = model.forward(rho_hat, x, t)
    return tuple(c.reshape(shape) for c in channels)


def closed_velocity(
    model, closure: ClosureModel, traffic: stochastic_lwr.TrafficModel, rho_hat, x, t
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Probability-flow velocity ``v = b_φ - ½∂Σ² - ½Σ² s_θ`` and two density derivatives."""
    vp = _velocity_pass(model, closure, traffic, rho_hat, x, t)
    return tuple(c.reshape(vp.shape) for c in vp.v)


def fpe_residual(model, closure: ClosureModel, traffic: stochastic_lwr.TrafficModel, rho_hat, x, t) -> np.ndarray:
    """Score-form Fokker–Planck residual ``∂ₜs + v ∂s + (∂v) s + ∂²v``."""
    vp = _velocity_pass(model, closure, traffic, rho_hat, x, t)
    return vp.residual.reshape(vp.shape)


@dataclass
class LossTerm:
    """A loss value and its gradients with respect to ``θ``, ``φ`` and ``log α``."""

    value: float
    theta: np.ndarray
    phi: np.ndarray
    raw_alpha: np.ndarray

    @classmethod
    def zero(cls, n_theta: int, n_phi: int, n_alpha: int) -> LossTerm:
        """Zero loss with zero gradients."""
        return cls(0.0, np.zeros(n_theta), np.zeros(n_phi), np.zeros(n_alpha))

    def scaled(self, factor: float) -> LossTerm:
        """Loss and gradients multiplied by ``factor``."""
        return LossTerm(factor * self.value, factor * self.theta, factor * self.phi, factor * self.raw_alpha)

    def __add__(self, other: LossTerm) -> LossTerm:
        return LossTerm(
            self.value + other.value, self.theta + other.theta, self.phi + other.phi, self.raw_alpha + other.raw_alpha
        )


def _noise_gradient(traffic, rho: np.ndarray, x: np.ndarray, sigma_bars: Sequence[np.ndarray]) -> np.ndarray:
    """Chain ``∂L/∂(∂ʲΣ²)`` to ``∂L/∂ log α_k`` via ``∂(∂ʲΣ²)/∂ log α_k = 2α_k² T_kj``."""
    order = len(sigma_bars) - 1
    terms = traffic.noise.mode_derivatives(np.clip(rho, 0.0, traffic.rho_max), x, order)
    bars = np.stack(sigma_bars)
    return 2.0 * traffic.noise.alphas**2 * np.einsum("kji,ji->k", terms, bars)


def lhs_sample(n: int, bounds: Sequence[tuple[float, float]], seed: int) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in the box ``bounds``.

    Returns:
        Array of shape ``(n, len(bounds))``.

    Examples:
        >>> from stochastic_lwr import lhs_sample
        >>> lhs_sample(4, [(0.0, 1.0), (0.0, 2.0), (0.0, 0.5)], seed=1).shape
        (4, 3)
    """
    if n < 1:
        raise ValueError(f"Need at least one sample point, got n={n}.")
    bounds = np.asarray(bounds, dtype=float)
    sampler = qmc.LatinHypercube(d=bounds.shape[0], seed=np.random.default_rng(seed))
    return qmc.scale(sampler.random(n), bounds[:, 0], bounds[:, 1])


def dsm_perturbations(
    rho_obs: np.ndarray, scales: np.ndarray, rho_max: float, rng: np.random.Generator
) -> np.ndarray:
    """Standard-normal draws ``ε`` of shape ``(n_scales, n_obs)`` with ``ρ_obs + σ ε ∈ (0, ρ_max)``.

    Rejected draws are resampled, which leaves the kernel log-gradient
    ``-ε/σ`` unchanged because the truncation normaliser depends on ``ρ_obs`` only.

    Raises:
        ConfigurationError: If more than 99 % of the draws at a scale are rejected.
    """
    rho_obs = np.asarray(rho_obs, dtype=float)
    eps = np.empty((len(scales), rho_obs.size))
    for level, sigma in enumerate(scales):
        draws = rng.standard_normal(rho_obs.size)
        pending = np.ones(rho_obs.size, dtype=bool)
        drawn = rejected = 0
        while True:
            perturbed = rho_obs[pending] + sigma * draws[pending]
            ok = (perturbed > 0.0) & (perturbed < rho_max)
            drawn += ok.size
            rejected += int(np.count_nonzero(~ok))
            idx = np.flatnonzero(pending)
            eps[level, idx[ok]] = draws[idx[ok]]
            pending[idx[ok]] = False
            if drawn >= _MIN_DRAWS and rejected > MAX_REJECTION * drawn:
                raise ConfigurationError(
                    f"DSM scale {sigma:.6g} is too large: {rejected / drawn:.1%} of perturbed densities "
                    f"left (0, {rho_max})."
                )
            if not pending.any():
                break
            draws[pending] = rng.standard_normal(np.count_nonzero(pending))
        if rejected:
            logger.debug("DSM scale %.4g: resampled %d of %d draws", sigma, rejected, drawn)
    return eps


def dsm_terms(
    model,
    x: np.ndarray,
    t: np.ndarray,
    rho_obs: np.ndarray,
    eps: np.ndarray,
    scales,
    weights,
    grad: bool = True,
    n_phi: int = 0,
    n_alpha: int = 0,
) -> LossTerm:
    """Weighted DSM loss ``Σ_l w_l mean_i |s(ρ_i + σ_l ε_li) + ε_li/σ_l|²`` for pre-drawn ``ε``.

    ``n_phi`` and ``n_alpha`` size the (zero) closure and noise gradients.
    """
    n_scales, n = eps.shape
    scales = np.asarray(scales, dtype=float)[:, None]
    weights = np.asarray(weights, dtype=float)[:, None]
    perturbed = rho_obs + scales * eps
    (s,), record = model.forward(
        perturbed.ravel(), np.tile(x, n_scales), np.tile(t, n_scales), derivatives=False
    )
    misfit = s.reshape(n_scales, n) + eps / scales
    value = float(np.sum(weights * np.mean(misfit**2, axis=1, keepdims=True)))
    theta = model.vjp(record, [(2.0 * weights * misfit / n).ravel()]) if grad else np.zeros(model.n_params)
    return LossTerm(value, theta, np.zeros(n_phi), np.zeros(n_alpha))


def dsm_loss(model, obs: stochastic_lwr.ObservationSet, config: stochastic_lwr.TrainConfig, rng) -> float:
    """Multi-scale denoising score-matching loss over all observations.

    Raises:
        ConfigurationError: If a scale rejects more than 99 % of perturbations.
    """
    x, t, rho = obs.densities.T
    scales = config.dsm_scales(obs.rho_max)
    eps = dsm_perturbations(rho, scales, obs.rho_max, rng)
    return dsm_terms(model, x, t, rho, eps, scales, config.dsm_weights(obs.rho_max), grad=False).value


def physics_terms(
    model, closure: ClosureModel, traffic: stochastic_lwr.TrafficModel, collocation: np.ndarray, grad: bool = True
) -> LossTerm:
    """Mean squared residual over ``collocation`` rows ``(ρ̂, x, t)`` with gradients."""
    collocation = np.atleast_2d(np.asarray(collocation, dtype=float))
    if collocation.shape[0] == 0:
        raise ValueError("Collocation set is empty.")
    rho, x, t = collocation.T
    vp = _velocity_pass(model, closure, traffic, rho, x, t)
    r = vp.residual
    value = float(np.mean(r**2))
    n_alpha = traffic.noise.n_modes
    if not grad:
        return LossTerm(value, np.zeros(model.n_params), np.zeros(closure.n_params), np.zeros(n_alpha))
    c = 2.0 * r / r.size
    s, s1, s2, _st = vp.s
    v, v1, _v2 = vp.v
    sig = vp.sigma
    theta = model.vjp(
        vp.score_pass,
        [
            c * (-0.5 * sig[0] * s1 + v1 - 0.5 * sig[1] * s - 0.5 * sig[2]),
            c * (v - 0.5 * sig[0] * s - sig[1]),
            c * (-0.5 * sig[0]),
            c,
        ],
    )
    phi = closure.vjp(vp.closure_pass, [c * s1, c * s, c])
    raw_alpha = _noise_gradient(
        traffic,
        vp.rho,
        vp.x,
        [c * (-s * s1 - 0.5 * s2), c * (-1.5 * s1 - 0.5 * s**2), -c * s, -0.5 * c],
    )
    return LossTerm(value, theta, phi, raw_alpha)


def physics_loss(
    model, closure: ClosureModel, traffic: stochastic_lwr.TrafficModel, collocation: numpy.typing.ArrayLike
) -> float:
    """Mean squared score-form residual over collocation points ``(ρ̂, x, t)``.

    Raises:
        ValueError: If the collocation set is empty.
    """
    return physics_terms(model, closure, traffic, np.asarray(collocation, dtype=float), grad=False).value


def _log_density_pass(model, targets: np.ndarray, norm_nodes: np.ndarray, norm_weights: np.ndarray, x, t, rho_max):
    """``log p_θ`` at ``targets`` (shape ``(N, P)``) with normalisation over ``norm_nodes`` (``(N, Q)``)."""
    n, p = targets.shape
    q = norm_nodes.shape[1]
    points = np.concatenate([targets, norm_nodes], axis=1)
    sub_nodes, sub_weights = cumulative_rule(points, 0.5 * rho_max, _CUMULATIVE_ORDER)
    m = sub_nodes.shape[-1]
    xs = np.broadcast_to(np.asarray(x, dtype=float)[:, None, None], sub_nodes.shape)
    ts = np.broadcast_to(np.asarray(t, dtype=float)[:, None, None], sub_nodes.shape)
    (s,), record = model.forward(sub_nodes.ravel(), xs.ravel(), ts.ravel(), derivatives=False)
    integrals = np.sum(sub_weights * s.reshape(n, p + q, m), axis=2)
    log_norm = logsumexp(integrals[:, p:], b=norm_weights, axis=1)
    log_p = integrals[:, :p] - log_norm[:, None]
    normalised = norm_weights * np.exp(integrals[:, p:] - log_norm[:, None])

    def vjp(log_p_bar: np.ndarray) -> np.ndarray:
        integral_bar = np.concatenate([log_p_bar, -log_p_bar.sum(axis=1, keepdims=True) * normalised], axis=1)
        return model.vjp(record, [(integral_bar[:, :, None] * sub_weights).ravel()])

    return log_p, vjp


def _composite_nodes(lo: np.ndarray, hi: np.ndarray, rho_max: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss–Legendre nodes on ``[0, lo]``, ``[lo, hi]`` and ``[hi, rho_max]`` per row."""
    unit_nodes, unit_weights = gauss_legendre(n, 0.0, 1.0)
    edges = np.column_stack([np.zeros_like(lo), lo, hi, np.full_like(lo, rho_max)])
    widths = np.diff(edges, axis=1)
    nodes = edges[:, :-1, None] + widths[:, :, None] * unit_nodes
    weights = widths[:, :, None] * unit_weights
    return nodes.reshape(lo.size, -1), weights.reshape(lo.size, -1)


def bc_terms(
    model,
    closure: ClosureModel,
    traffic: stochastic_lwr.TrafficModel,
    boundary_points: np.ndarray,
    initial_points: np.ndarray,
    mollifier_width: float,
    margin: float | None = None,
    grad: bool = True,
) -> LossTerm:
    """Boundary-flux and initial-law loss with gradients.

    Args:
        model: Score model.
        closure: Closure model.
        traffic: Traffic model providing flux, noise and initial profile.
        boundary_points: Rows ``(x, t)`` where the zero-flux condition is checked.
        initial_points: Positions ``x`` where the law at ``t = 0`` is compared with
            the mollified delta at ``ρ₀(x)``.
        mollifier_width: Standard deviation of the mollified delta as a fraction of ``rho_max``.
        margin: Distance of the flux probes from the density bounds, default ``0.01 rho_max``.
        grad: Compute gradients.
    """
    rho_max = traffic.rho_max
    margin = 0.01 * rho_max if margin is None else float(margin)
    n_theta, n_phi, n_alpha = model.n_params, closure.n_params, traffic.noise.n_modes
    total = LossTerm.zero(n_theta, n_phi, n_alpha)
    boundary_points = np.asarray(boundary_points, dtype=float).reshape(-1, 2)
    initial_points = np.asarray(initial_points, dtype=float).ravel()

    if boundary_points.shape[0]:
        xb, tb = boundary_points.T
        nb = xb.size
        probes = np.tile([margin, rho_max - margin], (nb, 1))
        norm_nodes, norm_weights = gauss_legendre(_NORM_NODES, 0.0, rho_max)
        log_p, log_p_vjp = _log_density_pass(
            model, probes, np.tile(norm_nodes, (nb, 1)), norm_weights, xb, tb, rho_max
        )
        flat_rho = probes.ravel()
        flat_x = np.repeat(xb, 2)
        flat_t = np.repeat(tb, 2)
        (s,), s_record = model.forward(flat_rho, flat_x, flat_t, derivatives=False)
        (b, _b1, _b2), b_record = closure.forward(traffic.flux, flat_rho, flat_x, flat_t)
        sig = traffic.noise.derivatives(flat_rho, flat_x, order=1)
        p = np.exp(log_p.ravel())
        v = b - 0.5 * sig[1] - 0.5 * sig[0] * s
        flux = p * v
        term = LossTerm(float(np.mean(flux**2)), np.zeros(n_theta), np.zeros(n_phi), np.zeros(n_alpha))
        if grad:
            jbar = 2.0 * flux / flux.size
            term.theta = log_p_vjp((jbar * flux).reshape(nb, 2)) + model.vjp(s_record, [jbar * (-0.5 * sig[0] * p)])
            zeros = np.zeros_like(jbar)
            term.phi = closure.vjp(b_record, [jbar * p, zeros, zeros])
            term.raw_alpha = _noise_gradient(
                traffic, flat_rho, flat_x, [jbar * (-0.5 * p * s), jbar * (-0.5 * p)]
            )
        total = total + term

    if initial_points.size:
        eps = mollifier_width * rho_max
        centre = np.clip(traffic.rho0(initial_points), 1e-9 * rho_max, (1 - 1e-9) * rho_max)
        lo = np.maximum(0.0, centre - 4.0 * eps)
        hi = np.minimum(rho_max, centre + 4.0 * eps)
        unit_nodes, unit_weights = gauss_legendre(_INITIAL_NODES, 0.0, 1.0)
        targets = lo[:, None] + (hi - lo)[:, None] * unit_nodes
        target_weights = (hi - lo)[:, None] * unit_weights
        norm_nodes, norm_weights = _composite_nodes(lo, hi, rho_max, _NORM_NODES)
        t0 = np.zeros_like(initial_points)
        log_p, log_p_vjp = _log_density_pass(model, targets, norm_nodes, norm_weights, initial_points, t0, rho_max)
        a, b = -centre / eps, (rho_max - centre) / eps
        log_delta = truncnorm.logpdf(targets, a[:, None], b[:, None], loc=centre[:, None], scale=eps)
        weight = target_weights * np.exp(log_delta)
        mismatch = log_p - log_delta
        ni = initial_points.size
        value = float(np.sum(weight * mismatch**2) / ni)
        term = LossTerm(value, np.zeros(n_theta), np.zeros(n_phi), np.zeros(n_alpha))
        if grad:
            term.theta = log_p_vjp(2.0 * weight * mismatch / ni)
        total = total + term
    return total


def bc_loss(
    model,
    closure: ClosureModel,
    traffic: stochastic_lwr.TrafficModel,
    boundary_points: numpy.typing.ArrayLike,
    initial_points: numpy.typing.ArrayLike,
    mollifier_width: float,
    margin: float | None = None,
) -> float:
    """Squared zero-flux surrogate ``J = p_θ v`` near both density bounds plus the
    weighted squared log-density mismatch to the mollified initial law.
    """
    return bc_terms(
        model,
        closure,
        traffic,
        np.asarray(boundary_points, dtype=float),
        np.asarray(initial_points, dtype=float),
        mollifier_width,
        margin,
        grad=False,
    ).value


class LearnedScore:
    """A trained :py:class:`ScoreModel` at a fixed position, usable as a score source.

    Examples:
        >>> import stochastic_lwr as slwr
        >>> net = slwr.ScoreModel(rho_max=1.0, length=1.0, horizon=0.5, depth=1, width=4, levels=1)
        >>> source = slwr.LearnedScore(net, x=0.5)
        >>> source.band(0.1)
        (0.0, 1.0)
    """

    def __init__(self, model: ScoreModel, x: float):
        self.model = model
        self.x = float(x)
        self.rho_max = model.rho_max
        self.t_span = (0.0, model.horizon)

    def __call__(self, rho_hat, t):
        return self.model(rho_hat, self.x, t)

    def band(self, t):
        return 0.0, self.rho_max


class LearnedClosure(Closure):
    """Trained :py:class:`ClosureModel` usable by the Fokker–Planck solver and the PF-ODE."""

    kind = ClosureKind.LEARNED

    def __init__(self, model: ClosureModel, traffic: stochastic_lwr.TrafficModel):
        self.model = model
        self.traffic = traffic

    def __call__(self, rho_hat, x, t):
        return self.model(self.traffic.flux, rho_hat, x, t)
