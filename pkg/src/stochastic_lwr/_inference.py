"""Density recovery from a score and derived traffic functionals.

The log-density is the integral of the score from a reference density,

    log p(ρ̂) = ∫_{ρ*}^{ρ̂} s(ρ') dρ' - log C,

with ``C`` fixed by unit mass under Gauss–Legendre quadrature on ``[0, ρ_max]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp, roots_legendre

from stochastic_lwr._errors import DomainError, NumericalError, UnsupportedFluxError

if TYPE_CHECKING:
    from collections.abc import Callable

    import numpy.typing

    import stochastic_lwr
    from stochastic_lwr._pfode import ScoreSource

logger = logging.getLogger(__name__)

DEFAULT_NODES = 100
# Gauss–Legendre order used on every sub-interval of a cumulative integral
PIECE_ORDER = 6
# sub-intervals per global node interval for the cumulative table
REFINE = 8
# half-width of the neighbourhood of the capacity point excluded from the pushforward
CAPACITY_GAP = 2.5e-5
# excised mass above which the pushforward warns
EXCISED_MASS_WARNING = 1e-4


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``n``-point Gauss–Legendre rule on ``[a, b]``.

    Examples:
        >>> from stochastic_lwr._inference import gauss_legendre
        >>> nodes, weights = gauss_legendre(3, 0.0, 2.0)
        >>> round(float(weights.sum()), 12)
        2.0
    """
    x, w = roots_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def cumulative_rule(
    points: numpy.typing.ArrayLike, rho_star: float, m: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature rule for ``∫_{rho_star}^{point} s`` at every point.

    Returns:
        Sub-nodes and signed weights, both of shape ``(*points.shape, m)``, such that
        ``(weights * s(sub_nodes)).sum(-1)`` approximates the integrals.
    """
    points = np.asarray(points, dtype=float)
    x, w = roots_legendre(m)
    half = 0.5 * (points - rho_star)[..., None]
    return rho_star + half * (x + 1.0), half * w


def _score_values(score_source: ScoreSource, rho: np.ndarray, t: float) -> np.ndarray:
    values = np.asarray(score_source(rho, t), dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise NumericalError(f"Score is not finite at rho={float(rho[bad][0])!r}, t={t!r}.")
    return values


def _piecewise_integrals(score_source: ScoreSource, edges: np.ndarray, t: float, m: int) -> np.ndarray:
    """``∫ s`` over each ``[edges[i], edges[i+1]]`` by ``m``-point Gauss–Legendre."""
    x, w = roots_legendre(m)
    half = 0.5 * np.diff(edges)[:, None]
    nodes = edges[:-1, None] + half * (x + 1.0)
    return np.sum(half * w * _score_values(score_source, nodes, t), axis=1)


@dataclass
class RecoveredDensity:
    """Normalised density reconstructed from a score at one ``(x, t)``.

    ``log_p`` holds the normalised log-density at ``quad_nodes``; ``log_norm`` is
    ``log C``. The private refined table supports :py:meth:`pdf` and
    :py:meth:`cdf` between the nodes.
    """

    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    log_p: np.ndarray
    log_norm: float
    x: float
    t: float
    rho_max: float
    rho_star: float
    _breakpoints: np.ndarray = field(repr=False)
    _log_p_break: np.ndarray = field(repr=False)
    _score: ScoreSource = field(repr=False)

    @property
    def density(self) -> np.ndarray:
        """``p`` at the quadrature nodes."""
        return np.exp(self.log_p)

    @property
    def mass(self) -> float:
        """Quadrature mass, one up to rounding."""
        return float(np.sum(self.quad_weights * self.density))

    def pdf(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Normalised density at arbitrary ``rho`` in ``[0, rho_max]``.

        The score is integrated from the nearest refined breakpoint.
        """
        rho = np.asarray(rho, dtype=float)
        if np.any((rho < 0) | (rho > self.rho_max)):
            raise DomainError(f"Densities must lie in [0, {self.rho_max}].")
        flat = rho.ravel()
        index = np.clip(np.searchsorted(self._breakpoints, flat), 1, self._breakpoints.size - 1)
        left = self._breakpoints[index - 1]
        right = self._breakpoints[index]
        nearest = np.where(flat - left <= right - flat, index - 1, index)
        start = self._breakpoints[nearest]
        x, w = roots_legendre(PIECE_ORDER)
        half = 0.5 * (flat - start)[:, None]
        nodes = start[:, None] + half * (x + 1.0)
        weights = half * w
        increments = np.sum(weights * _score_values(self._score, nodes, self.t), axis=1)
        return np.exp(self._log_p_break[nearest] + increments).reshape(rho.shape)

    def cdf(self, rho: numpy.typing.ArrayLike) -> np.ndarray:
        """Cumulative distribution from the trapezoid rule on the refined table."""
        return np.interp(np.asarray(rho, dtype=float), self._breakpoints, self._cdf_table)

    @property
    def _cdf_table(self) -> np.ndarray:
        p = np.exp(self._log_p_break)
        steps = 0.5 * (p[1:] + p[:-1]) * np.diff(self._breakpoints)
        table = np.concatenate([[0.0], np.cumsum(steps)])
        return table / table[-1]

    def quantile(self, level: numpy.typing.ArrayLike) -> np.ndarray:
        """Inverse of :py:meth:`cdf` by monotone piecewise-linear interpolation."""
        table = self._cdf_table
        # drop flat stretches so the inverse is single-valued
        keep = np.concatenate([[True], np.diff(table) > 0])
        return np.interp(np.asarray(level, dtype=float), table[keep], self._breakpoints[keep])


def recover_density(
    score_source: ScoreSource,
    x: float,
    t: float,
    rho_star: float | None = None,
    n_q: int = DEFAULT_NODES,
) -> RecoveredDensity:
    """Reconstruct the normalised density from a score source.

    Args:
        score_source: Score at position ``x``, called as ``score_source(rho_hat, t)``.
        x: Position; must match the source position if it has one.
        t: Time.
        rho_star: Reference density of the cumulative integral, default ``rho_max/2``.
        n_q: Number of global Gauss–Legendre nodes.

    Raises:
        DomainError: If ``rho_star`` is not interior.
        NumericalError: If the score is not finite at a quadrature point.

    Examples:
        >>> import numpy as np
        >>> import stochastic_lwr as slwr
        >>> flat = slwr.FunctionScore(lambda rho, t: np.zeros_like(rho), rho_max=1.0)
        >>> d = slwr.recover_density(flat, x=0.5, t=0.0)
        >>> bool(np.allclose(d.density, 1.0))
        True
    """
    rho_max = float(score_source.rho_max)
    rho_star = 0.5 * rho_max if rho_star is None else float(rho_star)
    if not 0.0 < rho_star < rho_max:
        raise DomainError(f"Reference density {rho_star!r} is outside (0, {rho_max}).")
    source_x = getattr(score_source, "x", math.nan)
    if not math.isnan(source_x) and not math.isclose(source_x, x, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(f"Score source is defined at x={source_x}, density requested at x={x}.")

    nodes, weights = gauss_legendre(n_q, 0.0, rho_max)
    coarse = np.unique(np.concatenate([[0.0, rho_max, rho_star], nodes]))
    fractions = np.linspace(0.0, 1.0, REFINE + 1)[:-1]
    breakpoints = np.concatenate(
        [(coarse[:-1, None] + fractions * np.diff(coarse)[:, None]).ravel(), [rho_max]]
    )
    star = int(np.flatnonzero(breakpoints == rho_star)[0])
    pieces = _piecewise_integrals(score_source, breakpoints, t, PIECE_ORDER)
    cumulative = np.concatenate([[0.0], np.cumsum(pieces)])
    cumulative -= cumulative[star]

    # nodes are a subset of the breakpoints
    node_index = np.searchsorted(breakpoints, nodes)
    log_unnormalised = cumulative[node_index]
    log_norm = float(logsumexp(log_unnormalised, b=weights))
    logger.debug("recovered density at x=%.6g t=%.6g with log C=%.6g", x, t, log_norm)
    return RecoveredDensity(
        quad_nodes=nodes,
        quad_weights=weights,
        log_p=log_unnormalised - log_norm,
        log_norm=log_norm,
        x=float(x),
        t=float(t),
        rho_max=rho_max,
        rho_star=rho_star,
        _breakpoints=breakpoints,
        _log_p_break=cumulative - log_norm,
        _score=score_source,
    )


@dataclass
class SummaryStats:
    """Conditional mean, standard deviation and central 95 % interval."""

    mean: float
    std: float
    ci_lo: float
    ci_hi: float

    def to_dict(self) -> dict[str, float]:
        """Plain mapping, e.g. for JSON output."""
        return {"mean": self.mean, "std": self.std, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi}


def summary_stats(d: RecoveredDensity, level: float = 0.95) -> SummaryStats:
    """Quadrature moments and the central credible interval of ``d``.

    Examples:
        >>> import numpy as np
        >>> import stochastic_lwr as slwr
        >>> flat = slwr.FunctionScore(lambda rho, t: np.zeros_like(rho), rho_max=1.0)
        >>> stats = slwr.summary_stats(slwr.recover_density(flat, x=0.0, t=0.0))
        >>> round(stats.mean, 6), round(stats.ci_lo, 6)
        (0.5, 0.025)
    """
    p = d.density
    mean = float(np.sum(d.quad_weights * d.quad_nodes * p))
    var = float(np.sum(d.quad_weights * (d.quad_nodes - mean) ** 2 * p))
    tail = 0.5 * (1.0 - level)
    lo, hi = d.quantile([tail, 1.0 - tail])
    return SummaryStats(mean, math.sqrt(max(var, 0.0)), float(lo), float(hi))


def congestion_risk(d: RecoveredDensity, rho_c: float) -> float:
    """Probability that the density exceeds ``rho_c``.

    The tail is integrated piecewise between ``rho_c`` and the following global
    nodes with the pointwise :py:meth:`RecoveredDensity.pdf`.

    Raises:
        DomainError: If ``rho_c`` is outside ``[0, rho_max]``.
    """
    if not 0.0 <= rho_c <= d.rho_max:
        raise DomainError(f"Critical density {rho_c!r} is outside [0, {d.rho_max}].")
    edges = np.concatenate([[rho_c], d.quad_nodes[d.quad_nodes > rho_c], [d.rho_max]])
    edges = edges[np.concatenate([[True], np.diff(edges) > 0])]
    if edges.size < 2:
        return 0.0
    x, w = roots_legendre(PIECE_ORDER)
    half = 0.5 * np.diff(edges)[:, None]
    nodes = edges[:-1, None] + half * (x + 1.0)
    return float(np.clip(np.sum(half * w * d.pdf(nodes)), 0.0, 1.0))


@dataclass
class FlowDensity:
    """Distribution of the flow ``q = f(ρ̂)``.

    ``preimages`` has one row per flow node with the rising and the falling branch
    density (``NaN`` where the falling branch has no preimage).
    """

    q_nodes: np.ndarray
    q_weights: np.ndarray
    p_q: np.ndarray
    preimages: np.ndarray
    raw_mass: float

    @property
    def mass(self) -> float:
        """Quadrature mass after renormalisation."""
        return float(np.sum(self.q_weights * self.p_q))

    def cdf(self, q: numpy.typing.ArrayLike) -> np.ndarray:
        """Cumulative distribution of the flow by node-wise accumulation."""
        steps = self.q_weights * self.p_q
        table = np.concatenate([[0.0], np.cumsum(steps)])
        edges = np.concatenate([[self.q_nodes[0] - 0.5 * self.q_weights[0]], self.q_nodes])
        return np.interp(np.asarray(q, dtype=float), edges, table / table[-1])


def _check_unimodal(flux: stochastic_lwr.FluxFunction, rho_c: float, probes: int = 1001) -> None:
    rho = np.linspace(0.0, flux.rho_max, probes)
    slope = flux.prime(rho)
    rising = rho < rho_c * (1 - 1e-9)
    falling = rho > rho_c * (1 + 1e-9)
    if np.any(slope[rising] <= 0) or np.any(slope[falling] >= 0):
        raise UnsupportedFluxError(f"Flux of kind {flux.kind} is not unimodal; the pushforward needs two branches.")


def flow_pushforward(
    d: RecoveredDensity, flux: stochastic_lwr.FluxFunction, n_q_flow: int = 200
) -> FlowDensity:
    """Pushforward of ``d`` through the flux: the stochastic fundamental diagram.

    Flow nodes are the images of Gauss–Legendre nodes on the rising branch; the
    falling-branch preimage of each node is found by bracketing. A neighbourhood
    of the capacity point where ``f' = 0`` is excluded and the result is
    renormalised.

    Raises:
        UnsupportedFluxError: If the flux has more than one maximum.
    """
    try:
        rho_c, _q_max = flux.capacity
    except DomainError as exc:
        raise UnsupportedFluxError(str(exc)) from exc
    _check_unimodal(flux, rho_c)
    gap = CAPACITY_GAP * flux.rho_max

    rho_up, w_up = gauss_legendre(n_q_flow, 0.0, rho_c - gap)
    q = flux.value(rho_up)
    slope_up = flux.prime(rho_up)

    lo_fall = rho_c + gap
    q_fall_max = float(flux.value(lo_fall))
    q_fall_min = float(flux.value(flux.rho_max))
    rho_down = np.full(n_q_flow, np.nan)
    for j, qj in enumerate(q):
        if q_fall_min <= qj <= q_fall_max:
            rho_down[j] = brentq(lambda r, qj=qj: float(flux.value(r)) - qj, lo_fall, flux.rho_max, xtol=1e-14)
    has_fall = np.isfinite(rho_down)

    p_q = d.pdf(rho_up) / slope_up
    p_q[has_fall] += d.pdf(rho_down[has_fall]) / np.abs(flux.prime(rho_down[has_fall]))
    q_weights = w_up * slope_up
    raw_mass = float(np.sum(q_weights * p_q))
    if raw_mass <= 0:
        raise NumericalError(f"Pushforward carries no mass (raw mass {raw_mass!r}).")
    excised = 1.0 - raw_mass
    logger.log(
        logging.WARNING if abs(excised) > EXCISED_MASS_WARNING else logging.DEBUG,
        "capacity neighbourhood of width %.3g excised from the flow density; mass %.3e renormalised",
        2 * gap,
        excised,
    )
    return FlowDensity(q, q_weights, p_q / raw_mass, np.column_stack([rho_up, rho_down]), raw_mass)


def flow_expectation(
    d: RecoveredDensity, g: Callable[[np.ndarray], np.ndarray], flux: stochastic_lwr.FluxFunction
) -> float:
    """``E[g(f(ρ̂))]`` by quadrature over the density nodes."""
    return float(np.sum(d.quad_weights * np.asarray(g(flux.value(d.quad_nodes)), dtype=float) * d.density))


def flow_summary(flow: FlowDensity) -> tuple[float, float]:
    """Mean and standard deviation of the flow."""
    weights = flow.q_weights * flow.p_q
    mean = float(np.sum(weights * flow.q_nodes))
    var = float(np.sum(weights * (flow.q_nodes - mean) ** 2))
    return mean, math.sqrt(max(var, 0.0))
