"""Probability-flow velocity and deterministic particle transport.

The probability-flow velocity

    v = b - ½ ∂Σ² - ½ Σ² ∂ log p

moves particles in density space so that their empirical law follows the
one-point Fokker-Planck solution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Protocol

import numpy as np
import pandas as pd

from stochastic_lwr._errors import TransportError
from stochastic_lwr._fpe import numerical_score

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    import numpy.typing

    import stochastic_lwr

logger = logging.getLogger(__name__)


class ScoreSource(Protocol):
    """Anything that evaluates ``∂ log p(ρ̂; x, t)`` at one position."""

    x: float
    rho_max: float
    t_span: tuple[float, float]

    def __call__(self, rho_hat: np.ndarray, t: float) -> np.ndarray: ...

    def band(self, t: float) -> tuple[float, float]: ...


class FunctionScore:
    """Score given by a function ``func(rho_hat, t)``, e.g. an analytic score.

    Args:
        func: Vectorised score function.
        rho_max: Jam density.
        t_span: Time range the function may be queried on.
        x: Position the score belongs to.
    """

    def __init__(
        self,
        func: Callable[[np.ndarray, float], np.ndarray],
        rho_max: float,
        t_span: tuple[float, float] = (0.0, math.inf),
        x: float = math.nan,
    ):
        self.func = func
        self.rho_max = float(rho_max)
        self.t_span = (float(t_span[0]), float(t_span[1]))
        self.x = x

    def __call__(self, rho_hat, t):
        return np.asarray(self.func(np.asarray(rho_hat, dtype=float), t), dtype=float)

    def band(self, t):
        return 0.0, self.rho_max


class TabulatedScore:
    """Finite-difference score of a :py:class:`~stochastic_lwr.DensityGrid`.

    The score is interpolated linearly in ``ρ̂`` over the unmasked cells and
    linearly in ``t`` between stored times. Outside the unmasked band the
    boundary value is extended. ``extrapolations`` counts the distinct query
    indices that fell outside the band since the last
    :py:meth:`reset_extrapolations`; particle transport resets it on entry.
    """

    def __init__(self, pgrid: stochastic_lwr.DensityGrid):
        self.pgrid = pgrid
        self.x = pgrid.x
        self.rho_max = pgrid.mesh.rho_max
        self.times = np.asarray(pgrid.times, dtype=float)
        self.t_span = (float(self.times[0]), float(self.times[-1]))
        self._scores = [numerical_score(pgrid, j) for j in range(len(self.times))]
        self._bands = np.array(
            [(s.centers[s.valid][0], s.centers[s.valid][-1]) for s in self._scores], dtype=float
        )
        self._outside = np.zeros(0, dtype=bool)

    @property
    def extrapolations(self) -> int:
        return int(np.count_nonzero(self._outside))

    def reset_extrapolations(self) -> None:
        self._outside = np.zeros(0, dtype=bool)

    def _record(self, outside: np.ndarray) -> None:
        outside = np.ravel(outside)
        if outside.size > self._outside.size:
            self._outside = np.concatenate([self._outside, np.zeros(outside.size - self._outside.size, dtype=bool)])
        self._outside[: outside.size] |= outside

    def _at(self, j: int, rho_hat: np.ndarray) -> np.ndarray:
        score = self._scores[j]
        centers = score.centers[score.valid]
        self._record((rho_hat < centers[0]) | (rho_hat > centers[-1]))
        return np.interp(rho_hat, centers, score.values[score.valid])

    def _bracket(self, t: float) -> tuple[int, float]:
        if not self.t_span[0] - 1e-12 <= t <= self.t_span[1] + 1e-12:
            raise ValueError(f"Time {t!r} is outside the score coverage [{self.t_span[0]}, {self.t_span[1]}].")
        if len(self.times) == 1:
            return 0, 0.0
        j = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        w = float(np.clip((t - self.times[j]) / (self.times[j + 1] - self.times[j]), 0.0, 1.0))
        return j, w

    def __call__(self, rho_hat, t):
        rho_hat = np.asarray(rho_hat, dtype=float)
        j, w = self._bracket(t)
        if w == 0.0:
            return self._at(j, rho_hat)
        return (1.0 - w) * self._at(j, rho_hat) + w * self._at(j + 1, rho_hat)

    def band(self, t):
        j, w = self._bracket(t)
        if w == 0.0:
            return tuple(self._bands[j])
        lo, hi = (1.0 - w) * self._bands[j] + w * self._bands[j + 1]
        return float(lo), float(hi)


class VelocityField:
    """Probability-flow velocity at one position.

    The three terms are the closure drift, the Itô correction ``-½∂Σ²`` and the
    score term ``-½Σ²s``.
    """

    def __init__(
        self,
        closure: stochastic_lwr.Closure,
        model: stochastic_lwr.TrafficModel,
        score_source: ScoreSource,
        x: float,
    ):
        self.closure = closure
        self.model = model
        self.score_source = score_source
        self.x = float(x)

    @property
    def rho_max(self) -> float:
        """Jam density."""
        return self.model.rho_max

    def components(self, rho_hat: numpy.typing.ArrayLike, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advection, Itô and score terms at ``(rho_hat, t)``."""
        rho_hat = np.asarray(rho_hat, dtype=float)
        clipped = np.clip(rho_hat, 0.0, self.rho_max)
        sigma2, dsigma2 = self.model.noise.derivatives(clipped, self.x, order=1)
        advection = np.asarray(self.closure(clipped, self.x, t), dtype=float)
        ito = -0.5 * dsigma2
        score = -0.5 * sigma2 * self.score_source(clipped, t)
        return advection, ito, score

    def __call__(self, rho_hat: numpy.typing.ArrayLike, t: float) -> np.ndarray:
        advection, ito, score = self.components(rho_hat, t)
        return advection + ito + score

    def band(self, t: float) -> tuple[float, float]:
        """Unmasked interior band of the score source at ``t``."""
        return self.score_source.band(t)


def assemble_velocity(
    closure: stochastic_lwr.Closure,
    model: stochastic_lwr.TrafficModel,
    score_source: ScoreSource,
    x: float,
) -> VelocityField:
    """Build the probability-flow velocity from a closure, the model noise and a score.

    Raises:
        ValueError: If the score source belongs to a different position.
    """
    source_x = getattr(score_source, "x", math.nan)
    if not math.isnan(source_x) and not math.isclose(source_x, x, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(f"Score source is defined at x={source_x}, velocity requested at x={x}.")
    return VelocityField(closure, model, score_source, x)


def velocity_decomposition(field: VelocityField, rho_hat: numpy.typing.ArrayLike, t: float) -> pd.DataFrame:
    """Table of the velocity terms with columns ``rho_hat, advection, ito, score, total``."""
    rho_hat = np.atleast_1d(np.asarray(rho_hat, dtype=float))
    advection, ito, score = field.components(rho_hat, t)
    return pd.DataFrame(
        {
            "rho_hat": rho_hat,
            "advection": advection,
            "ito": ito,
            "score": score,
            "total": advection + ito + score,
        }
    )


@dataclass
class ParticleSet:
    """Equally weighted particles in density space at time ``t_current``."""

    positions: np.ndarray
    t_current: float

    @property
    def weights(self) -> np.ndarray:
        """Uniform weights summing to one."""
        return np.full(self.positions.size, 1.0 / self.positions.size)


def sample_particles(pgrid: stochastic_lwr.DensityGrid, t_index: int, n: int, seed: int) -> ParticleSet:
    """Draw ``n`` particles from the cell-wise constant law by CDF inversion."""
    rng = np.random.default_rng(seed)
    cdf = pgrid.cdf(t_index)
    cdf /= cdf[-1]
    positions = np.interp(rng.random(n), cdf, pgrid.mesh.cell_edges)
    return ParticleSet(positions, float(pgrid.times[t_index]))


def _first_failing(field: VelocityField, positions: np.ndarray, t: float) -> int:
    for i in range(positions.size):
        try:
            field(positions[i : i + 1], t)
        except (ValueError, FloatingPointError):
            return i
    return -1


def _velocity(field: VelocityField, positions: np.ndarray, t: float) -> np.ndarray:
    try:
        v = field(positions, t)
    except (ValueError, FloatingPointError) as exc:
        raise TransportError(_first_failing(field, positions, t), t, str(exc)) from exc
    bad = ~np.isfinite(v)
    if np.any(bad):
        raise TransportError(int(np.flatnonzero(bad)[0]), t)
    return v


def transport_particles(
    field: VelocityField, particles: ParticleSet, t_target: float, dt_ode: float
) -> ParticleSet:
    """Move particles along the probability flow with classical RK4.

    The step is shortened so ``t_target`` is hit exactly. Integration backwards in
    time is allowed. After each step positions are clamped to the unmasked band
    of the score source.

    Raises:
        TransportError: If the velocity is non-finite or cannot be evaluated.
    """
    span = t_target - particles.t_current
    n_steps = max(math.ceil(abs(span) / dt_ode - 1e-9), 0)
    positions = np.array(particles.positions, dtype=float)
    if n_steps == 0:
        return ParticleSet(positions, float(t_target))
    step = span / n_steps
    reset = getattr(field.score_source, "reset_extrapolations", None)
    if reset is not None:
        reset()
    t = particles.t_current
    for n in range(n_steps):
        t = particles.t_current + n * step
        k1 = _velocity(field, positions, t)
        k2 = _velocity(field, positions + 0.5 * step * k1, t + 0.5 * step)
        k3 = _velocity(field, positions + 0.5 * step * k2, t + 0.5 * step)
        k4 = _velocity(field, positions + step * k3, t + step)
        positions = positions + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        lo, hi = field.band(t + step)
        np.clip(positions, lo, hi, out=positions)
    extrapolations = getattr(field.score_source, "extrapolations", 0)
    if extrapolations:
        logger.warning(
            "score was extrapolated outside the unmasked band for %d of %d particles", extrapolations, positions.size
        )
    return ParticleSet(positions, float(t_target))


@dataclass
class BoundaryCheck:
    """Near-boundary velocities at one time."""

    t: float
    v_left: float
    v_right: float

    @property
    def passed(self) -> bool:
        """Inward-pointing at both ends."""
        return self.v_left >= 0.0 and self.v_right <= 0.0


@dataclass
class BoundaryReport:
    """Boundary-compatibility results per time stamp."""

    margin: float
    checks: list[BoundaryCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True if every time stamp passed."""
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        """Plain mapping suitable for YAML output."""
        return {
            "passed": self.passed,
            "margin": self.margin,
            "times": [
                {"t": c.t, "v_left": c.v_left, "v_right": c.v_right, "passed": c.passed} for c in self.checks
            ],
        }


def check_boundary_compatibility(field: VelocityField, times: Sequence[float], margin: float) -> BoundaryReport:
    """Check that the velocity points inwards at ``margin`` and ``rho_max - margin``."""
    report = BoundaryReport(float(margin))
    probes = np.array([margin, field.rho_max - margin])
    for t in times:
        v_left, v_right = field(probes, float(t))
        report.checks.append(BoundaryCheck(float(t), float(v_left), float(v_right)))
        if not report.checks[-1].passed:
            logger.debug("boundary compatibility fails at t=%.6g: v_left=%.3e v_right=%.3e", t, v_left, v_right)
    return report
