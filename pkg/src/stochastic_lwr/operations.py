r"""Distances between one-point laws.

Every law is reduced to its cumulative distribution function on a set of knots.
Grid densities, histograms and recovered densities have piecewise-linear CDFs,
samples and particles have step CDFs. Distances are evaluated exactly on the
union of both knot sets, where the difference of two such CDFs is linear on
every interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from stochastic_lwr._fpe import DensityGrid
from stochastic_lwr._inference import RecoveredDensity
from stochastic_lwr._pfode import ParticleSet
from stochastic_lwr._simulation import EmpiricalMarginal

if TYPE_CHECKING:
    import numpy.typing

    import stochastic_lwr


@dataclass(frozen=True)
class Distribution1D:
    """Cumulative distribution on sorted ``knots``.

    With ``step=False`` the CDF interpolates linearly between the knots; with
    ``step=True`` it is right-continuous and constant between them, jumping to
    ``values[i]`` at ``knots[i]``.
    """

    knots: np.ndarray
    values: np.ndarray
    step: bool = False

    def __post_init__(self):
        if self.knots.shape != self.values.shape or self.knots.ndim != 1 or self.knots.size == 0:
            raise ValueError("knots and values must be non-empty one-dimensional arrays of equal length.")
        if np.any(np.diff(self.knots) < 0):
            raise ValueError("knots must be sorted.")

    @classmethod
    def from_grid(cls, pgrid: stochastic_lwr.DensityGrid, t_index: int = -1) -> Distribution1D:
        """Piecewise-constant grid density at one stored time."""
        cdf = pgrid.cdf(t_index)
        return cls(pgrid.mesh.cell_edges.copy(), cdf / cdf[-1])

    @classmethod
    def from_histogram(cls, marginal: stochastic_lwr.EmpiricalMarginal) -> Distribution1D:
        """Histogram with mass spread uniformly inside each bin."""
        cdf = np.concatenate([[0.0], np.cumsum(marginal.mass)])
        return cls(marginal.bin_edges.copy(), cdf / cdf[-1])

    @classmethod
    def from_density(cls, d: stochastic_lwr.RecoveredDensity) -> Distribution1D:
        """Recovered density through its refined trapezoid CDF."""
        knots = np.concatenate([[0.0], d.quad_nodes, [d.rho_max]])
        return cls(knots, np.clip(d.cdf(knots), 0.0, 1.0))

    @classmethod
    def from_samples(
        cls, samples: numpy.typing.ArrayLike, weights: numpy.typing.ArrayLike | None = None
    ) -> Distribution1D:
        """Empirical distribution of (weighted) samples.

        Examples:
            >>> from stochastic_lwr.operations import Distribution1D
            >>> Distribution1D.from_samples([0.3, 0.1, 0.3]).values.tolist()
            [0.3333333333333333, 1.0]
        """
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            raise ValueError("Need at least one sample.")
        weights = np.full(samples.size, 1.0) if weights is None else np.asarray(weights, dtype=float).ravel()
        order = np.argsort(samples, kind="stable")
        knots, first = np.unique(samples[order], return_index=True)
        mass = np.add.reduceat(weights[order], first)
        cdf = np.cumsum(mass)
        return cls(knots, cdf / cdf[-1], step=True)

    def __call__(self, z: numpy.typing.ArrayLike) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if not self.step:
            return np.interp(z, self.knots, self.values, left=0.0, right=1.0)
        index = np.searchsorted(self.knots, z, side="right")
        return np.concatenate([[0.0], self.values])[index]

    def segments(self, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """CDF just right of each ``grid[i]`` and just left of ``grid[i + 1]``."""
        start = self(grid[:-1])
        end = self(grid[1:]) if not self.step else start
        return start, end


def as_distribution(obj, t_index: int = -1) -> Distribution1D:
    """Convert a law of the pipeline to a :py:class:`Distribution1D`.

    Accepts a :py:class:`Distribution1D`, a density grid (at ``t_index``), an
    empirical marginal, a recovered density, a particle set, or an array of
    samples.
    """
    if isinstance(obj, Distribution1D):
        return obj
    if isinstance(obj, DensityGrid):
        return Distribution1D.from_grid(obj, t_index)
    if isinstance(obj, EmpiricalMarginal):
        return Distribution1D.from_histogram(obj)
    if isinstance(obj, RecoveredDensity):
        return Distribution1D.from_density(obj)
    if isinstance(obj, ParticleSet):
        return Distribution1D.from_samples(obj.positions, obj.weights)
    return Distribution1D.from_samples(obj)


def _union(a: Distribution1D, b: Distribution1D) -> np.ndarray:
    return np.union1d(a.knots, b.knots)


def _integral_abs_linear(d0: np.ndarray, d1: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``∫|d|`` over intervals of width ``h`` on which ``d`` is linear from ``d0`` to ``d1``."""
    same_sign = d0 * d1 >= 0
    total = np.abs(d0) + np.abs(d1)
    with np.errstate(invalid="ignore", divide="ignore"):
        crossing = np.where(total > 0, 0.5 * h * (d0**2 + d1**2) / total, 0.0)
    return np.where(same_sign, 0.5 * h * total, crossing)


def wasserstein_1(a, b, t_index: int = -1) -> float:
    """Wasserstein-1 distance ``∫|F_a − F_b| dρ̂`` of two one-dimensional laws.

    ``t_index`` selects the time level of density-grid arguments.

    Examples:
        >>> from stochastic_lwr.operations import wasserstein_1
        >>> wasserstein_1([0.0], [0.25])
        0.25
    """
    fa, fb = as_distribution(a, t_index), as_distribution(b, t_index)
    grid = _union(fa, fb)
    if grid.size < 2:
        return 0.0
    a0, a1 = fa.segments(grid)
    b0, b1 = fb.segments(grid)
    return float(np.sum(_integral_abs_linear(a0 - b0, a1 - b1, np.diff(grid))))


def ks_distance(a, b, t_index: int = -1) -> float:
    """Kolmogorov–Smirnov distance ``sup |F_a − F_b|``.

    Examples:
        >>> from stochastic_lwr.operations import ks_distance
        >>> ks_distance([0.1, 0.2], [0.15])
        0.5
    """
    fa, fb = as_distribution(a, t_index), as_distribution(b, t_index)
    grid = _union(fa, fb)
    diffs = [np.abs(fa(grid) - fb(grid))]
    if grid.size > 1:
        a0, a1 = fa.segments(grid)
        b0, b1 = fb.segments(grid)
        diffs += [np.abs(a0 - b0), np.abs(a1 - b1)]
    return float(max(np.max(d) for d in diffs))


def total_variation(a, b, t_index: int = -1, n_cells: int = 1000) -> float:
    """Total-variation distance ``½ Σ |P_a(I) − P_b(I)|`` over a fine partition.

    The partition is the union of the knots of both laws refined by ``n_cells``
    equal cells over their common range. For densities this converges to
    ``½ ∫|p_a − p_b|`` as the partition is refined.
    """
    fa, fb = as_distribution(a, t_index), as_distribution(b, t_index)
    lo = min(fa.knots[0], fb.knots[0])
    hi = max(fa.knots[-1], fb.knots[-1])
    grid = np.union1d(_union(fa, fb), np.linspace(lo, hi, n_cells + 1))
    mass_a = np.diff(np.concatenate([[0.0], fa(grid)]))
    mass_b = np.diff(np.concatenate([[0.0], fb(grid)]))
    return float(0.5 * np.sum(np.abs(mass_a - mass_b)))


def wasserstein_standard_error(samples: numpy.typing.ArrayLike, rho_max: float) -> float:
    """Monte Carlo scale of the Wasserstein-1 error of an empirical law of ``samples``.

    Uses ``∫ sqrt(F (1 − F) / n) dρ̂`` over ``[0, rho_max]``, the integrated
    standard deviation of the empirical CDF.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    f = Distribution1D.from_samples(samples)
    grid = np.union1d(np.clip(f.knots, 0.0, rho_max), [0.0, rho_max])
    start, _end = f.segments(grid)
    return float(np.sum(np.sqrt(start * (1.0 - start) / samples.size) * np.diff(grid)))
