"""Finite-volume solver for the one-point Fokker-Planck equation.

Solves ``∂ₜp = -∂(b p) + ½ ∂²(Σ² p)`` on ``[0, ρ_max]`` in flux form with zero
probability flux through both ends. The drift ``b`` is supplied by a
:py:class:`Closure`.
"""

from __future__ import annotations

import abc
import enum
import logging
import math
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from stochastic_lwr import _io
from stochastic_lwr._errors import ConfigurationError, DomainError, SolverIntegrityError

if TYPE_CHECKING:
    import h5py
    import numpy.typing

    import stochastic_lwr

logger = logging.getLogger(__name__)

PARABOLIC_LIMIT = 0.4
ADVECTIVE_LIMIT = 0.9
MASS_TOL = 1e-10
RENORMALISATION_TOL = 1e-9
SCORE_FLOOR = 1e-12


@dataclass(frozen=True)
class DensityMesh:
    """Uniform cell-centred mesh on ``[0, rho_max]``."""

    n_cells: int
    rho_max: float

    def __post_init__(self):
        if self.n_cells < 3:
            raise ConfigurationError(f"Density mesh needs at least 3 cells, got {self.n_cells}.")

    @property
    def h(self) -> float:
        """Cell width."""
        return self.rho_max / self.n_cells

    @property
    def cell_edges(self) -> np.ndarray:
        """``n_cells + 1`` edges from 0 to ``rho_max``."""
        return np.linspace(0.0, self.rho_max, self.n_cells + 1)

    @property
    def cell_centers(self) -> np.ndarray:
        """Cell midpoints."""
        return (np.arange(self.n_cells) + 0.5) * self.h


class ClosureKind(enum.StrEnum):
    """Available conditional-drift closures."""

    ORACLE_TABULATED = "oracle"
    MEAN_FIELD = "meanfield"
    LEARNED = "learned"
    ZERO = "zero"


class Closure(abc.ABC):
    """Conditional-drift model ``b(ρ̂, x, t)``."""

    kind: ClosureKind

    @abc.abstractmethod
    def __call__(self, rho_hat: numpy.typing.ArrayLike, x: float, t: float) -> np.ndarray:
        """Drift at densities ``rho_hat`` for position ``x`` and time ``t``."""

    def max_abs(self, mesh: DensityMesh, x: float, t_span: tuple[float, float], n_times: int = 33) -> float:
        """Largest ``|b|`` over the mesh edges on ``n_times`` sampled times."""
        edges = mesh.cell_edges
        return max(float(np.max(np.abs(self(edges, x, t)))) for t in np.linspace(*t_span, n_times))


class ZeroClosure(Closure):
    """``b ≡ 0``."""

    kind = ClosureKind.ZERO

    def __call__(self, rho_hat, x, t):
        return np.zeros_like(np.asarray(rho_hat, dtype=float))

    def max_abs(self, mesh, x, t_span, n_times=33):
        return 0.0


class OracleTabulatedClosure(Closure):
    """Closure tabulated from binned ensemble estimates at stored times.

    Empty bins are filled by linear interpolation from occupied neighbours and
    the number of filled bins is logged. Between estimate times the drift is
    interpolated linearly; outside it is held constant.

    Args:
        oracles: Oracle estimates at one position, ordered by time.
    """

    kind = ClosureKind.ORACLE_TABULATED

    def __init__(self, oracles: list[stochastic_lwr.OracleClosure]):
        if not oracles:
            raise ValueError("At least one oracle estimate is required.")
        self.oracles = list(oracles)
        self.times = np.array([o.t for o in oracles])
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("Oracle estimates must be ordered by strictly increasing time.")
        self.x = oracles[0].x
        self.bin_centers = oracles[0].bin_centers
        self.table = np.stack([o.filled() for o in oracles])
        gaps = sum(int(np.sum(~o.occupied)) for o in oracles)
        if gaps:
            logger.warning(
                "oracle closure at x=%.6g: %d of %d bins without samples were interpolated",
                self.x,
                gaps,
                self.table.size,
            )

    def __call__(self, rho_hat, x, t):
        if len(self.times) == 1:
            row = self.table[0]
        else:
            j = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
            w = float(np.clip((t - self.times[j]) / (self.times[j + 1] - self.times[j]), 0.0, 1.0))
            row = (1.0 - w) * self.table[j] + w * self.table[j + 1]
        return np.interp(rho_hat, self.bin_centers, row)

    def max_abs(self, mesh, x, t_span, n_times=33):
        return float(np.max(np.abs(self.table)))


class MeanFieldClosure(Closure):
    """Mean-field closure ``b = -f'(ρ̂) ∂ₓρ̄(x, t)``.

    Args:
        flux: Fundamental diagram.
        x_grid: Positions of the mean field samples.
        t_grid: Times of the mean field samples.
        rho_bar: Mean density, shape ``(len(t_grid), len(x_grid))``.
        periodic: Use periodic differences for ``∂ₓρ̄``.
    """

    kind = ClosureKind.MEAN_FIELD

    def __init__(
        self,
        flux: stochastic_lwr.FluxFunction,
        x_grid: np.ndarray,
        t_grid: np.ndarray,
        rho_bar: np.ndarray,
        periodic: bool = True,
    ):
        self.flux = flux
        self.x_grid = np.asarray(x_grid, dtype=float)
        self.t_grid = np.asarray(t_grid, dtype=float)
        rho_bar = np.asarray(rho_bar, dtype=float)
        dx = self.x_grid[1] - self.x_grid[0]
        if periodic:
            self.gradient = (np.roll(rho_bar, -1, axis=1) - np.roll(rho_bar, 1, axis=1)) / (2.0 * dx)
        else:
            self.gradient = np.gradient(rho_bar, dx, axis=1)

    @classmethod
    def from_deterministic(
        cls, model: stochastic_lwr.TrafficModel, grid: stochastic_lwr.SpaceTimeGrid
    ) -> MeanFieldClosure:
        """Mean field given by the noise-free LWR solution on ``grid``."""
        from stochastic_lwr._simulation import BoundaryKind, deterministic_lwr

        rho = deterministic_lwr(model, grid)
        return cls(model.flux, grid.x, grid.stored_times, rho, grid.boundary is BoundaryKind.PERIODIC)

    @classmethod
    def from_ensemble(cls, ens: stochastic_lwr.Ensemble) -> MeanFieldClosure:
        """Mean field given by the ensemble average."""
        from stochastic_lwr._simulation import BoundaryKind

        return cls(
            ens.model.flux,
            ens.grid.x,
            ens.stored_times,
            ens.data.mean(axis=0),
            ens.grid.boundary is BoundaryKind.PERIODIC,
        )

    def _column(self, x: float) -> np.ndarray:
        # linear in x, clamped to the end samples like np.interp
        i = int(np.clip(np.searchsorted(self.x_grid, x, side="right") - 1, 0, self.x_grid.size - 2))
        w = float(np.clip((x - self.x_grid[i]) / (self.x_grid[i + 1] - self.x_grid[i]), 0.0, 1.0))
        return (1.0 - w) * self.gradient[:, i] + w * self.gradient[:, i + 1]

    def gradient_at(self, x: float, t: float) -> float:
        """Interpolated ``∂ₓρ̄(x, t)``."""
        return float(np.interp(t, self.t_grid, self._column(x)))

    def __call__(self, rho_hat, x, t):
        rho_hat = np.clip(np.asarray(rho_hat, dtype=float), 0.0, self.flux.rho_max)
        return -self.flux._prime(rho_hat) * self.gradient_at(x, t)

    def max_abs(self, mesh, x, t_span, n_times=33):
        edges = mesh.cell_edges
        speed = float(np.max(np.abs(self.flux._prime(edges))))
        return speed * float(np.max(np.abs(self._column(x))))


@dataclass
class DensityGrid:
    """Discrete one-point law ``p(ρ̂; x, t)`` on a density mesh.

    ``p`` has shape ``(len(times), n_cells)`` and holds cell-average densities.
    ``dt_fpe`` is the solver step that produced the grid, ``NaN`` when unknown.
    """

    mesh: DensityMesh
    x: float
    times: np.ndarray
    p: np.ndarray = field(repr=False)
    dt_fpe: float = math.nan

    @property
    def time_step(self) -> float:
        """Solver step, or the smallest stored-time spacing for grids of unknown origin."""
        if not math.isnan(self.dt_fpe):
            return self.dt_fpe
        if len(self.times) < 2:
            return math.nan
        return float(np.min(np.diff(self.times)))

    def start_index(self, n_steps: int = 10) -> int:
        """Stored level closest to ``n_steps`` solver steps after the first time."""
        return self.time_index(self.times[0] + n_steps * self.time_step)

    def mass(self, t_index: int = -1) -> float:
        """``Σ p h`` at one stored time."""
        return float(np.sum(self.p[t_index]) * self.mesh.h)

    def moments(self, t_index: int = -1) -> tuple[float, float]:
        """Mean and standard deviation by grid sums at one stored time."""
        centers = self.mesh.cell_centers
        weights = self.p[t_index] * self.mesh.h
        mean = float(np.sum(weights * centers))
        # cell-internal variance of a piecewise-constant density adds h²/12
        var = float(np.sum(weights * (centers - mean) ** 2)) + self.mesh.h**2 / 12.0
        return mean, math.sqrt(var)

    def cdf(self, t_index: int = -1) -> np.ndarray:
        """Cumulative distribution at the cell edges."""
        return np.concatenate([[0.0], np.cumsum(self.p[t_index]) * self.mesh.h])

    def time_index(self, t: float) -> int:
        """Index of the stored time closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def to_dataframe(self) -> pd.DataFrame:
        """Long table with columns ``t``, ``rho_hat``, ``p``."""
        n_t, n_c = self.p.shape
        return pd.DataFrame(
            {
                "t": np.repeat(self.times, n_c),
                "rho_hat": np.tile(self.mesh.cell_centers, n_t),
                "p": self.p.ravel(),
            }
        )

    def to_csv(self, filename: str | os.PathLike) -> None:
        """Write the grid as slwr CSV; position, mesh and solver step go into the description."""
        _io.write_csv(
            filename,
            self.to_dataframe(),
            description=(
                f"x: {self.x!r}\nrho_max: {self.mesh.rho_max!r}\nn_cells: {self.mesh.n_cells}\ndt_fpe: {self.dt_fpe!r}"
            ),
        )

    @classmethod
    def from_csv(cls, filename: str | os.PathLike) -> DensityGrid:
        """Read a grid written by :py:meth:`to_csv`.

        Raises:
            RuntimeError: If the table is not a complete ``t × rho_hat`` grid.
        """
        dataframe, _units, description = _io.read_csv(filename)
        meta = dict(line.split(": ", 1) for line in description.splitlines() if ": " in line)
        times = np.unique(dataframe["t"].to_numpy())
        n_cells = int(meta["n_cells"]) if "n_cells" in meta else dataframe["rho_hat"].nunique()
        if len(dataframe) != times.size * n_cells:
            raise RuntimeError(f"File {filename} does not hold a complete grid of {times.size} × {n_cells} values.")
        p = dataframe.sort_values(["t", "rho_hat"], kind="stable")["p"].to_numpy().reshape(times.size, n_cells)
        if "rho_max" in meta:
            rho_max = float(meta["rho_max"])
        else:
            centers = np.unique(dataframe["rho_hat"].to_numpy())
            rho_max = float(centers[-1] + 0.5 * (centers[1] - centers[0]))
        return cls(
            DensityMesh(n_cells, rho_max), float(meta.get("x", "nan")), times, p, float(meta.get("dt_fpe", "nan"))
        )

    def to_hdf5(self, base: h5py.File | h5py.Group | str | os.PathLike, name: str = "density") -> h5py.Group | None:
        """Archive the grid in an HDF5 group."""
        return _io.to_hdf5(
            base,
            name,
            {
                "p": (self.p, "", "probability density per time and cell"),
                "t": (self.times, "", "stored times"),
                "rho_hat": (self.mesh.cell_centers, "", "cell centres"),
            },
            {"x": self.x, "rho_max": self.mesh.rho_max, "dt_fpe": self.dt_fpe},
        )

    @classmethod
    def from_hdf5(cls, base: h5py.File | h5py.Group | str | os.PathLike, name: str = "density") -> DensityGrid:
        """Read a grid written by :py:meth:`to_hdf5`."""
        arrays, attrs = _io.from_hdf5(base, name)
        p = np.asarray(arrays["p"])
        return cls(
            DensityMesh(p.shape[1], float(attrs["rho_max"])),
            float(attrs["x"]),
            np.asarray(arrays["t"]),
            p,
            float(attrs.get("dt_fpe", math.nan)),
        )


def mollified_delta(mesh: DensityMesh, rho0: float, eps_width: float | None = None) -> np.ndarray:
    """Gaussian bump of width ``eps_width`` at ``rho0``, truncated and normalised.

    Args:
        mesh: Density mesh.
        rho0: Centre, strictly inside ``(0, rho_max)``.
        eps_width: Standard deviation, at least ``2h``; defaults to ``4h``.

    Raises:
        ConfigurationError: If the bump is under-resolved.
        DomainError: If ``rho0`` is not interior.
    """
    eps_width = 4.0 * mesh.h if eps_width is None else eps_width
    if eps_width < 2.0 * mesh.h * (1 - 1e-12):
        raise ConfigurationError(
            f"Mollifier width {eps_width} is under-resolved; it must be at least 2h = {2 * mesh.h}."
        )
    if not 0.0 < rho0 < mesh.rho_max:
        raise DomainError(f"Initial density {rho0!r} is outside (0, {mesh.rho_max}).")
    p = np.exp(-0.5 * ((mesh.cell_centers - rho0) / eps_width) ** 2)
    return p / (np.sum(p) * mesh.h)


def _edge_flux(
    p: np.ndarray, drift_edges: np.ndarray, sigma2_cells: np.ndarray, h: float, out: np.ndarray | None = None
) -> np.ndarray:
    """Probability flux at all edges; ``drift_edges`` are the interior-edge drifts."""
    flux = np.zeros(p.size + 1) if out is None else out
    diffusive = sigma2_cells * p
    flux[1:-1] = -0.5 * (diffusive[1:] - diffusive[:-1]) / h
    flux[1:-1] += np.where(drift_edges > 0.0, drift_edges * p[:-1], drift_edges * p[1:])
    flux[0] = flux[-1] = 0.0
    return flux


def probability_flux(
    p: numpy.typing.ArrayLike,
    closure: Closure,
    model: stochastic_lwr.TrafficModel,
    mesh: DensityMesh,
    x: float,
    t: float,
) -> np.ndarray:
    """Probability flux ``J = b p - ½ ∂(Σ² p)`` at the ``n_cells + 1`` edges.

    The drift term is upwinded by the sign of ``b``; the diffusive term is a
    central difference of ``Σ² p`` between neighbouring cells. Both outer fluxes
    are exactly zero.

    Raises:
        ValueError: If ``p`` has the wrong length or negative entries.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (mesh.n_cells,):
        raise ValueError(f"Expected {mesh.n_cells} cell values, got shape {p.shape}.")
    if np.any(p < 0):
        raise ValueError(f"Probability densities must be non-negative, found {float(p.min())!r}.")
    sigma2 = model.noise.sigma_squared(mesh.cell_centers, x)
    drift = closure(mesh.cell_edges[1:-1], x, t)
    return _edge_flux(p, drift, sigma2, mesh.h)


def stability_bound(
    model: stochastic_lwr.TrafficModel, closure: Closure, mesh: DensityMesh, x: float, t_span: tuple[float, float]
) -> float:
    """Largest admissible explicit step: ``min(0.4 h²/max Σ², 0.9 h/max |b|)``."""
    sigma2_max = float(np.max(model.noise.sigma_squared(mesh.cell_centers, x)))
    b_max = closure.max_abs(mesh, x, t_span)
    bounds = [math.inf]
    if sigma2_max > 0:
        bounds.append(PARABOLIC_LIMIT * mesh.h**2 / sigma2_max)
    if b_max > 0:
        bounds.append(ADVECTIVE_LIMIT * mesh.h / b_max)
    return min(bounds)


def solve_fpe(
    model: stochastic_lwr.TrafficModel,
    closure: Closure,
    x: float,
    mesh: DensityMesh,
    t_span: tuple[float, float],
    dt_fpe: float,
    init: numpy.typing.ArrayLike,
    store_every: int = 1,
) -> DensityGrid:
    """Evolve the one-point law with explicit conservative finite volumes.

    Args:
        model: Traffic model providing ``Σ²``.
        closure: Drift closure.
        x: Position of the one-point law.
        mesh: Density mesh.
        t_span: Start and end time.
        dt_fpe: Requested time step; shortened so the span is hit exactly.
        init: Initial cell densities with unit mass.
        store_every: Stride between stored steps; the final time is always stored.

    Returns:
        The density grid at the stored times.

    Raises:
        ConfigurationError: If ``dt_fpe`` violates a stability bound or ``init`` is invalid.
        SolverIntegrityError: If the discrete mass drifts by more than ``1e-10``.
    """
    t0, t1 = map(float, t_span)
    if t1 < t0:
        raise ConfigurationError(f"t_span end {t1} precedes its start {t0}.")
    p = np.array(init, dtype=float)
    if p.shape != (mesh.n_cells,) or np.any(p < 0) or abs(np.sum(p) * mesh.h - 1.0) > MASS_TOL:
        raise ConfigurationError("Initial law must be a non-negative cell vector with unit mass.")

    h = mesh.h
    sigma2 = model.noise.sigma_squared(mesh.cell_centers, x)
    sigma2_max = float(np.max(sigma2))
    if sigma2_max > 0 and dt_fpe > PARABOLIC_LIMIT * h**2 / sigma2_max * (1 + 1e-12):
        raise ConfigurationError(
            f"dt_fpe={dt_fpe:.6g} exceeds the parabolic stability bound 0.4*h^2/max(Sigma^2)="
            f"{PARABOLIC_LIMIT * h**2 / sigma2_max:.6g}."
        )
    b_max = closure.max_abs(mesh, x, (t0, t1))
    if b_max > 0 and dt_fpe > ADVECTIVE_LIMIT * h / b_max * (1 + 1e-12):
        raise ConfigurationError(
            f"dt_fpe={dt_fpe:.6g} exceeds the advective stability bound 0.9*h/max|b|={ADVECTIVE_LIMIT * h / b_max:.6g}."
        )

    n_steps = max(math.ceil((t1 - t0) / dt_fpe - 1e-9), 0)
    dt = (t1 - t0) / n_steps if n_steps else 0.0
    # positivity of the combined update needs dt (max|b|/h + max Σ²/h²) <= 1
    combined = dt * (b_max / h + sigma2_max / h**2)
    n_sub = max(1, math.ceil(combined / 0.95)) if combined > 1.0 else 1
    if n_sub > 1:
        logger.debug("splitting each FPE step into %d substeps to keep the update monotone", n_sub)
    sub_dt = dt / n_sub

    is_zero = closure.kind is ClosureKind.ZERO
    drift = np.zeros(mesh.n_cells - 1)
    inner_edges = mesh.cell_edges[1:-1]
    flux = np.zeros(mesh.n_cells + 1)
    stored = [p.copy()]
    times = [t0]
    renormalised = 0.0
    for n in range(n_steps):
        for m in range(n_sub):
            t = t0 + n * dt + m * sub_dt
            if not is_zero:
                drift = closure(inner_edges, x, t)
            _edge_flux(p, drift, sigma2, h, out=flux)
            p -= sub_dt / h * (flux[1:] - flux[:-1])
        if np.any(p < 0.0):
            if float(p.min()) < -1e-14:
                logger.debug("step %d: negative density %.3e clipped", n + 1, float(p.min()))
            before = np.sum(p) * h
            np.maximum(p, 0.0, out=p)
            after = np.sum(p) * h
            p /= after
            renormalised += abs(after - before)
        mass = np.sum(p) * h
        if abs(mass - 1.0) > MASS_TOL:
            raise SolverIntegrityError(f"Discrete mass drifted to {mass!r} at step {n + 1}.")
        if renormalised > RENORMALISATION_TOL:
            raise SolverIntegrityError(f"Cumulative renormalisation {renormalised:.3e} exceeds {RENORMALISATION_TOL}.")
        if (n + 1) % store_every == 0 or n + 1 == n_steps:
            stored.append(p.copy())
            times.append(t0 + (n + 1) * dt)
    if renormalised:
        logger.debug("cumulative renormalisation %.3e over %d steps", renormalised, n_steps)
    logger.info("solved FPE at x=%.6g over [%.6g, %.6g] with %d steps", x, t0, t1, n_steps)
    return DensityGrid(mesh, float(x), np.array(times), np.array(stored), dt if n_steps else float(dt_fpe))


@dataclass
class CellScore:
    """Finite-difference score on a density mesh; ``valid`` flags unmasked cells."""

    values: np.ndarray
    valid: np.ndarray
    centers: np.ndarray


def numerical_score(pgrid: DensityGrid, t_index: int) -> CellScore:
    """Central difference of ``log p`` at one stored time.

    Cells with ``p < 1e-12·max p`` are masked; masked cells carry ``NaN``.
    The first and last unmasked cell use one-sided differences.

    Raises:
        ValueError: If fewer than three cells remain unmasked.
    """
    p = pgrid.p[t_index]
    floor = SCORE_FLOOR * float(np.max(p))
    valid = p >= floor
    if np.count_nonzero(valid) < 3:
        raise ValueError(f"Only {np.count_nonzero(valid)} cells lie above the density floor; at least 3 are needed.")
    indices = np.flatnonzero(valid)
    lo, hi = indices[0], indices[-1] + 1
    log_p = np.log(np.maximum(p[lo:hi], floor))
    values = np.full(p.size, np.nan)
    values[lo:hi] = np.gradient(log_p, pgrid.mesh.h)
    values[~valid] = np.nan
    return CellScore(values, valid, pgrid.mesh.cell_centers)


def cosine_series_solution(
    mesh: DensityMesh, init: numpy.typing.ArrayLike, sigma2: float, t: float, n_terms: int | None = None
) -> np.ndarray:
    """Cell averages of the exact pure-diffusion solution with zero-flux ends.

    The initial law is the piecewise-constant ``init``; its cosine coefficients
    are computed exactly and damped by ``exp(-(Σ²/2)(nπ/ρ_max)² t)``.
    """
    init = np.asarray(init, dtype=float)
    edges = mesh.cell_edges
    r = mesh.rho_max
    n_terms = 4 * mesh.n_cells if n_terms is None else n_terms
    n = np.arange(1, n_terms + 1)[:, None]
    k = n * np.pi / r
    # ∫ over each cell of cos(kρ)
    cell_integrals = (np.sin(k * edges[1:]) - np.sin(k * edges[:-1])) / k
    coefficients = 2.0 / r * (cell_integrals @ init)
    damping = np.exp(-0.5 * sigma2 * k[:, 0] ** 2 * t)
    averages = cell_integrals / mesh.h
    mean = np.sum(init) * mesh.h / r
    return mean + (coefficients * damping) @ averages
