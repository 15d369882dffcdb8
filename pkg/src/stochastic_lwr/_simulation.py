"""Monte Carlo simulation of the stochastic LWR equation.

Space is discretised with a local Lax-Friedrichs (Rusanov) finite-volume flux,
time with Euler-Maruyama. Every realisation draws its Brownian increments from
its own counter-based random stream derived from the master seed and the
realisation index, so results do not depend on how realisations are split
between workers.
"""

from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from stochastic_lwr import _io
from stochastic_lwr._errors import ConfigurationError, SimulationDivergedError
from stochastic_lwr._model import validate_assumptions

if TYPE_CHECKING:
    import h5py

    import stochastic_lwr

logger = logging.getLogger(__name__)

CFL_LIMIT = 0.9
VISCOUS_LIMIT = 0.4


class BoundaryKind(enum.StrEnum):
    """Spatial boundary conditions."""

    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform space-time grid on ``[0, L] × [0, T]``.

    Cells are centred at ``(i + ½) dx``. Every ``store_every``-th time level is
    kept in an :py:class:`Ensemble`, the initial one included.

    Args:
        nx: Number of cells.
        nt: Number of time steps.
        length: Domain length ``L``.
        horizon: Time horizon ``T``.
        boundary: ``periodic`` or ``dirichlet``.
        rho_left: Fixed left state (Dirichlet only).
        rho_right: Fixed right state (Dirichlet only).
        store_every: Stride between stored time levels; must divide ``nt``.
    """

    nx: int
    nt: int
    length: float
    horizon: float
    boundary: BoundaryKind = BoundaryKind.PERIODIC
    rho_left: float | None = None
    rho_right: float | None = None
    store_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "boundary", BoundaryKind(self.boundary))
        if self.nx < 3 or self.nt < 1:
            raise ConfigurationError(f"Grid needs nx >= 3 and nt >= 1, got nx={self.nx}, nt={self.nt}.")
        if self.store_every < 1 or self.nt % self.store_every:
            raise ConfigurationError(f"store_every={self.store_every} must be positive and divide nt={self.nt}.")
        if self.boundary is BoundaryKind.DIRICHLET and (self.rho_left is None or self.rho_right is None):
            raise ConfigurationError("Dirichlet boundaries need rho_left and rho_right.")

    @property
    def dx(self) -> float:
        """Cell width."""
        return self.length / self.nx

    @property
    def dt(self) -> float:
        """Time step."""
        return self.horizon / self.nt

    @property
    def x(self) -> np.ndarray:
        """Cell centres."""
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def stored_steps(self) -> np.ndarray:
        """Step indices of the stored time levels."""
        return np.arange(0, self.nt + 1, self.store_every)

    @property
    def stored_times(self) -> np.ndarray:
        """Times of the stored levels."""
        return self.stored_steps * self.dt

    def check_stability(self, model: stochastic_lwr.TrafficModel) -> None:
        """Check the CFL and viscous step bounds for ``model``.

        Raises:
            ConfigurationError: If ``dt·max|f'|/dx > 0.9`` or ``dt·ε/dx² > 0.4``.
        """
        probes = np.linspace(0.0, model.rho_max, 1001)
        max_speed = float(np.max(np.abs(model.flux._prime(probes))))
        cfl = self.dt * max_speed / self.dx
        if cfl > CFL_LIMIT:
            raise ConfigurationError(
                f"CFL number {cfl:.4g} exceeds {CFL_LIMIT}; use nt >= {int(np.ceil(self.nt * cfl / CFL_LIMIT))}."
            )
        viscous = self.dt * model.viscosity / self.dx**2
        if viscous > VISCOUS_LIMIT:
            raise ConfigurationError(f"Viscous step number {viscous:.4g} exceeds {VISCOUS_LIMIT}.")


def make_grid(
    model: stochastic_lwr.TrafficModel,
    nx: int,
    nt: int,
    boundary: BoundaryKind | str = BoundaryKind.PERIODIC,
    rho_left: float | None = None,
    rho_right: float | None = None,
    store_every: int = 1,
) -> SpaceTimeGrid:
    """Grid over the model's domain, checked against its stability bounds."""
    grid = SpaceTimeGrid(nx, nt, model.domain_length, model.horizon, boundary, rho_left, rho_right, store_every)
    grid.check_stability(model)
    return grid


@dataclass
class Ensemble:
    """Seeded Monte Carlo realisations on a space-time grid.

    ``data`` has shape ``(n_real, n_stored, nx)``; ``data[r, j]`` is the density
    of realisation ``r`` at ``grid.stored_times[j]``.
    """

    model: stochastic_lwr.TrafficModel
    grid: SpaceTimeGrid
    seed: int
    data: np.ndarray = field(repr=False)

    @property
    def n_real(self) -> int:
        """Number of realisations."""
        return self.data.shape[0]

    @property
    def stored_times(self) -> np.ndarray:
        """Times of the stored levels."""
        return self.grid.stored_times

    def save(self, filename: str | os.PathLike) -> None:
        """Write the ensemble in the binary SLWR1 layout.

        The header stores the spacing between stored levels as ``dt``.
        """
        _io.write_ensemble_binary(filename, self.data, self.grid.dx, self.grid.dt * self.grid.store_every, self.seed)

    def to_hdf5(self, base: h5py.File | h5py.Group | str | os.PathLike, name: str = "ensemble") -> h5py.Group | None:
        """Archive densities, times and positions in an HDF5 group."""
        return _io.to_hdf5(
            base,
            name,
            {
                "rho": (self.data, "", "density per realisation, stored time and cell"),
                "t": (self.stored_times, "", "stored times"),
                "x": (self.grid.x, "", "cell centres"),
            },
            {"seed": self.seed, "boundary": str(self.grid.boundary), "units": self.model.units},
        )


def load_ensemble(
    filename: str | os.PathLike,
    model: stochastic_lwr.TrafficModel,
    boundary: BoundaryKind | str = BoundaryKind.PERIODIC,
    rho_left: float | None = None,
    rho_right: float | None = None,
) -> Ensemble:
    """Read an SLWR1 ensemble.

    The file does not record boundary conditions, so they are passed here.
    Every stored level becomes one step of the reconstructed grid.
    """
    data, dx, dt, seed = _io.read_ensemble_binary(filename)
    n_real, n_stored, nx = data.shape
    if not np.isclose(nx * dx, model.domain_length, rtol=1e-12):
        raise ConfigurationError(
            f"Ensemble length {nx * dx} does not match the model's domain length {model.domain_length}."
        )
    if n_stored < 2:
        raise ConfigurationError(f"Ensemble file {filename} stores a single time level.")
    nt = n_stored - 1
    grid = SpaceTimeGrid(nx, nt, model.domain_length, nt * dt, boundary, rho_left, rho_right)
    logger.debug("loaded ensemble with %d realisations, %d levels, %d cells", n_real, n_stored, nx)
    return Ensemble(model, grid, seed, data)


def _pad(rho: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Add one ghost cell on each side along the last axis."""
    if grid.boundary is BoundaryKind.PERIODIC:
        return np.concatenate([rho[..., -1:], rho, rho[..., :1]], axis=-1)
    left = np.full((*rho.shape[:-1], 1), grid.rho_left)
    right = np.full((*rho.shape[:-1], 1), grid.rho_right)
    return np.concatenate([left, rho, right], axis=-1)


def _step(
    rho: np.ndarray,
    model: stochastic_lwr.TrafficModel,
    grid: SpaceTimeGrid,
    forcing_basis: np.ndarray,
    dw: np.ndarray,
) -> np.ndarray:
    """One Euler-Maruyama step for a batch ``rho`` of shape ``(R, nx)``.

    ``dw`` holds the Brownian increments of shape ``(R, K)``; each mode's increment
    is shared across all cells of a realisation.
    """
    flux = model.flux
    padded = _pad(rho, grid)
    left, right = padded[..., :-1], padded[..., 1:]
    speed = np.maximum(np.abs(flux._prime(left)), np.abs(flux._prime(right)))
    interface = 0.5 * (flux._value(left) + flux._value(right)) - 0.5 * speed * (right - left)
    new = rho - grid.dt / grid.dx * (interface[..., 1:] - interface[..., :-1])
    if model.viscosity > 0:
        new = new + model.viscosity * grid.dt / grid.dx**2 * (padded[..., 2:] - 2.0 * rho + padded[..., :-2])
    if forcing_basis.shape[0]:
        # Σ_k σ_k(ρ) e_k(x) ΔW_k
        sigma = model.noise.sigma_values(rho)
        new = new + np.einsum("kri,ki,rk->ri", sigma, forcing_basis, dw)
    rho_max = model.rho_max
    new = np.where(new < 0.0, -new, new)
    new = np.where(new > rho_max, 2.0 * rho_max - new, new)
    return np.clip(new, 0.0, rho_max)


def _run_chunk(
    model: stochastic_lwr.TrafficModel,
    grid: SpaceTimeGrid,
    increments: np.ndarray,
    first_realisation: int,
) -> np.ndarray:
    """Integrate a batch of realisations; ``increments`` has shape ``(R, nt, K)``."""
    n_chunk = increments.shape[0]
    rho = np.broadcast_to(model.rho0(grid.x), (n_chunk, grid.nx)).copy()
    forcing_basis = model.noise.basis_values(grid.x) if increments.shape[2] else np.zeros((0, grid.nx))
    out = np.empty((n_chunk, grid.nt // grid.store_every + 1, grid.nx))
    out[:, 0] = rho
    for n in range(grid.nt):
        rho = _step(rho, model, grid, forcing_basis, increments[:, n])
        if not np.all(np.isfinite(rho)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(rho), axis=1))[0])
            raise SimulationDivergedError(n + 1, first_realisation + bad)
        if (n + 1) % grid.store_every == 0:
            out[:, (n + 1) // grid.store_every] = rho
    return out


def realisation_rng(seed: int, realisation: int) -> np.random.Generator:
    """Counter-based random stream of one realisation."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(realisation,))))


def simulate_ensemble(
    model: stochastic_lwr.TrafficModel,
    grid: SpaceTimeGrid,
    n_real: int,
    seed: int,
    workers: int | None = None,
    chunk_size: int = 256,
) -> Ensemble:
    """Simulate ``n_real`` realisations of the stochastic LWR equation.

    Args:
        model: Traffic model; its fatal assumption checks must pass.
        grid: Space-time grid.
        n_real: Number of realisations.
        seed: Master seed, a non-negative 64-bit integer.
        workers: Number of threads; ``None`` uses up to four.
        chunk_size: Realisations integrated together as one vectorised batch.

    Returns:
        The ensemble. Identical inputs give bit-identical data for any
        ``workers`` and ``chunk_size``.

    Raises:
        ConfigurationError: On CFL violations or failed fatal assumption checks.
        SimulationDivergedError: If a non-finite state appears.
    """
    if n_real < 1:
        raise ConfigurationError(f"n_real must be positive, got {n_real}.")
    if not 0 <= seed < 2**64:
        raise ConfigurationError(f"Seed {seed} is not a 64-bit unsigned integer.")
    report = validate_assumptions(model)
    if not report.ok:
        failed = [c.name for c in report.checks if c.fatal and not c.passed]
        raise ConfigurationError(f"Model violates standing assumptions: {', '.join(failed)}.")
    grid.check_stability(model)

    sqrt_dt = np.sqrt(grid.dt)
    n_modes = 0 if model.noise.is_zero else model.noise.n_modes

    def run(start: int) -> tuple[int, np.ndarray]:
        stop = min(start + chunk_size, n_real)
        increments = np.zeros((stop - start, grid.nt, n_modes))
        if n_modes:
            for r in range(start, stop):
                increments[r - start] = sqrt_dt * realisation_rng(seed, r).standard_normal((grid.nt, n_modes))
        return start, _run_chunk(model, grid, increments, start)

    data = np.empty((n_real, grid.nt // grid.store_every + 1, grid.nx))
    starts = range(0, n_real, chunk_size)
    workers = workers if workers is not None else min(4, os.cpu_count() or 1)
    logger.debug("simulating %d realisations on %d worker(s)", n_real, workers)
    if workers == 1:
        for start in starts:
            _, chunk = run(start)
            data[start : start + chunk.shape[0]] = chunk
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for start, chunk in pool.map(run, starts):
                data[start : start + chunk.shape[0]] = chunk
    logger.info("simulated %d realisations (nx=%d, nt=%d)", n_real, grid.nx, grid.nt)
    return Ensemble(model, grid, seed, data)


def deterministic_lwr(model: stochastic_lwr.TrafficModel, grid: SpaceTimeGrid) -> np.ndarray:
    """Noise-free reference solution with the numerics of :py:func:`simulate_ensemble`.

    Returns:
        Array of shape ``(n_stored, nx)``, one row per stored time level.
    """
    grid.check_stability(model)
    n_modes = 0 if model.noise.is_zero else model.noise.n_modes
    return _run_chunk(model, grid, np.zeros((1, grid.nt, n_modes)), 0)[0]


@dataclass
class EmpiricalMarginal:
    """Histogram of the density at one position and time.

    ``samples`` holds the raw per-realisation values the histogram was built from.
    """

    bin_edges: np.ndarray
    mass: np.ndarray
    x: float
    t: float
    samples: np.ndarray = field(repr=False)

    @property
    def bin_centers(self) -> np.ndarray:
        """Bin midpoints."""
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    def mean(self) -> float:
        """Sample mean."""
        return float(np.mean(self.samples))


def _check_indices(ens: Ensemble, x_index: int, t_index: int) -> None:
    if not 0 <= x_index < ens.grid.nx:
        raise IndexError(f"x_index {x_index} is outside [0, {ens.grid.nx}).")
    if not 0 <= t_index < ens.data.shape[1]:
        raise IndexError(f"t_index {t_index} is not a stored time level (0..{ens.data.shape[1] - 1}).")


def empirical_marginal(ens: Ensemble, x_index: int, t_index: int, n_bins: int) -> EmpiricalMarginal:
    """Mass-normalised histogram of ``ρ(x, t)`` over ``[0, ρ_max]``.

    Raises:
        IndexError: If an index is out of range.
    """
    _check_indices(ens, x_index, t_index)
    samples = ens.data[:, t_index, x_index]
    counts, edges = np.histogram(samples, bins=n_bins, range=(0.0, ens.model.rho_max))
    return EmpiricalMarginal(
        edges, counts / samples.size, float(ens.grid.x[x_index]), float(ens.stored_times[t_index]), samples.copy()
    )


@dataclass
class OracleClosure:
    """Binned conditional-expectation estimate of the drift ``b(ρ̂, x, t)``.

    Bins without samples hold ``NaN`` in ``b_hat`` and ``standard_errors``;
    ``occupied`` marks the bins with data.
    """

    bin_centers: np.ndarray
    b_hat: np.ndarray
    counts: np.ndarray
    standard_errors: np.ndarray
    x: float
    t: float

    @property
    def occupied(self) -> np.ndarray:
        """Mask of bins with at least one sample."""
        return self.counts > 0

    def filled(self) -> np.ndarray:
        """Drift on all bins, empty bins linearly interpolated from occupied neighbours.

        Outside the occupied range the nearest occupied value is extended.
        Without any occupied bin the drift is zero.
        """
        occupied = self.occupied
        if not occupied.any():
            return np.zeros_like(self.b_hat)
        if occupied.all():
            return self.b_hat.copy()
        return np.interp(self.bin_centers, self.bin_centers[occupied], self.b_hat[occupied])


def estimate_conditional_drift(ens: Ensemble, x_index: int, t_index: int, n_bins: int) -> OracleClosure:
    """Estimate ``b = E[-f'(ρ) ∂ₓρ | ρ(x, t) = ρ̂]`` by binning realisations.

    ``∂ₓρ`` is a central difference at the stored resolution; boundary cells use
    the periodic neighbour or the Dirichlet state.

    Raises:
        ValueError: If the ensemble is empty.
        IndexError: If an index is out of range.
    """
    if ens.n_real == 0:
        raise ValueError("Cannot estimate a conditional drift from an empty ensemble.")
    _check_indices(ens, x_index, t_index)
    level = _pad(ens.data[:, t_index], ens.grid)
    centre = level[:, x_index + 1]
    gradient = (level[:, x_index + 2] - level[:, x_index]) / (2.0 * ens.grid.dx)
    beta = -ens.model.flux._prime(centre) * gradient

    rho_max = ens.model.rho_max
    edges = np.linspace(0.0, rho_max, n_bins + 1)
    index = np.clip(np.searchsorted(edges, centre, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(index, minlength=n_bins)
    sums = np.bincount(index, weights=beta, minlength=n_bins)
    squares = np.bincount(index, weights=beta**2, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        b_hat = np.where(counts > 0, sums / counts, np.nan)
        variance = np.where(counts > 1, (squares - counts * b_hat**2) / (counts - 1), np.nan)
        standard_errors = np.sqrt(np.maximum(variance, 0.0) / counts)
    standard_errors = np.where(counts > 1, standard_errors, np.nan)
    return OracleClosure(
        0.5 * (edges[1:] + edges[:-1]),
        b_hat,
        counts,
        standard_errors,
        float(ens.grid.x[x_index]),
        float(ens.stored_times[t_index]),
    )


@dataclass
class MassBalance:
    """Ensemble-mean drift of the total mass and its Monte Carlo standard error."""

    drift: float
    standard_error: float

    def within(self, n_errors: float = 3.0, atol: float = 1e-12) -> bool:
        """True if ``|drift| <= n_errors·standard_error + atol``."""
        return abs(self.drift) <= n_errors * self.standard_error + atol


def mass_balance(ens: Ensemble) -> MassBalance:
    """Mean change of the total mass ``Σ ρ dx`` between the first and last stored level."""
    mass = ens.data.sum(axis=2) * ens.grid.dx
    change = mass[:, -1] - mass[:, 0]
    se = float(np.std(change, ddof=1) / np.sqrt(change.size)) if change.size > 1 else 0.0
    return MassBalance(float(np.mean(change)), se)
