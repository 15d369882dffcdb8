"""Joint score-matching and physics-informed training.

The total loss

    L = L_SM + λ L_PF + λ_BC L_BC

is minimised with adaptive-moment updates and a cosine-decayed learning rate.
Every ``balance_every`` epochs ``λ`` is rescaled so that the gradient norms of
the data and physics terms agree within a factor of two. A second phase at a
tenth of the learning rate runs until the loss change falls below
``finetune_tol`` or its epoch cap is reached.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from stochastic_lwr import _io
from stochastic_lwr._config import DATA_DIR, read_mapping
from stochastic_lwr._errors import ConfigurationError, DomainError, TrainingDivergedError
from stochastic_lwr._score import (
    ClosureModel,
    ClosureNetKind,
    LossTerm,
    ScoreModel,
    bc_terms,
    dsm_perturbations,
    dsm_terms,
    lhs_sample,
    physics_terms,
)

if TYPE_CHECKING:
    from collections.abc import Callable

    import numpy.typing

    import stochastic_lwr

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e6
# ratio band of λ‖∇L_PF‖ / ‖∇L_SM‖ tolerated before rebalancing
BALANCE_BAND = (0.5, 2.0)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of :py:func:`train`.

    DSM scales run geometrically from ``scale_max`` to ``scale_min`` (fractions
    of ``rho_max``); ``mollifier_width`` and ``boundary_margin`` are fractions of
    ``rho_max`` as well.
    """

    lambda_pf: float = 1.0
    lambda_bc: float = 0.1
    n_scales: int = 5
    scale_max: float = 0.1
    scale_min: float = 0.005
    batch_obs: int = 128
    batch_collocation: int = 512
    batch_boundary: int = 64
    learning_rate: float = 1e-3
    epochs: int = 2000
    finetune_epochs: int = 500
    finetune_tol: float = 1e-6
    balance_every: int = 50
    seed: int = 0
    depth: int = 4
    width: int = 64
    levels: int = 4
    closure: str = "structured_m"
    closure_depth: int = 2
    closure_width: int = 32
    mollifier_width: float = 0.02
    boundary_margin: float = 0.01
    learn_noise: bool = False

    def __post_init__(self):
        object.__setattr__(self, "closure", ClosureNetKind(self.closure).value)
        if self.lambda_pf < 0 or self.lambda_bc < 0:
            raise ConfigurationError(
                f"Loss weights must be non-negative, got lambda_pf={self.lambda_pf}, lambda_bc={self.lambda_bc}."
            )
        if self.n_scales < 1:
            raise ConfigurationError(f"n_scales must be at least 1, got {self.n_scales}.")
        if not 0 < self.scale_min <= self.scale_max or (self.n_scales > 1 and self.scale_min == self.scale_max):
            raise ConfigurationError(
                f"DSM scales must satisfy 0 < scale_min < scale_max, got {self.scale_min} and {self.scale_max}."
            )
        for name in ("batch_obs", "batch_collocation", "batch_boundary", "balance_every", "levels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}.")
        if self.epochs < 0 or self.finetune_epochs < 0 or self.depth < 0:
            raise ConfigurationError("epochs, finetune_epochs and depth must be non-negative.")
        if self.learning_rate <= 0 or self.mollifier_width <= 0 or self.boundary_margin <= 0:
            raise ConfigurationError("learning_rate, mollifier_width and boundary_margin must be positive.")

    def dsm_scales(self, rho_max: float = 1.0) -> np.ndarray:
        """Strictly decreasing perturbation scales in density units."""
        if self.n_scales == 1:
            return np.array([self.scale_max * rho_max])
        return rho_max * np.exp(np.linspace(np.log(self.scale_max), np.log(self.scale_min), self.n_scales))

    def dsm_weights(self, rho_max: float = 1.0) -> np.ndarray:
        """Annealing weights ``w_l ∝ σ_l²`` normalised to sum to one."""
        w = self.dsm_scales(rho_max) ** 2
        return w / w.sum()

    def to_dict(self) -> dict[str, Any]:
        """Plain mapping of all fields."""
        return dataclasses.asdict(self)


def load_train_config(filename: str | os.PathLike | None = None, **overrides) -> TrainConfig:
    """Read a training configuration; without ``filename`` the bundled defaults are used.

    Raises:
        ConfigurationError: On unreadable files, unknown keys or invalid values.

    Examples:
        >>> import stochastic_lwr as slwr
        >>> slwr.load_train_config(epochs=10).epochs
        10
    """
    path = Path(filename) if filename is not None else DATA_DIR / "default_train.json"
    mapping = read_mapping(path) | overrides
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigurationError(f"Unknown training configuration keys in '{path}': {', '.join(unknown)}.")
    try:
        return TrainConfig(**mapping)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"Invalid training configuration '{path}': {exc}") from exc


class ObservationSet:
    """Loop-detector densities and probe-vehicle speeds at ``(x, t)``.

    Speeds are converted to densities on the decreasing branch of the speed
    relation of ``traffic``.

    Args:
        records: Table with columns ``x``, ``t``, ``kind`` (``rho`` or ``u``) and ``value``.
        traffic: Model providing the speed relation and the domain.

    Raises:
        DomainError: If a converted density is not strictly inside ``(0, rho_max)``
            or a record lies outside the space-time domain.
    """

    COLUMNS = ("x", "t", "kind", "value")

    def __init__(self, records: pd.DataFrame, traffic: stochastic_lwr.TrafficModel):
        missing = [c for c in self.COLUMNS if c not in records.columns]
        if missing:
            raise ValueError(f"Observation table lacks columns {missing}.")
        self.records = records.loc[:, list(self.COLUMNS)].reset_index(drop=True)
        self.traffic = traffic
        kinds = set(self.records["kind"].astype(str))
        if not kinds <= {"rho", "u"}:
            raise ValueError(f"Observation kinds must be 'rho' or 'u', got {sorted(kinds - {'rho', 'u'})}.")
        values = self.records["value"].to_numpy(dtype=float)
        is_speed = self.records["kind"].astype(str).to_numpy() == "u"
        rho = values.copy()
        rho[is_speed] = [traffic.flux.speed_inverse(u) for u in values[is_speed]]
        bad = ~((rho > 0.0) & (rho < traffic.rho_max))
        if np.any(bad):
            raise DomainError(f"Observed density {rho[bad][0]!r} is outside (0, {traffic.rho_max}).")
        x = self.records["x"].to_numpy(dtype=float)
        t = self.records["t"].to_numpy(dtype=float)
        if np.any((x < 0) | (x > traffic.domain_length) | (t < 0) | (t > traffic.horizon)):
            raise DomainError("Observation positions and times must lie inside the model domain.")
        self._densities = np.column_stack([x, t, rho])

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(n={len(self)})"

    @property
    def rho_max(self) -> float:
        """Jam density of the accompanying model."""
        return self.traffic.rho_max

    @property
    def densities(self) -> np.ndarray:
        """Rows ``(x, t, ρ_obs)`` after speed conversion."""
        return self._densities

    @classmethod
    def from_arrays(
        cls,
        traffic: stochastic_lwr.TrafficModel,
        x: numpy.typing.ArrayLike,
        t: numpy.typing.ArrayLike,
        value: numpy.typing.ArrayLike,
        kind: str = "rho",
    ) -> ObservationSet:
        """Observations of a single kind from broadcastable arrays."""
        x, t, value = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, t, value)))
        frame = pd.DataFrame({"x": x.ravel(), "t": t.ravel(), "kind": kind, "value": value.ravel()})
        return cls(frame, traffic)

    @classmethod
    def from_csv(cls, filename: str | os.PathLike, traffic: stochastic_lwr.TrafficModel) -> ObservationSet:
        """Read ``x, t, kind, value`` from a slwr CSV file or a plain CSV file."""
        with open(filename) as f:
            first = f.readline()
        if first.startswith("# slwr csv"):
            frame, _units, _description = _io.read_csv(filename)
        else:
            frame = pd.read_csv(filename, comment="#")
        return cls(frame, traffic)

    def to_csv(self, filename: str | os.PathLike) -> None:
        """Write the records in the slwr CSV layout."""
        _io.write_csv(filename, self.records, description="observations: kind rho is a density, u a speed")


def observations_from_ensemble(
    ens: stochastic_lwr.Ensemble,
    x_indices: numpy.typing.ArrayLike,
    t_indices: numpy.typing.ArrayLike,
    n_per_point: int,
    seed: int,
) -> ObservationSet:
    """Synthetic density observations drawn from random realisations of an ensemble.

    Samples at exactly ``0`` or ``rho_max`` are dropped.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for xi in np.atleast_1d(x_indices):
        for ti in np.atleast_1d(t_indices):
            picks = rng.choice(ens.n_real, size=n_per_point, replace=n_per_point > ens.n_real)
            values = ens.data[picks, ti, xi]
            rows.append(
                pd.DataFrame(
                    {"x": ens.grid.x[xi], "t": ens.stored_times[ti], "kind": "rho", "value": values}
                )
            )
    frame = pd.concat(rows, ignore_index=True)
    inside = (frame["value"] > 0) & (frame["value"] < ens.model.rho_max)
    if not inside.all():
        logger.info("dropped %d synthetic observations on the density bounds", int((~inside).sum()))
    return ObservationSet(frame[inside], ens.model)


@dataclass
class TrainState:
    """Trainable parameters: score ``θ``, closure ``φ`` and ``log α``."""

    theta: np.ndarray
    phi: np.ndarray
    raw_alpha: np.ndarray

    def flat(self) -> np.ndarray:
        """All parameters in one vector."""
        return np.concatenate([self.theta, self.phi, self.raw_alpha])

    def copy(self) -> TrainState:
        """Deep copy."""
        return TrainState(self.theta.copy(), self.phi.copy(), self.raw_alpha.copy())


@dataclass
class Batch:
    """One epoch's samples: observation rows, DSM draws and physics/boundary points."""

    observations: np.ndarray
    eps: np.ndarray
    collocation: np.ndarray
    boundary: np.ndarray
    initial: np.ndarray


@dataclass
class TrainedModels:
    """Outcome of :py:func:`train`.

    ``traffic`` carries the fitted noise amplitudes when noise was learned.
    """

    score: ScoreModel
    closure: ClosureModel
    traffic: stochastic_lwr.TrafficModel
    log: pd.DataFrame = field(default_factory=pd.DataFrame, repr=False)

    def save(self, filename: str | os.PathLike) -> None:
        """Write a checkpoint, see :py:func:`save_checkpoint`."""
        save_checkpoint(filename, self)


class TrainingProblem:
    """Loss terms and gradients of the joint objective for fixed batches.

    Args:
        obs: Observations.
        traffic: Traffic model; its noise amplitudes seed ``log α``.
        config: Training configuration.
        score: Score network (architecture and initial parameters).
        closure: Closure network.
    """

    def __init__(
        self,
        obs: ObservationSet,
        traffic: stochastic_lwr.TrafficModel,
        config: TrainConfig,
        score: ScoreModel,
        closure: ClosureModel,
    ):
        if len(obs) == 0:
            raise ValueError("Training needs at least one observation.")
        self.obs = obs
        self.traffic = traffic
        self.config = config
        self.score = score.copy()
        self.closure = closure.copy()
        self.scales = config.dsm_scales(traffic.rho_max)
        self.weights = config.dsm_weights(traffic.rho_max)
        alphas = traffic.noise.alphas
        if config.learn_noise and np.any(alphas <= 0):
            raise ConfigurationError(f"Learning the noise needs positive initial amplitudes, got {alphas.tolist()}.")
        self._raw0 = np.log(np.where(alphas > 0, alphas, 1.0))

    @property
    def sizes(self) -> tuple[int, int, int]:
        """Numbers of ``θ``, ``φ`` and ``log α`` entries."""
        return self.score.n_params, self.closure.n_params, self._raw0.size

    def initial_state(self) -> TrainState:
        """Parameters of the models passed to the constructor."""
        return TrainState(self.score.params.copy(), self.closure.params.copy(), self._raw0.copy())

    def sample_batch(self, rng: np.random.Generator) -> Batch:
        """Draw one epoch's observations, perturbations and point sets."""
        cfg = self.config
        n_obs = len(self.obs)
        rows = rng.choice(n_obs, size=cfg.batch_obs, replace=cfg.batch_obs > n_obs)
        observations = self.obs.densities[rows]
        eps = dsm_perturbations(observations[:, 2], self.scales, self.traffic.rho_max, rng)
        length, horizon = self.traffic.domain_length, self.traffic.horizon
        collocation = lhs_sample(
            cfg.batch_collocation,
            [(0.0, self.traffic.rho_max), (0.0, length), (0.0, horizon)],
            int(rng.integers(2**32)),
        )
        boundary = lhs_sample(cfg.batch_boundary, [(0.0, length), (0.0, horizon)], int(rng.integers(2**32)))
        initial = rng.uniform(0.0, length, cfg.batch_boundary)
        return Batch(observations, eps, collocation, boundary, initial)

    def traffic_for(self, state: TrainState) -> stochastic_lwr.TrafficModel:
        """Traffic model with the amplitudes of ``state`` (unchanged unless noise is learned)."""
        if not self.config.learn_noise:
            return self.traffic
        return self.traffic.with_noise(self.traffic.noise.with_alphas(np.exp(state.raw_alpha)))

    def evaluate(
        self, state: TrainState, batch: Batch, lambda_pf: float, lambda_bc: float
    ) -> dict[str, LossTerm]:
        """Unweighted terms ``dsm``, ``physics``, ``boundary`` and the weighted ``total``.

        A term whose weight is zero is skipped and reported as zero.
        """
        self.score.params = state.theta
        self.closure.params = state.phi
        traffic = self.traffic_for(state)
        n_theta, n_phi, n_alpha = self.sizes
        x, t, rho = batch.observations.T
        terms = {
            "dsm": dsm_terms(self.score, x, t, rho, batch.eps, self.scales, self.weights, n_phi=n_phi, n_alpha=n_alpha)
        }
        terms["physics"] = (
            physics_terms(self.score, self.closure, traffic, batch.collocation)
            if lambda_pf > 0
            else LossTerm.zero(n_theta, n_phi, n_alpha)
        )
        terms["boundary"] = (
            bc_terms(
                self.score,
                self.closure,
                traffic,
                batch.boundary,
                batch.initial,
                self.config.mollifier_width,
                self.config.boundary_margin * traffic.rho_max,
            )
            if lambda_bc > 0
            else LossTerm.zero(n_theta, n_phi, n_alpha)
        )
        terms["total"] = terms["dsm"] + terms["physics"].scaled(lambda_pf) + terms["boundary"].scaled(lambda_bc)
        return terms

    def gradient(self, term: LossTerm) -> np.ndarray:
        """Flat gradient with frozen parts zeroed."""
        phi = np.zeros_like(term.phi) if self.closure.frozen else term.phi
        raw = term.raw_alpha if self.config.learn_noise else np.zeros_like(term.raw_alpha)
        return np.concatenate([term.theta, phi, raw])

    def unflatten(self, flat: np.ndarray) -> TrainState:
        """Inverse of :py:meth:`TrainState.flat`."""
        n_theta, n_phi, _n_alpha = self.sizes
        return TrainState(flat[:n_theta].copy(), flat[n_theta : n_theta + n_phi].copy(), flat[n_theta + n_phi :].copy())

    def models(self, state: TrainState, log: pd.DataFrame | None = None) -> TrainedModels:
        """Independent model objects carrying the parameters of ``state``."""
        return TrainedModels(
            self.score.copy(state.theta),
            self.closure.copy(state.phi),
            self.traffic_for(state),
            pd.DataFrame() if log is None else log,
        )


class Adam:
    """First-order adaptive-moment optimiser on a flat parameter vector."""

    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.count = 0

    def step(self, params: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
        """Return the updated parameters."""
        self.count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.count)
        v_hat = self.v / (1.0 - self.beta2**self.count)
        return params - learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_rate(base: float, epoch: int, n_epochs: int) -> float:
    """Cosine decay from ``base`` at epoch 0 towards 0 at ``n_epochs``."""
    return 0.5 * base * (1.0 + math.cos(math.pi * epoch / max(n_epochs, 1)))


def _balanced_lambda(problem: TrainingProblem, terms: dict[str, LossTerm], lambda_pf: float) -> float:
    if lambda_pf == 0:
        return lambda_pf
    g_sm = float(np.linalg.norm(problem.gradient(terms["dsm"])))
    g_pf = float(np.linalg.norm(problem.gradient(terms["physics"])))
    if g_sm == 0 or g_pf == 0:
        return lambda_pf
    ratio = lambda_pf * g_pf / g_sm
    if BALANCE_BAND[0] <= ratio <= BALANCE_BAND[1]:
        return lambda_pf
    logger.debug("rebalancing lambda_pf from %.4g to %.4g (ratio %.3g)", lambda_pf, g_sm / g_pf, ratio)
    return g_sm / g_pf


def train(
    obs: ObservationSet,
    traffic: stochastic_lwr.TrafficModel,
    config: TrainConfig,
    score: ScoreModel | None = None,
    closure: ClosureModel | None = None,
    callback: Callable[[int, dict[str, float]], None] | None = None,
) -> TrainedModels:
    """Jointly fit the score network and the closure to observations and physics.

    Args:
        obs: Observations.
        traffic: Traffic model.
        config: Training configuration.
        score: Initial score network; built from ``config`` if omitted.
        closure: Initial closure; built from ``config`` if omitted.
        callback: Called after every epoch with the epoch number and the log row.

    Returns:
        The trained models and a per-epoch log of the loss components.

    Raises:
        TrainingDivergedError: If the loss becomes non-finite or exceeds ``1e6``;
            the error carries the last parameters with a finite loss.
    """
    rho_max, length, horizon = traffic.rho_max, traffic.domain_length, traffic.horizon
    if score is None:
        score = ScoreModel(rho_max, length, horizon, config.depth, config.width, config.levels, seed=config.seed)
    if closure is None:
        closure = ClosureModel(
            config.closure,
            rho_max,
            length,
            horizon,
            config.closure_depth,
            config.closure_width,
            config.levels,
            seed=config.seed + 1,
        )
    problem = TrainingProblem(obs, traffic, config, score, closure)
    rng = np.random.default_rng(config.seed)
    state = problem.initial_state()
    last_good: TrainState | None = None
    optimiser = Adam(state.flat().size)
    lambda_pf, lambda_bc = config.lambda_pf, config.lambda_bc
    rows: list[dict[str, Any]] = []
    logger.info(
        "training %r and %r on %d observations (learn_noise=%s)",
        problem.score,
        problem.closure,
        len(obs),
        config.learn_noise,
    )

    phases = [
        ("warm", config.learning_rate, config.epochs),
        ("finetune", 0.1 * config.learning_rate, config.finetune_epochs),
    ]
    epoch = 0
    for phase, base_rate, n_epochs in phases:
        previous = math.inf
        for k in range(n_epochs):
            rate = cosine_rate(base_rate, k, n_epochs)
            batch = problem.sample_batch(rng)
            terms = problem.evaluate(state, batch, lambda_pf, lambda_bc)
            loss = terms["total"].value
            if not math.isfinite(loss) or loss > DIVERGENCE_THRESHOLD:
                checkpoint = None if last_good is None else problem.models(last_good, pd.DataFrame(rows))
                raise TrainingDivergedError(epoch, loss, checkpoint)
            row = {
                "epoch": epoch,
                "phase": phase,
                "learning_rate": rate,
                "loss": loss,
                "dsm": terms["dsm"].value,
                "physics": terms["physics"].value,
                "boundary": terms["boundary"].value,
                "lambda_pf": lambda_pf,
                "lambda_bc": lambda_bc,
            }
            for i, a in enumerate(np.exp(state.raw_alpha)):
                row[f"alpha_{i}"] = float(a)
            last_good = state
            rows.append(row)
            if callback is not None:
                callback(epoch, row)
            if phase == "warm" and k > 0 and k % config.balance_every == 0:
                lambda_pf = _balanced_lambda(problem, terms, lambda_pf)
            state = problem.unflatten(optimiser.step(state.flat(), problem.gradient(terms["total"]), rate))
            epoch += 1
            if phase == "finetune" and abs(previous - loss) < config.finetune_tol:
                logger.info("fine-tuning converged after %d epochs", k + 1)
                break
            previous = loss
    log = pd.DataFrame(rows)
    if rows:
        logger.info("training finished after %d epochs with loss %.6g", epoch, rows[-1]["loss"])
    return problem.models(state, log)


def learn_noise(
    obs: ObservationSet,
    traffic: stochastic_lwr.TrafficModel,
    config: TrainConfig,
    score: ScoreModel | None = None,
    closure: ClosureModel | None = None,
) -> TrainedModels:
    """:py:func:`train` with the noise amplitudes ``α_k = exp(raw_k)`` as extra parameters.

    The amplitudes of ``traffic`` are the initial guess; the fitted values are
    in ``result.traffic.noise.alphas``.
    """
    return train(obs, traffic, dataclasses.replace(config, learn_noise=True), score, closure)


_CLOSURE_CODES = list(ClosureNetKind)


def save_checkpoint(filename: str | os.PathLike, models: TrainedModels) -> None:
    """Write score, closure and ``log α`` to an SLWRCKPT1 file with CRC32.

    The header holds both architectures, the closure kind and whether the
    closure is frozen.
    """
    score, closure, traffic = models.score, models.closure, models.traffic
    header_ints = (
        score.depth,
        score.width,
        score.levels,
        _CLOSURE_CODES.index(closure.kind),
        closure.depth,
        closure.width,
        traffic.noise.n_modes,
        closure.levels,
        int(closure.frozen),
    )
    header_floats = (score.rho_max, score.length, score.horizon)
    alphas = traffic.noise.alphas
    raw = np.log(np.where(alphas > 0, alphas, np.finfo(float).tiny))
    _io.write_checkpoint(filename, header_ints, header_floats, np.concatenate([score.params, closure.params, raw]))
    logger.debug("wrote checkpoint '%s'", filename)


def load_checkpoint(filename: str | os.PathLike, traffic: stochastic_lwr.TrafficModel) -> TrainedModels:
    """Read an SLWRCKPT1 checkpoint written by :py:func:`save_checkpoint`.

    Raises:
        RuntimeError: If the file is corrupt.
        ConfigurationError: If the checkpoint does not fit ``traffic``.
    """
    ints, floats, payload = _io.read_checkpoint(filename)
    if len(ints) != 9 or len(floats) != 3:
        raise RuntimeError(f"Checkpoint {filename} has an unexpected header layout.")
    depth, width, levels, code, closure_depth, closure_width, n_alpha, closure_levels, frozen = ints
    rho_max, length, horizon = floats
    if not np.allclose([rho_max, length, horizon], [traffic.rho_max, traffic.domain_length, traffic.horizon]):
        raise ConfigurationError(
            f"Checkpoint domain (rho_max={rho_max}, L={length}, T={horizon}) does not match the model configuration."
        )
    if n_alpha != traffic.noise.n_modes:
        raise ConfigurationError(f"Checkpoint has {n_alpha} noise modes, the model has {traffic.noise.n_modes}.")
    score = ScoreModel(rho_max, length, horizon, depth, width, levels)
    kind = _CLOSURE_CODES[code]
    closure = ClosureModel(
        kind, rho_max, length, horizon, closure_depth, closure_width, closure_levels, frozen=bool(frozen)
    )
    n_theta, n_phi = score.n_params, closure.n_params
    if payload.size != n_theta + n_phi + n_alpha:
        raise RuntimeError(
            f"Checkpoint {filename} holds {payload.size} parameters, expected {n_theta + n_phi + n_alpha}."
        )
    score.params = payload[:n_theta].copy()
    closure.params = payload[n_theta : n_theta + n_phi].copy()
    traffic = traffic.with_noise(traffic.noise.with_alphas(np.exp(payload[n_theta + n_phi :])))
    return TrainedModels(score, closure, traffic)
