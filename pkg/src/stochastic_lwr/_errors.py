"""Exception types raised by stochastic-lwr.

All exceptions derive from built-in types so that callers catching
``ValueError`` or ``RuntimeError`` keep working. The command-line interface maps
them to exit codes.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    import stochastic_lwr


class ConfigurationError(ValueError):
    """Invalid configuration: stability bounds, missing keys, unusable settings."""


class DomainError(ValueError):
    """Input outside the physical domain, e.g. a density outside ``[0, rho_max]``."""


class UnsupportedFluxError(ConfigurationError):
    """Flux shape not supported by an operation, e.g. a non-unimodal flux in the flow pushforward."""


class NumericalError(RuntimeError):
    """A computation produced results that cannot be trusted."""


class SimulationDivergedError(NumericalError):
    """Non-finite state encountered during a Monte Carlo run."""

    def __init__(self, step: int, realisation: int):
        super().__init__(f"Simulation diverged at step {step} in realisation {realisation}.")
        self.step = step
        self.realisation = realisation


class SolverIntegrityError(NumericalError):
    """Discrete mass drifted beyond tolerance in the Fokker-Planck solver."""


class TransportError(NumericalError):
    """Velocity evaluation failed while transporting particles.

    ``particle`` is -1 when no single particle reproduces the failure.
    """

    def __init__(self, particle: int, time: float, reason: str = "non-finite velocity"):
        super().__init__(f"Transport failed for particle {particle} at t={time:.6g}: {reason}.")
        self.particle = particle
        self.time = time


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite or exceeded the divergence threshold.

    Args:
        epoch: Epoch at which divergence was detected.
        loss: The offending loss value.
        checkpoint: Last parameter state with a finite loss.
    """

    def __init__(self, epoch: int, loss: float, checkpoint: stochastic_lwr.TrainedModels | None):
        super().__init__(f"Training diverged at epoch {epoch} with loss {loss!r}.")
        self.epoch = epoch
        self.loss = loss
        self.checkpoint = checkpoint


class ValidationFailure(RuntimeError):
    """A report-only check failed; raised by the command-line interface only."""
