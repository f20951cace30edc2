"""Deep Neyman-Scott processes: simulation, posterior sampling, Monte Carlo EM and prediction."""
from ._backend import BACKEND
from .mcem import MCEMConfig, FittedModel, mcem_fit
from .mcmc import ChainConfig, ChainStats, MoveProbs, run_chain
from .model import (
    Architecture,
    EventSequence,
    KernelParams,
    LatentState,
    SequenceParams,
    build_architecture,
    complete_loglik,
    fully_connected_architecture,
    n_hidden_architecture,
)
from .predict import evaluate, heldout_loglik_per_event, predict_next
from .simulate import RngStream, forward_sample

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Architecture",
    "ChainConfig",
    "ChainStats",
    "EventSequence",
    "FittedModel",
    "KernelParams",
    "LatentState",
    "MCEMConfig",
    "MoveProbs",
    "RngStream",
    "SequenceParams",
    "build_architecture",
    "complete_loglik",
    "evaluate",
    "forward_sample",
    "fully_connected_architecture",
    "heldout_loglik_per_event",
    "mcem_fit",
    "n_hidden_architecture",
    "predict_next",
    "run_chain",
]
