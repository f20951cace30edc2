"""Held-out likelihood and one-step-ahead next-event prediction."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .mcem import FittedModel, maximize_top_rates
from .mcmc import Chain, ChainConfig
from .model import EventSequence, LatentState, SequenceParams
from .simulate import first_event_after, initial_state

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionRecord:
    """One prediction; types are 0-indexed here and 1-indexed in files."""

    index: int
    t_true: float
    k_true: int
    t_pred: float
    k_pred: int
    n_mc: int
    n_censored: int = 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["k_true"] += 1
        d["k_pred"] += 1
        return d


def heldout_loglik_per_event(model: FittedModel, sequence: EventSequence, chain_config: ChainConfig,
                             rng: np.random.Generator, refit_rounds: int = 5, rel_tol: float = 0.02,
                             backend: str | None = None) -> float:
    """Posterior-expected evidence log-likelihood divided by the number of events.

    Kernels stay fixed.  The sequence's top-layer rates are refit by
    alternating chain runs with the closed-form maximizer until their relative
    change drops below ``rel_tol`` (at most ``refit_rounds`` rounds).
    """
    if sequence.n_events == 0:
        raise ValueError("held-out likelihood per event is undefined for an empty sequence")
    arch = model.arch
    sp = model.default_params.copy()
    chain = Chain(arch, sp, sequence, initial_state(arch, sp, sequence, rng), rng, backend)
    chain.burn_in_until_valid(chain_config.burn_in, chain_config.move_probs)
    for _ in range(refit_rounds):
        counts = []
        chain.collect(chain_config, lambda c: counts.append(c.top_counts()))
        mu = maximize_top_rates(counts, sequence.T)
        change = max(abs(m - o) / o for m, o in zip(mu, sp.mu))
        sp = SequenceParams(mu, sp.mu_virtual)
        chain.set_params(seq_params=sp)
        if change < rel_tol:
            break
    lls = []
    chain.collect(chain_config, lambda c: lls.append(c.evidence_loglik()))
    return float(np.mean(lls)) / sequence.n_events


def _prefix(seq_times, seq_types, n_types, i) -> EventSequence:
    t_last = float(seq_times[i - 1]) if i > 0 else 0.0
    hist_t = seq_times[:i]
    hist_k = seq_types[:i]
    keep = hist_t < seq_times[i]
    return EventSequence(t_last, tuple(hist_t[keep & (hist_k == k)] for k in range(n_types)))


def _majority_type(types, n_types: int) -> int:
    """Most frequent type; ties go to the smallest index."""
    return int(np.argmax(np.bincount(np.asarray(types, dtype=int), minlength=n_types)))


def predict_next(model: FittedModel, history: EventSequence, chain_state: LatentState | None, n_mc: int,
                 rng: np.random.Generator, chain_config: ChainConfig = ChainConfig(), horizon_factor: float = 100.0,
                 horizon: float | None = None, seq_params: SequenceParams | None = None,
                 backend: str | None = None) -> tuple[float, int, int, LatentState | None]:
    """Predict the next event after ``history.T``.

    Runs a chain on the history window (warm-started from ``chain_state`` when
    given) and simulates the model forward once from each of ``n_mc``
    posterior samples.  Returns (mean time, majority type, number of censored
    draws, final chain state).
    """
    arch = model.arch
    sp = model.default_params if seq_params is None else seq_params
    t_last = history.T
    if horizon is None:
        horizon = horizon_factor * max(t_last, 1.0)
    chunk = max(t_last, 1.0) / max(history.n_events, 1)
    draws = []
    censored = 0
    state = None

    def simulate(real):
        nonlocal censored
        out = first_event_after(arch, sp, real, t_last, horizon, rng, chunk)
        if out is None:
            censored += 1
        else:
            draws.append(out)

    if t_last <= 0.0:
        empty = {n: np.empty(0) for n in arch.hidden_nodes()}
        for _ in range(n_mc):
            simulate(empty)
    else:
        init = initial_state(arch, sp, history, rng) if chain_state is None else chain_state
        chain = Chain(arch, sp, history, init, rng, backend)
        if chain_state is None:
            chain.burn_in_until_valid(chain_config.burn_in, chain_config.move_probs)
        cfg = ChainConfig(chain_config.burn_in, n_mc, chain_config.thin, chain_config.move_probs)
        chain.collect(cfg, lambda c: simulate(c.state().real))
        state = chain.state()

    if censored > 0.01 * n_mc:
        warnings.warn(f"{censored} of {n_mc} forward draws saw no event within the horizon; excluded",
                      RuntimeWarning, stacklevel=2)
    if not draws:
        return t_last + horizon, 0, censored, state
    times = np.array([d[0] for d in draws])
    types = np.array([d[1] for d in draws])
    return float(times.mean()), _majority_type(types, arch.K[0]), censored, state


def evaluate(model: FittedModel, test_set: list[EventSequence], chain_config: ChainConfig, n_mc: int,
             rng: np.random.Generator, backend: str | None = None) -> tuple[float, float, list[PredictionRecord]]:
    """Sequential one-step-ahead prediction of every event; returns (rmse, accuracy, records)."""
    if not test_set:
        raise ValueError("empty test set")
    records = []
    rngs = rng.spawn(len(test_set))
    idx = 0
    for seq, r in zip(test_set, rngs):
        times, types = seq.merged()
        state = None
        for i in range(len(times)):
            hist = _prefix(times, types, seq.n_types, i)
            t_hat, k_hat, cens, state = predict_next(model, hist, state, n_mc, r, chain_config, backend=backend)
            records.append(PredictionRecord(idx, float(times[i]), int(types[i]), t_hat, k_hat, n_mc, cens))
            idx += 1
    if not records:
        raise ValueError("test set contains no events")
    err = np.array([rec.t_pred - rec.t_true for rec in records])
    rmse = float(math.sqrt(np.mean(err ** 2)))
    acc = float(np.mean([rec.k_pred == rec.k_true for rec in records]))
    return rmse, acc, records
