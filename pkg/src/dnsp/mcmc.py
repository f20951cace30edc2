"""Auxiliary-variable MCMC over hidden real and virtual events.

The sampler itself lives in the chain kernels (``_chain_py`` / ``_chain_ext``);
this module wraps them and provides reference implementations of the
acceptance ratios that the tests check the kernels against.

Ratios are returned in log space.  Configurations with zero intensity at an
event are handled in the limit of a vanishing intensity: the log ratio is
``-inf`` if the proposal creates more zero-intensity events than it removes,
``+inf`` if it removes more, and otherwise the finite remainder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._flat import event_lists, flatten, node_ids
from .model import (
    Architecture,
    EventSequence,
    LatentState,
    Node,
    SequenceParams,
    kernel_eval,
    kernel_mass,
    real_compensator,
    real_events,
    real_intensity,
    virtual_compensator,
    virtual_intensity,
)


@dataclass(frozen=True)
class MoveProbs:
    p_resample: float = 0.2
    p_flip: float = 0.6
    p_swap: float = 0.2

    def __post_init__(self):
        ps = (self.p_resample, self.p_flip, self.p_swap)
        if any(p < 0 for p in ps) or abs(sum(ps) - 1.0) > 1e-12:
            raise ValueError(f"move probabilities must be nonnegative and sum to 1, got {ps}")


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 200
    n_samples: int = 16
    thin: int = 10
    move_probs: MoveProbs = field(default_factory=MoveProbs)

    def __post_init__(self):
        if self.burn_in < 0 or self.n_samples < 1 or self.thin < 1:
            raise ValueError("need burn_in >= 0, n_samples >= 1, thin >= 1")


MOVES = ("resample", "flip", "swap")


@dataclass
class ChainStats:
    """Per-move counters (resample, flip, swap) and the complete log-likelihood at retained samples."""

    proposed: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    noop: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    trace: list = field(default_factory=list)

    def add(self, proposed, accepted, noop):
        self.proposed += proposed
        self.accepted += accepted
        self.noop += noop

    @property
    def n_steps(self) -> int:
        return int(self.proposed.sum())

    def acceptance_rates(self) -> np.ndarray:
        """Accepted over proposed per move, counting no-op picks as proposals."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.proposed > 0, self.accepted / np.maximum(self.proposed, 1), np.nan)

    def move_frequencies(self) -> np.ndarray:
        n = self.proposed.sum()
        return self.proposed / n if n else np.zeros(3)

    def as_dict(self) -> dict:
        return {
            "proposed": self.proposed.tolist(),
            "accepted": self.accepted.tolist(),
            "noop": self.noop.tolist(),
        }


# -- proposals and reference ratios --------------------------------------------------


@dataclass(frozen=True)
class Proposal:
    """Edit of one hidden node.

    ``kind`` is ``"v2r"`` (virtual ``t_virtual`` becomes real), ``"r2v"``
    (real ``t_real`` becomes virtual), ``"swap"`` (both at once) or
    ``"identity"``.
    """

    node: Node
    kind: str
    t_real: float | None = None
    t_virtual: float | None = None

    def apply(self, state: LatentState) -> LatentState:
        new = state.copy()
        n = self.node
        real, virt = list(new.real[n]), list(new.virtual[n])
        if self.kind in ("v2r", "swap"):
            virt.remove(self.t_virtual)
            real.append(self.t_virtual)
        if self.kind in ("r2v", "swap"):
            real.remove(self.t_real)
            virt.append(self.t_real)
        if self.kind not in ("v2r", "r2v", "swap", "identity"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        new.real[n] = np.sort(np.array(real, dtype=float))
        new.virtual[n] = np.sort(np.array(virt, dtype=float))
        return new


def _combine(fin: float, dz: int) -> float:
    if dz > 0:
        return -math.inf
    if dz < 0:
        return math.inf
    return fin


def _log_parts(lam) -> tuple[float, int]:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    pos = lam > 0
    return float(np.log(lam[pos]).sum()), int((~pos).sum())


def _real_factor(arch, sp, ev, state, l, k) -> tuple[float, int]:
    t = real_events(ev, state, (l, k))
    if l == arch.L:
        return len(t) * math.log(sp.mu[k]) - sp.mu[k] * ev.T, 0
    fin, z = _log_parts(real_intensity(arch, sp, ev, state, l, k, t)) if len(t) else (0.0, 0)
    return fin - real_compensator(arch, sp, ev, state, l, k), z


def _virtual_factor(arch, sp, ev, state, l, k) -> tuple[float, int]:
    t = state.virtual[(l, k)]
    fin, z = _log_parts(virtual_intensity(arch, sp, ev, state, l, k, t)) if len(t) else (0.0, 0)
    return fin - virtual_compensator(arch, sp, ev, state, l, k), z


def _affected_parts(arch, sp, ev, state, node) -> tuple[float, int]:
    l, k = node
    fin, z = 0.0, 0
    parts = [_real_factor(arch, sp, ev, state, l, k), _virtual_factor(arch, sp, ev, state, l, k)]
    parts += [_real_factor(arch, sp, ev, state, l - 1, i) for i in range(arch.K[l - 1])]
    if l + 1 <= arch.L:
        parts += [_virtual_factor(arch, sp, ev, state, l + 1, i) for i in range(arch.K[l + 1])]
    for f, n in parts:
        fin += f
        z += n
    return fin, z


def affected_ratio(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
                   proposal: Proposal) -> float:
    """log P of a proposal, from exact re-evaluation of the factors it touches."""
    if proposal.kind == "identity":
        return 0.0
    f0, z0 = _affected_parts(arch, seq_params, evidence, state, proposal.node)
    f1, z1 = _affected_parts(arch, seq_params, evidence, proposal.apply(state), proposal.node)
    return _combine(f1 - f0, z1 - z0)


def _log_ratio_terms(old: float, new: float) -> tuple[float, int]:
    fin, dz = 0.0, 0
    if old > 0:
        fin -= math.log(old)
    else:
        dz -= 1
    if new > 0:
        fin += math.log(new)
    else:
        dz += 1
    return fin, dz


def _flip_parts(arch, sp, ev, state, l, k, t, to_real: bool) -> tuple[float, int]:
    if l < 1:
        raise ValueError("only hidden nodes carry proposals")
    sign = 1.0 if to_real else -1.0
    T = ev.T
    lam_t = real_intensity(arch, sp, ev, state, l, k, t)
    lamv_t = virtual_intensity(arch, sp, ev, state, l, k, t)
    if to_real and not lamv_t > 0:
        raise ValueError(f"virtual event at {t} has zero virtual intensity; inconsistent state")
    fin, dz = 0.0, 0
    f, z = _log_ratio_terms(lamv_t, lam_t) if to_real else _log_ratio_terms(lam_t, lamv_t)
    fin, dz = fin + f, dz + z
    # without t in the node's real set, for exact recomputation after removal
    reduced = None
    if not to_real:
        reduced = Proposal((l, k), "r2v", t_real=t).apply(state)

    for e in arch.child_edges((l, k)):
        theta = arch.real_edges[e]
        c = e[1]
        fin -= sign * kernel_mass(theta, T - t)
        for x in real_events(ev, state, c):
            phi = kernel_eval(theta, x - t)
            if phi == 0.0:
                continue
            old = real_intensity(arch, sp, ev, state, c[0], c[1], x)
            new = old + sign * phi
            if not to_real and new <= 1e-9 * old:
                new = real_intensity(arch, sp, ev, reduced, c[0], c[1], x)
            f, z = _log_ratio_terms(old, new)
            fin, dz = fin + f, dz + z

    for e in arch.driven_edges((l, k)):
        theta = arch.virtual_edges[e]
        u = e[1]
        fin -= sign * kernel_mass(theta, t)
        for y in state.virtual[u]:
            phi = kernel_eval(theta, t - y)
            if phi == 0.0:
                continue
            old = virtual_intensity(arch, sp, ev, state, u[0], u[1], y)
            new = old + sign * phi
            if not to_real and new <= 1e-9 * old:
                new = virtual_intensity(arch, sp, ev, reduced, u[0], u[1], y)
            f, z = _log_ratio_terms(old, new)
            fin, dz = fin + f, dz + z
    return fin, dz


def ratio_flip_v2r(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
                   l: int, k: int, t: float) -> float:
    """Closed-form log ratio for turning the virtual event ``t`` of ``(l, k)`` into a real one."""
    return _combine(*_flip_parts(arch, seq_params, evidence, state, l, k, t, True))


def ratio_flip_r2v(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
                   l: int, k: int, t: float) -> float:
    """Closed-form log ratio for turning the real event ``t`` of ``(l, k)`` into a virtual one."""
    return _combine(*_flip_parts(arch, seq_params, evidence, state, l, k, t, False))


def ratio_swap(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
               l: int, k: int, t_real: float, t_virtual: float) -> float:
    """Swap as a virtual-to-real flip followed by a real-to-virtual flip on the intermediate state."""
    f1, z1 = _flip_parts(arch, seq_params, evidence, state, l, k, t_virtual, True)
    mid = Proposal((l, k), "v2r", t_virtual=t_virtual).apply(state)
    f2, z2 = _flip_parts(arch, seq_params, evidence, mid, l, k, t_real, False)
    return _combine(f1 + f2, z1 + z2)


def pcif(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
         l: int, k: int, t: float) -> float:
    """Papangelou intensity of the posterior real process of ``(l, k)`` at ``t``."""
    if l < 1:
        raise ValueError("the posterior intensity is defined for hidden nodes")
    T = evidence.T
    log_val = 0.0
    lam = real_intensity(arch, seq_params, evidence, state, l, k, t)
    if lam <= 0:
        return 0.0
    log_val += math.log(lam)
    for e in arch.child_edges((l, k)):
        theta = arch.real_edges[e]
        c = e[1]
        log_val -= kernel_mass(theta, T - t)
        for x in real_events(evidence, state, c):
            phi = kernel_eval(theta, x - t)
            if phi == 0.0:
                continue
            old = real_intensity(arch, seq_params, evidence, state, c[0], c[1], x)
            if old <= 0:
                return math.inf
            log_val += math.log1p(phi / old)
    return math.exp(log_val)


# -- chains ------------------------------------------------------------------------


class Chain:
    """One Markov chain over the hidden events of one sequence.

    Owns a chain kernel; parameters can be swapped between runs without
    losing the current state (warm starts).
    """

    def __init__(self, arch: Architecture, seq_params: SequenceParams, evidence: EventSequence,
                 state: LatentState, rng: np.random.Generator, backend: str | None = None):
        self.arch = arch
        self.seq_params = seq_params
        self.evidence = evidence
        self.include_terminal = state.include_terminal_event
        self._ids = node_ids(arch)
        self._hidden_ids = [self._ids[n] for n in arch.hidden_nodes()]
        self._top_ids = [self._ids[n] for n in arch.top_nodes()]
        flat = flatten(arch, seq_params, evidence.T, self.include_terminal)
        real, virt = event_lists(arch, evidence, state)
        self.kernel = _backend.kernel_class(backend)(flat, real, virt, rng)
        self.stats = ChainStats()

    def set_params(self, arch: Architecture | None = None, seq_params: SequenceParams | None = None):
        if arch is not None:
            self.arch = arch
        if seq_params is not None:
            self.seq_params = seq_params
        self.kernel.set_model(flatten(self.arch, self.seq_params, self.evidence.T, self.include_terminal))

    def run(self, n_steps: int, move_probs: MoveProbs = MoveProbs()):
        if n_steps <= 0:
            return
        self.kernel.reset_counts()
        self.kernel.run(int(n_steps), move_probs.p_resample, move_probs.p_flip)
        self.stats.add(*self.kernel.counts())

    def state(self) -> LatentState:
        st = LatentState.empty(self.arch, self.include_terminal)
        for n in self.arch.hidden_nodes():
            i = self._ids[n]
            st.real[n] = self.kernel.real_events(i)
            st.virtual[n] = self.kernel.virtual_events(i)
        return st

    def top_counts(self) -> np.ndarray:
        return np.array([self.kernel.real_count(i) for i in self._top_ids], dtype=float)

    def real_loglik(self) -> float:
        return float(self.kernel.real_loglik_nodes().sum())

    def evidence_loglik(self) -> float:
        ll = self.kernel.real_loglik_nodes()
        return float(sum(ll[self._ids[(0, k)]] for k in range(self.arch.K[0])))

    def complete_loglik(self) -> float:
        return float(self.kernel.real_loglik_nodes().sum() + self.kernel.virtual_loglik_nodes().sum())

    def burn_in_until_valid(self, n_steps: int, move_probs: MoveProbs = MoveProbs(), max_rounds: int = 50) -> bool:
        """Run ``n_steps`` at a time until the real log-likelihood is finite.

        Fresh chains start with no hidden real events, which usually leaves
        observed events with zero intensity.
        """
        for _ in range(max_rounds):
            if math.isfinite(self.real_loglik()):
                return True
            self.run(max(n_steps, 1), move_probs)
        return math.isfinite(self.real_loglik())

    def collect(self, config: ChainConfig, visit, record_trace: bool = False):
        """Burn in, then call ``visit(self)`` at each of the ``n_samples`` retained states."""
        self.run(config.burn_in, config.move_probs)
        for _ in range(config.n_samples):
            self.run(config.thin, config.move_probs)
            if record_trace:
                self.stats.trace.append(self.complete_loglik())
            visit(self)


def step(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
         config: ChainConfig, rng: np.random.Generator, stats: ChainStats | None = None) -> LatentState:
    """Single transition from ``state``."""
    chain = Chain(arch, seq_params, evidence, state, rng)
    chain.run(1, config.move_probs)
    if stats is not None:
        stats.add(chain.stats.proposed, chain.stats.accepted, chain.stats.noop)
    return chain.state()


def run_chain(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, init: LatentState,
              config: ChainConfig, rng: np.random.Generator, backend: str | None = None
              ) -> tuple[list[LatentState], ChainStats]:
    """Retained samples and statistics; the last sample is the final state of the chain."""
    chain = Chain(arch, seq_params, evidence, init, rng, backend)
    samples: list[LatentState] = []
    chain.collect(config, lambda c: samples.append(c.state()), record_trace=True)
    return samples, chain.stats
