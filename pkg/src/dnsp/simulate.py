"""Ancestral sampling of the generative model and exact sampling of virtual processes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    Architecture,
    EventSequence,
    KernelParams,
    LatentState,
    SequenceParams,
    driver_events,
)
from .special import inv_reg_lower_inc_gamma, reg_lower_inc_gamma


@dataclass(frozen=True)
class RngStream:
    """Reproducible independent random streams keyed by ``(seed, stream_id, *subkeys)``."""

    seed: int
    stream_id: int = 0

    def generator(self, *subkeys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *subkeys))
        return np.random.Generator(np.random.PCG64(ss))


def sample_hpp(rate: float, T: float, rng: np.random.Generator, start: float = 0.0) -> np.ndarray:
    if rate < 0 or math.isnan(rate):
        raise ValueError(f"rate must be >= 0, got {rate!r}")
    n = rng.poisson(rate * T) if rate > 0 else 0
    return np.sort(start + rng.random(n) * T)


def truncated_gamma_offsets(theta: KernelParams, lo: float, hi: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from the normalized kernel restricted to ``(lo, hi]``, by inversion."""
    _, a, b = theta.natural()
    lga = math.lgamma(a)
    p_lo = reg_lower_inc_gamma(a, b * lo, lgamma_a=lga) if lo > 0 else 0.0
    p_hi = reg_lower_inc_gamma(a, b * hi, lgamma_a=lga) if math.isfinite(hi) else 1.0
    u = rng.random(n)
    out = np.empty(n)
    for i in range(n):
        q = p_lo + u[i] * (p_hi - p_lo)
        out[i] = inv_reg_lower_inc_gamma(a, min(q, np.nextafter(1.0, 0.0)), lgamma_a=lga) / b
    return out


def sample_children(theta: KernelParams, t_parent: float, T: float, rng: np.random.Generator) -> np.ndarray:
    """Offspring of one parent event inside ``(t_parent, T]``."""
    if t_parent > T:
        raise ValueError("parent event lies after the window end")
    d = T - t_parent
    if d <= 0:
        return np.empty(0)
    p, a, b = theta.natural()
    mass = p * reg_lower_inc_gamma(a, b * d)
    n = rng.poisson(mass)
    return np.sort(t_parent + truncated_gamma_offsets(theta, 0.0, d, n, rng))


def forward_sample(arch: Architecture, seq_params: SequenceParams, T: float,
                   rng: np.random.Generator) -> tuple[LatentState, EventSequence]:
    """Draw every layer top-down; returns the hidden real events and the evidence."""
    events: dict = {}
    for k in range(arch.K[-1]):
        events[(arch.L, k)] = sample_hpp(seq_params.mu[k], T, rng)
    for l in range(arch.L - 1, -1, -1):
        for k in range(arch.K[l]):
            parts = [np.empty(0)]
            for e in arch.parent_edges((l, k)):
                theta = arch.real_edges[e]
                for tp in events[e[0]]:
                    parts.append(sample_children(theta, tp, T, rng))
            events[(l, k)] = np.sort(np.concatenate(parts))
    state = LatentState(
        real={n: events[n] for n in arch.hidden_nodes()},
        virtual={n: np.empty(0) for n in arch.hidden_nodes()},
    )
    evidence = EventSequence(T, tuple(events[(0, k)] for k in range(arch.K[0])))
    return state, evidence


def sample_vpp(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
               l: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draw from the virtual process of ``(l, k)``.

    Superposes the base-rate HPP with one time-reversed cluster per real event
    of each driving node, each cluster truncated to ``[0, t_driver)``.
    """
    if l == 0:
        raise ValueError("the evidence layer has no virtual process")
    T = evidence.T
    parts = [sample_hpp(seq_params.mu_virtual.get((l, k), 0.0), T, rng)]
    for e in arch.driver_edges((l, k)):
        theta = arch.virtual_edges[e]
        p, a, b = theta.natural()
        for tc in driver_events(evidence, state, e[0]):
            n = rng.poisson(p * reg_lower_inc_gamma(a, b * tc))
            if n:
                parts.append(tc - truncated_gamma_offsets(theta, 0.0, tc, n, rng))
    return np.sort(np.concatenate(parts))


def initial_state(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, rng: np.random.Generator,
                  include_terminal_event: bool = True) -> LatentState:
    """Fresh chain state: no hidden real events, virtual events drawn given that."""
    state = LatentState.empty(arch, include_terminal_event)
    for (l, k) in arch.hidden_nodes():
        state.virtual[(l, k)] = sample_vpp(arch, seq_params, evidence, state, l, k, rng)
    return state


def first_event_after(arch: Architecture, seq_params: SequenceParams, real: dict, t_last: float, horizon: float,
                      rng: np.random.Generator, chunk: float) -> "tuple[float, int] | None":
    """First evidence event after ``t_last`` when the model is run forward from a given past.

    ``real`` maps every hidden node to its real events on ``[0, t_last]``.  Time
    is advanced in windows of length ``chunk``; inside a window layers are
    generated top-down, so each layer sees every parent event up to the window
    end.  Offspring counts of disjoint windows are independent Poisson
    variables, which makes the continuation exact.  Returns ``None`` when
    nothing is observed before ``t_last + horizon``.
    """
    events = {n: list(np.asarray(real[n], dtype=float)) for n in arch.hidden_nodes()}
    # parents whose remaining offspring mass is negligible are dropped from the scan
    live = {n: list(events[n]) for n in arch.hidden_nodes()}
    a = t_last
    end = t_last + horizon
    while a < end:
        b = min(a + chunk, end)
        for k in range(arch.K[-1]):
            new = a + rng.random(rng.poisson(seq_params.mu[k] * (b - a))) * (b - a) if seq_params.mu[k] > 0 else []
            events[(arch.L, k)].extend(new)
            live[(arch.L, k)].extend(new)
        for l in range(arch.L - 1, -1, -1):
            found = []
            for k in range(arch.K[l]):
                born = []
                for e in arch.parent_edges((l, k)):
                    theta = arch.real_edges[e]
                    p, al, be = theta.natural()
                    lga = math.lgamma(al)
                    keep = []
                    for s in live[e[0]]:
                        lo = max(a - s, 0.0)
                        hi = b - s
                        if hi <= 0:
                            keep.append(s)
                            continue
                        p_lo = reg_lower_inc_gamma(al, be * lo, lgamma_a=lga) if lo > 0 else 0.0
                        if p * (1.0 - p_lo) < 1e-12:
                            continue
                        keep.append(s)
                        mass = p * (reg_lower_inc_gamma(al, be * hi, lgamma_a=lga) - p_lo)
                        m = rng.poisson(mass) if mass > 0 else 0
                        if m:
                            born.extend(s + truncated_gamma_offsets(theta, lo, hi, m, rng))
                    live[e[0]] = keep
                if l == 0:
                    if born:
                        found.append((min(born), k))
                else:
                    events[(l, k)].extend(born)
                    live[(l, k)].extend(born)
            if l == 0 and found:
                t, k = min(found)
                return float(t), int(k)
        a = b
    return None
