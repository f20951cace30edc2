"""Deep Neyman-Scott process: parameters, latent state and closed-form likelihoods.

Nodes are addressed as ``(layer, k)`` with 0-indexed ``k``.  Layer 0 holds the
observed event types, layers ``1..L`` the hidden processes, and layer ``L`` is
the homogeneous top layer.  A real edge ``((l + 1, i), (l, k))`` carries the
kernel through which events of the parent excite the child; a virtual edge
``((l - 1, i), (l, k))`` carries the time-reversed kernel through which real
events one layer below drive the virtual (proposal) process of ``(l, k)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Union

import numpy as np

from .special import reg_lower_inc_gamma

Node = tuple[int, int]
Edge = tuple[Node, Node]

_SOFTPLUS_LINEAR = 35.0


def softplus(u: float) -> float:
    if u > _SOFTPLUS_LINEAR:
        return u
    return math.log1p(math.exp(u))


def softplus_inv(x: float) -> float:
    if not x > 0:
        raise ValueError(f"softplus_inv needs a positive value, got {x!r}")
    if x > _SOFTPLUS_LINEAR:
        return x
    return math.log(math.expm1(x))


def sigmoid(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@dataclass(frozen=True)
class KernelParams:
    """Gamma kernel ``p * Gamma(alpha, rate=beta)`` stored in softplus coordinates."""

    u_p: float
    u_alpha: float
    u_beta: float

    @classmethod
    def from_natural(cls, p: float, alpha: float, beta: float) -> "KernelParams":
        return cls(softplus_inv(p), softplus_inv(alpha), softplus_inv(beta))

    @property
    def p(self) -> float:
        return softplus(self.u_p)

    @property
    def alpha(self) -> float:
        return softplus(self.u_alpha)

    @property
    def beta(self) -> float:
        return softplus(self.u_beta)

    def natural(self) -> tuple[float, float, float]:
        return self.p, self.alpha, self.beta

    def unconstrained(self) -> np.ndarray:
        return np.array([self.u_p, self.u_alpha, self.u_beta])

    def chain_rule(self) -> np.ndarray:
        """d(natural)/d(unconstrained) for (p, alpha, beta)."""
        return np.array([sigmoid(self.u_p), sigmoid(self.u_alpha), sigmoid(self.u_beta)])

    def log_norm(self) -> float:
        p, a, b = self.natural()
        return math.log(p) + a * math.log(b) - math.lgamma(a)


def kernel_eval(theta: KernelParams, x):
    """phi(x) = p beta^alpha x^(alpha-1) e^(-beta x) / Gamma(alpha) for x > 0, else 0."""
    p, a, b = theta.natural()
    ln = theta.log_norm()
    if np.ndim(x) == 0:
        x = float(x)
        if not x > 0:
            return 0.0
        return math.exp(ln + (a - 1.0) * math.log(x) - b * x)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = np.exp(ln + (a - 1.0) * np.log(xp) - b * xp)
    return out


def kernel_mass(theta: KernelParams, x):
    """Phi(x) = integral of phi over (0, x]."""
    p, a, b = theta.natural()
    lga = math.lgamma(a)
    if np.ndim(x) == 0:
        x = float(x)
        if x < 0:
            raise ValueError(f"kernel_mass needs x >= 0, got {x!r}")
        return p * reg_lower_inc_gamma(a, b * x, lgamma_a=lga)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("kernel_mass needs x >= 0")
    return np.array([p * reg_lower_inc_gamma(a, b * xi, lgamma_a=lga) for xi in x.ravel()]).reshape(x.shape)


InitSpec = Union[KernelParams, tuple, Callable[[Edge], "KernelParams | tuple"]]


@dataclass(frozen=True)
class Architecture:
    K: tuple[int, ...]
    real_edges: Mapping[Edge, KernelParams]
    virtual_edges: Mapping[Edge, KernelParams]
    wiring: str = "explicit"
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        K = tuple(int(k) for k in self.K)
        object.__setattr__(self, "K", K)
        if len(K) < 2:
            raise ValueError("need at least one hidden layer (len(K) >= 2)")
        if any(k < 1 for k in K):
            raise ValueError("every layer needs at least one node")
        L = len(K) - 1
        for (par, ch) in self.real_edges:
            self._check_node(par)
            self._check_node(ch)
            if par[0] != ch[0] + 1 or ch[0] > L - 1:
                raise ValueError(f"real edge {par}->{ch} must go from layer l+1 to l")
        for (drv, tgt) in self.virtual_edges:
            self._check_node(drv)
            self._check_node(tgt)
            if tgt[0] != drv[0] + 1 or not 1 <= tgt[0] <= L:
                raise ValueError(f"virtual edge {drv}->{tgt} must go from layer l-1 to l, 1 <= l <= L")

        real_keys = tuple(sorted(self.real_edges))
        virt_keys = tuple(sorted(self.virtual_edges))
        idx = {
            "real_keys": real_keys,
            "virtual_keys": virt_keys,
            "parents": {n: [] for n in self.nodes()},
            "children": {n: [] for n in self.nodes()},
            "drivers": {n: [] for n in self.nodes()},
            "driven": {n: [] for n in self.nodes()},
        }
        for e in real_keys:
            idx["parents"][e[1]].append(e)
            idx["children"][e[0]].append(e)
        for e in virt_keys:
            idx["drivers"][e[1]].append(e)
            idx["driven"][e[0]].append(e)
        object.__setattr__(self, "_index", idx)

        unreachable = [n for n in self.hidden_nodes() if not self._reaches_evidence(n)]
        if unreachable:
            warnings.warn(f"hidden nodes not connected to the evidence: {unreachable}", stacklevel=3)

    def _check_node(self, n):
        l, k = n
        if not (0 <= l < len(self.K) and 0 <= k < self.K[l]):
            raise ValueError(f"node {n} outside layer bounds {self.K}")

    def _reaches_evidence(self, n):
        frontier = [n]
        seen = set()
        while frontier:
            m = frontier.pop()
            if m[0] == 0:
                return True
            if m in seen:
                continue
            seen.add(m)
            frontier.extend(e[1] for e in self._index["children"][m])
        return False

    @property
    def L(self) -> int:
        return len(self.K) - 1

    def nodes(self, layer: int | None = None) -> list[Node]:
        layers = range(len(self.K)) if layer is None else [layer]
        return [(l, k) for l in layers for k in range(self.K[l])]

    def hidden_nodes(self) -> list[Node]:
        return [(l, k) for l in range(1, len(self.K)) for k in range(self.K[l])]

    def top_nodes(self) -> list[Node]:
        return self.nodes(self.L)

    @property
    def real_keys(self) -> tuple[Edge, ...]:
        return self._index["real_keys"]

    @property
    def virtual_keys(self) -> tuple[Edge, ...]:
        return self._index["virtual_keys"]

    def parent_edges(self, n: Node) -> list[Edge]:
        return self._index["parents"][n]

    def child_edges(self, n: Node) -> list[Edge]:
        return self._index["children"][n]

    def driver_edges(self, n: Node) -> list[Edge]:
        """Virtual edges feeding the virtual process of ``n``."""
        return self._index["drivers"][n]

    def driven_edges(self, n: Node) -> list[Edge]:
        """Virtual edges whose driver is ``n``."""
        return self._index["driven"][n]

    def with_params(self, real=None, virtual=None) -> "Architecture":
        return replace(
            self,
            real_edges=dict(self.real_edges if real is None else real),
            virtual_edges=dict(self.virtual_edges if virtual is None else virtual),
        )

    def real_vector(self) -> np.ndarray:
        return np.array([self.real_edges[e].unconstrained() for e in self.real_keys]).reshape(-1, 3)

    def virtual_vector(self) -> np.ndarray:
        return np.array([self.virtual_edges[e].unconstrained() for e in self.virtual_keys]).reshape(-1, 3)

    def from_vectors(self, real: np.ndarray, virtual: np.ndarray) -> "Architecture":
        r = {e: KernelParams(*map(float, real[i])) for i, e in enumerate(self.real_keys)}
        v = {e: KernelParams(*map(float, virtual[i])) for i, e in enumerate(self.virtual_keys)}
        return self.with_params(r, v)


def _resolve(init: InitSpec, edge: Edge) -> KernelParams:
    theta = init(edge) if callable(init) else init
    # plain (p, alpha, beta) tuples are taken on the natural scale
    return theta if isinstance(theta, KernelParams) else KernelParams.from_natural(*theta)


def _mirror(real_edges: Iterable[Edge]) -> list[Edge]:
    return [(child, parent) for (parent, child) in real_edges]


def build_architecture(K, real_edges: Iterable[Edge], real_init: InitSpec, virtual_init: InitSpec | None = None,
                       wiring: str = "explicit") -> Architecture:
    """Architecture whose virtual edges mirror the real ones."""
    real_edges = list(real_edges)
    virtual_init = real_init if virtual_init is None else virtual_init
    return Architecture(
        K=tuple(K),
        real_edges={e: _resolve(real_init, e) for e in real_edges},
        virtual_edges={e: _resolve(virtual_init, e) for e in _mirror(real_edges)},
        wiring=wiring,
    )


def n_hidden_architecture(n: int, n_types: int, real_init: InitSpec, virtual_init: InitSpec | None = None) -> Architecture:
    """The ``n``-hidden wiring: one top node over per-type chains of hidden nodes.

    For ``n = 1`` the single hidden node feeds every observed type.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        K = (n_types, 1)
        edges = [((1, 0), (0, k)) for k in range(n_types)]
    else:
        K = (n_types,) * n + (1,)
        edges = [((l + 1, k), (l, k)) for l in range(n - 1) for k in range(n_types)]
        edges += [((n, 0), (n - 1, k)) for k in range(n_types)]
    return build_architecture(K, edges, real_init, virtual_init, wiring=f"{n}-hidden")


def fully_connected_architecture(K, real_init: InitSpec, virtual_init: InitSpec | None = None) -> Architecture:
    K = tuple(K)
    edges = [((l + 1, i), (l, k)) for l in range(len(K) - 1) for i in range(K[l + 1]) for k in range(K[l])]
    return build_architecture(K, edges, real_init, virtual_init, wiring="fully-connected")


@dataclass
class SequenceParams:
    """Per-sequence base rates: ``mu`` for top nodes, ``mu_virtual`` for every hidden node."""

    mu: tuple[float, ...]
    mu_virtual: dict[Node, float]

    def __post_init__(self):
        self.mu = tuple(float(m) for m in self.mu)
        if any(not m > 0 for m in self.mu):
            raise ValueError("top-layer base rates must be > 0")
        if any(not v >= 0 for v in self.mu_virtual.values()):
            raise ValueError("virtual base rates must be >= 0")

    @classmethod
    def constant(cls, arch: Architecture, mu: float, mu_virtual: float) -> "SequenceParams":
        return cls(mu=(mu,) * arch.K[-1], mu_virtual={n: mu_virtual for n in arch.hidden_nodes()})

    def copy(self) -> "SequenceParams":
        return SequenceParams(self.mu, dict(self.mu_virtual))


@dataclass
class EventSequence:
    """One observed sequence on the window ``[0, T]``; ``events[k]`` are the times of type ``k``."""

    T: float
    events: tuple[np.ndarray, ...]

    def __post_init__(self):
        self.T = float(self.T)
        evs = []
        for k, ev in enumerate(self.events):
            ev = np.asarray(ev, dtype=float).ravel()
            if ev.size and (ev[0] < 0 or ev[-1] > self.T):
                raise ValueError(f"type {k} has events outside [0, {self.T}]")
            if np.any(np.diff(ev) <= 0):
                raise ValueError(f"type {k} events are not strictly increasing")
            evs.append(ev)
        self.events = tuple(evs)

    @property
    def n_types(self) -> int:
        return len(self.events)

    @property
    def n_events(self) -> int:
        return int(sum(len(e) for e in self.events))

    def merged(self) -> tuple[np.ndarray, np.ndarray]:
        """All events in time order as (times, 0-indexed types)."""
        times = np.concatenate(self.events) if self.events else np.empty(0)
        types = np.concatenate([np.full(len(e), k) for k, e in enumerate(self.events)]).astype(int)
        order = np.lexsort((types, times))
        return times[order], types[order]

    def truncated(self, t_end: float, inclusive: bool = True) -> "EventSequence":
        keep = (lambda e: e[e <= t_end]) if inclusive else (lambda e: e[e < t_end])
        return EventSequence(t_end, tuple(keep(e) for e in self.events))


@dataclass
class LatentState:
    """Real and virtual events of every hidden node for one sequence."""

    real: dict[Node, np.ndarray]
    virtual: dict[Node, np.ndarray]
    include_terminal_event: bool = True

    @classmethod
    def empty(cls, arch: Architecture, include_terminal_event: bool = True) -> "LatentState":
        return cls(
            real={n: np.empty(0) for n in arch.hidden_nodes()},
            virtual={n: np.empty(0) for n in arch.hidden_nodes()},
            include_terminal_event=include_terminal_event,
        )

    def copy(self) -> "LatentState":
        return LatentState(
            {n: v.copy() for n, v in self.real.items()},
            {n: v.copy() for n, v in self.virtual.items()},
            self.include_terminal_event,
        )

    def hidden_count(self) -> int:
        return int(sum(len(v) for v in self.real.values()))

    def hidden_time_sum(self) -> float:
        return float(sum(v.sum() for v in self.real.values()))


def real_events(evidence: EventSequence, state: LatentState, node: Node) -> np.ndarray:
    if node[0] == 0:
        return evidence.events[node[1]]
    return state.real[node]


def driver_events(evidence: EventSequence, state: LatentState, node: Node) -> np.ndarray:
    """Real events of ``node`` as seen by the virtual processes above it (terminal event included)."""
    ev = real_events(evidence, state, node)
    if node[0] >= 1 and state.include_terminal_event:
        return np.append(ev, evidence.T)
    return ev


def _check_layer(arch, l, k, lo):
    if not (lo <= l <= arch.L and 0 <= k < arch.K[l]):
        raise ValueError(f"invalid node ({l}, {k})")


def real_intensity(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
                   l: int, k: int, t):
    """Intensity of the real process ``(l, k)`` given the layer above."""
    _check_layer(arch, l, k, 0)
    if l == arch.L:
        mu = seq_params.mu[k]
        return mu if np.ndim(t) == 0 else np.full(np.shape(t), mu)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    lam = np.zeros_like(t_arr)
    for e in arch.parent_edges((l, k)):
        src = state.real[e[0]]
        if src.size:
            lam += kernel_eval(arch.real_edges[e], t_arr[:, None] - src[None, :]).sum(axis=1)
    return float(lam[0]) if np.ndim(t) == 0 else lam


def virtual_intensity(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
                      l: int, k: int, t):
    """Intensity of the virtual process ``(l, k)`` given real events of layer ``l - 1``."""
    if l == 0:
        raise ValueError("the evidence layer has no virtual process")
    _check_layer(arch, l, k, 1)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    lam = np.full_like(t_arr, seq_params.mu_virtual.get((l, k), 0.0))
    for e in arch.driver_edges((l, k)):
        src = driver_events(evidence, state, e[0])
        if src.size:
            lam += kernel_eval(arch.virtual_edges[e], src[None, :] - t_arr[:, None]).sum(axis=1)
    return float(lam[0]) if np.ndim(t) == 0 else lam


def _sum_log(lam: np.ndarray) -> float:
    if lam.size == 0:
        return 0.0
    if np.any(lam <= 0):
        return -math.inf
    return float(np.log(lam).sum())


def real_compensator(arch, seq_params, evidence, state, l, k) -> float:
    T = evidence.T
    if l == arch.L:
        return seq_params.mu[k] * T
    total = 0.0
    for e in arch.parent_edges((l, k)):
        src = state.real[e[0]]
        if src.size:
            total += float(np.sum(kernel_mass(arch.real_edges[e], T - src)))
    return total


def virtual_compensator(arch, seq_params, evidence, state, l, k) -> float:
    total = seq_params.mu_virtual.get((l, k), 0.0) * evidence.T
    for e in arch.driver_edges((l, k)):
        src = driver_events(evidence, state, e[0])
        if src.size:
            total += float(np.sum(kernel_mass(arch.virtual_edges[e], src)))
    return total


def node_loglik_real(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
                     l: int, k: int) -> float:
    _check_layer(arch, l, k, 0)
    ev = real_events(evidence, state, (l, k))
    comp = real_compensator(arch, seq_params, evidence, state, l, k)
    if l == arch.L:
        mu = seq_params.mu[k]
        return len(ev) * math.log(mu) - comp
    lam = real_intensity(arch, seq_params, evidence, state, l, k, ev)
    return _sum_log(lam) - comp


def node_loglik_virtual(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, state: LatentState,
                        l: int, k: int, events: np.ndarray | None = None) -> float:
    """Virtual-process log-likelihood of ``events`` (defaults to the node's virtual events)."""
    if l == 0:
        raise ValueError("the evidence layer has no virtual process")
    ev = state.virtual[(l, k)] if events is None else events
    lam = virtual_intensity(arch, seq_params, evidence, state, l, k, ev)
    return _sum_log(np.atleast_1d(lam)) - virtual_compensator(arch, seq_params, evidence, state, l, k)


def evidence_loglik(arch, seq_params, evidence, state) -> float:
    return sum(node_loglik_real(arch, seq_params, evidence, state, 0, k) for k in range(arch.K[0]))


def real_loglik(arch, seq_params, evidence, state) -> float:
    """Log-likelihood of all real processes, the MCEM objective for one sample."""
    return sum(node_loglik_real(arch, seq_params, evidence, state, l, k) for (l, k) in arch.nodes())


def virtual_loglik(arch, seq_params, evidence, state) -> float:
    return sum(node_loglik_virtual(arch, seq_params, evidence, state, l, k) for (l, k) in arch.hidden_nodes())


def complete_loglik(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence,
                    state: LatentState) -> float:
    """Joint log-density of evidence, hidden real events and virtual events."""
    return real_loglik(arch, seq_params, evidence, state) + virtual_loglik(arch, seq_params, evidence, state)
