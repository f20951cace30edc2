"""Array form of a model instance, the input format of the chain kernels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Architecture, EventSequence, LatentState, SequenceParams


@dataclass
class FlatModel:
    T: float
    include_terminal: bool
    layer: np.ndarray        # (n_nodes,) int
    hidden: np.ndarray       # node ids with layer >= 1
    is_top: np.ndarray       # (n_nodes,) int
    mu: np.ndarray           # (n_nodes,) top-layer rates, 0 elsewhere
    mu_virtual: np.ndarray   # (n_nodes,) virtual base rates, 0 on layer 0
    e_parent: np.ndarray     # real edges
    e_child: np.ndarray
    e_par: np.ndarray        # (n_e, 5): p, alpha, beta, log_norm, lgamma(alpha)
    v_driver: np.ndarray     # virtual edges
    v_target: np.ndarray
    v_par: np.ndarray        # (n_v, 5)

    @property
    def n_nodes(self) -> int:
        return len(self.layer)


def node_ids(arch: Architecture) -> dict:
    return {n: i for i, n in enumerate(arch.nodes())}


def _par_rows(params) -> np.ndarray:
    rows = []
    for th in params:
        p, a, b = th.natural()
        lga = math.lgamma(a)
        rows.append((p, a, b, math.log(p) + a * math.log(b) - lga, lga))
    return np.array(rows, dtype=float).reshape(-1, 5)


def flatten(arch: Architecture, seq_params: SequenceParams, T: float, include_terminal: bool = True) -> FlatModel:
    ids = node_ids(arch)
    nodes = arch.nodes()
    layer = np.array([n[0] for n in nodes], dtype=np.int64)
    mu = np.zeros(len(nodes))
    muv = np.zeros(len(nodes))
    for k, m in enumerate(seq_params.mu):
        mu[ids[(arch.L, k)]] = m
    for n, v in seq_params.mu_virtual.items():
        muv[ids[n]] = v
    return FlatModel(
        T=float(T),
        include_terminal=bool(include_terminal),
        layer=layer,
        hidden=np.array([ids[n] for n in arch.hidden_nodes()], dtype=np.int64),
        is_top=(layer == arch.L).astype(np.int64),
        mu=mu,
        mu_virtual=muv,
        e_parent=np.array([ids[e[0]] for e in arch.real_keys], dtype=np.int64),
        e_child=np.array([ids[e[1]] for e in arch.real_keys], dtype=np.int64),
        e_par=_par_rows(arch.real_edges[e] for e in arch.real_keys),
        v_driver=np.array([ids[e[0]] for e in arch.virtual_keys], dtype=np.int64),
        v_target=np.array([ids[e[1]] for e in arch.virtual_keys], dtype=np.int64),
        v_par=_par_rows(arch.virtual_edges[e] for e in arch.virtual_keys),
    )


def event_lists(arch: Architecture, evidence: EventSequence, state: LatentState):
    """Per-node real and virtual event arrays in node-id order."""
    real, virt = [], []
    for n in arch.nodes():
        if n[0] == 0:
            real.append(np.asarray(evidence.events[n[1]], dtype=float))
            virt.append(np.empty(0))
        else:
            real.append(np.asarray(state.real[n], dtype=float))
            virt.append(np.asarray(state.virtual[n], dtype=float))
    return real, virt
