"""Monte Carlo EM for kernel parameters and per-sequence base rates.

Each iteration runs one warm-started chain per sequence, sets the top-layer
rates to their closed-form maximizer, takes an Adam step on the shared real
kernels, and tunes the virtual processes (per-sequence virtual base rates and
shared virtual kernels) by treating the sampled real events as draws from
them.  Shape parameters are differentiated numerically with central
differences; everything else in closed form.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mcmc import Chain, ChainConfig
from .model import (
    Architecture,
    EventSequence,
    KernelParams,
    LatentState,
    SequenceParams,
    driver_events,
    kernel_eval,
    n_hidden_architecture,
    node_loglik_virtual,
    real_events,
    real_intensity,
    real_loglik,
    softplus,
    softplus_inv,
    virtual_intensity,
)
from .simulate import initial_state
from .special import reg_lower_inc_gamma

log = logging.getLogger(__name__)

MU_FLOOR = 1e-8


class DivergenceError(ArithmeticError):
    """Non-finite objective or gradient; ``details`` names the sequence and node."""

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


@dataclass(frozen=True)
class MCEMConfig:
    r: float = 0.02
    r_tilde: float = 0.02
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    alpha_fd_step: float = 1e-4
    max_iters: int = 50
    loglik_tol: float = 1e-4
    chain: ChainConfig = field(default_factory=lambda: ChainConfig(burn_in=200, n_samples=16, thin=10))
    batch: int = 0
    warm_burn_in: int | None = None
    fit_virtual: bool = True

    def __post_init__(self):
        if not (self.r > 0 and self.r_tilde > 0):
            raise ValueError("step sizes must be positive")
        if not (self.adam_eps > 0 and self.alpha_fd_step > 0 and self.loglik_tol > 0):
            raise ValueError("tolerances must be positive")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.max_iters < 1 or self.batch < 0:
            raise ValueError("need max_iters >= 1 and batch >= 0")


def _softplus_slope(value: float) -> float:
    """d softplus(u)/du expressed through the value softplus(u)."""
    return -math.expm1(-value)


@dataclass
class GradAccum:
    """Gradient sums in unconstrained coordinates.

    ``real`` and ``virtual`` are ``(n_edges, 3)`` arrays in the architecture's
    edge order, columns (p, alpha, beta); ``mu_virtual`` maps hidden nodes to
    the derivative with respect to their unconstrained virtual base rate.
    """

    real: np.ndarray
    virtual: np.ndarray
    mu_virtual: dict
    n_samples: int = 0
    valid: bool = True

    @classmethod
    def zeros(cls, arch: Architecture) -> "GradAccum":
        return cls(np.zeros((len(arch.real_keys), 3)), np.zeros((len(arch.virtual_keys), 3)),
                   {n: 0.0 for n in arch.hidden_nodes()})

    def __iadd__(self, other: "GradAccum"):
        if other.valid:
            self.real += other.real
            self.virtual += other.virtual
            for n, v in other.mu_virtual.items():
                self.mu_virtual[n] = self.mu_virtual.get(n, 0.0) + v
            self.n_samples += other.n_samples
        return self

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.real)) and np.all(np.isfinite(self.virtual))
                    and all(math.isfinite(v) for v in self.mu_virtual.values()))


def _chain_matrix(params: list[KernelParams]) -> np.ndarray:
    return np.array([th.chain_rule() for th in params]).reshape(-1, 3)


def _invalid(arch) -> GradAccum:
    g = GradAccum.zeros(arch)
    g.valid = False
    return g


def _shift_alpha(theta: KernelParams, h: float) -> KernelParams:
    p, a, b = theta.natural()
    return KernelParams.from_natural(p, a + h, b)


def grad_real(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, sample: LatentState,
              alpha_fd_step: float = 1e-4) -> GradAccum:
    """Gradient of the real log-likelihood of one sample with respect to the real kernels."""
    T = evidence.T
    g = np.zeros((len(arch.real_keys), 3))
    for i, e in enumerate(arch.real_keys):
        theta = arch.real_edges[e]
        p, a, b = theta.natural()
        src = real_events(evidence, sample, e[0])
        x = real_events(evidence, sample, e[1])
        if len(x):
            lam = real_intensity(arch, seq_params, evidence, sample, e[1][0], e[1][1], x)
            if np.any(lam <= 0):
                return _invalid(arch)
            d = x[:, None] - src[None, :]
            phi = kernel_eval(theta, d)
            g[i, 0] += float((phi.sum(axis=1) / p / lam).sum())
            g[i, 2] += float(((phi * np.where(d > 0, a / b - d, 0.0)).sum(axis=1) / lam).sum())
        spans = T - src
        g[i, 0] -= sum(reg_lower_inc_gamma(a, b * s) for s in spans if s > 0)
        g[i, 2] -= float(sum(s * kernel_eval(theta, s) / b for s in spans))

        h = alpha_fd_step * a
        up = arch.with_params(real={**arch.real_edges, e: _shift_alpha(theta, h)})
        dn = arch.with_params(real={**arch.real_edges, e: _shift_alpha(theta, -h)})
        fu = real_loglik(up, seq_params, evidence, sample)
        fd = real_loglik(dn, seq_params, evidence, sample)
        if not (math.isfinite(fu) and math.isfinite(fd)):
            return _invalid(arch)
        g[i, 1] = (fu - fd) / (2 * h)
    chain = _chain_matrix([arch.real_edges[e] for e in arch.real_keys])
    return GradAccum(g * chain, np.zeros((len(arch.virtual_keys), 3)), {}, 1)


def virtual_objective(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence,
                      sample: LatentState) -> float:
    """Virtual log-likelihood of the sample's real events, the objective for the virtual parameters."""
    return sum(node_loglik_virtual(arch, seq_params, evidence, sample, l, k, events=sample.real[(l, k)])
               for (l, k) in arch.hidden_nodes())


def grad_virtual(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence, sample: LatentState,
                 alpha_fd_step: float = 1e-4) -> GradAccum:
    """Gradient of the virtual objective with respect to virtual kernels and virtual base rates."""
    T = evidence.T
    gv = np.zeros((len(arch.virtual_keys), 3))
    gm = {}
    lam_at = {}
    for n in arch.hidden_nodes():
        y = sample.real[n]
        lam = np.atleast_1d(virtual_intensity(arch, seq_params, evidence, sample, n[0], n[1], y)) if len(y) else np.empty(0)
        if np.any(lam <= 0):
            return _invalid(arch)
        lam_at[n] = lam
        mu_v = seq_params.mu_virtual.get(n, 0.0)
        gm[n] = (float((1.0 / lam).sum()) - T) * _softplus_slope(mu_v)

    for i, e in enumerate(arch.virtual_keys):
        theta = arch.virtual_edges[e]
        p, a, b = theta.natural()
        src = driver_events(evidence, sample, e[0])
        y = sample.real[e[1]]
        if len(y):
            d = src[None, :] - y[:, None]
            phi = kernel_eval(theta, d)
            lam = lam_at[e[1]]
            gv[i, 0] += float((phi.sum(axis=1) / p / lam).sum())
            gv[i, 2] += float(((phi * np.where(d > 0, a / b - d, 0.0)).sum(axis=1) / lam).sum())
        gv[i, 0] -= sum(reg_lower_inc_gamma(a, b * s) for s in src if s > 0)
        gv[i, 2] -= float(sum(s * kernel_eval(theta, s) / b for s in src))

        h = alpha_fd_step * a
        up = arch.with_params(virtual={**arch.virtual_edges, e: _shift_alpha(theta, h)})
        dn = arch.with_params(virtual={**arch.virtual_edges, e: _shift_alpha(theta, -h)})
        fu = virtual_objective(up, seq_params, evidence, sample)
        fd = virtual_objective(dn, seq_params, evidence, sample)
        if not (math.isfinite(fu) and math.isfinite(fd)):
            return _invalid(arch)
        gv[i, 1] = (fu - fd) / (2 * h)
    chain = _chain_matrix([arch.virtual_edges[e] for e in arch.virtual_keys])
    return GradAccum(np.zeros((len(arch.real_keys), 3)), gv * chain, gm, 1)


def maximize_top_rates(samples, T: float, floor: float = MU_FLOOR) -> tuple[float, ...]:
    """Top-layer rates maximizing the sample-averaged top-layer log-likelihood: mean count / T.

    ``samples`` are :class:`LatentState` objects or per-sample arrays of top-node counts.
    """
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    if isinstance(samples[0], LatentState):
        top = max(l for (l, _) in samples[0].real)
        nodes = sorted(n for n in samples[0].real if n[0] == top)
        counts = np.array([[len(s.real[n]) for n in nodes] for s in samples], dtype=float)
    else:
        counts = np.asarray(samples, dtype=float).reshape(len(samples), -1)
    mean = counts.mean(axis=0)
    return tuple(float(m / T) if m > 0 else floor for m in mean)


class Adam:
    """Adam ascent on a flat parameter vector; moment estimates persist across calls."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return x + self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class FittedModel:
    arch: Architecture
    default_params: SequenceParams
    seq_params: list[SequenceParams] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)


# -- initialization heuristics ---------------------------------------------------------


def _n_paths(arch: Architecture) -> np.ndarray:
    """Number of directed paths from each top node down to the evidence layer."""
    counts = {n: 1.0 for n in arch.nodes(0)}
    for l in range(1, arch.L + 1):
        for n in arch.nodes(l):
            counts[n] = sum(counts[e[1]] for e in arch.child_edges(n))
    return np.array([counts[n] for n in arch.top_nodes()])


def initial_kernel(dataset: list[EventSequence]) -> KernelParams:
    """p = 1, alpha = 1 and kernel mean T / (1 + mean per-type count)."""
    T = float(np.mean([s.T for s in dataset]))
    per_type = float(np.mean([s.n_events / max(s.n_types, 1) for s in dataset]))
    return KernelParams.from_natural(1.0, 1.0, (1.0 + per_type) / T)


def initial_seq_params(arch: Architecture, seq: EventSequence) -> SequenceParams:
    paths = np.maximum(_n_paths(arch), 1.0)
    base = max(seq.n_events, 1) / arch.K[-1]
    mu = tuple(float(base / (seq.T * p)) for p in paths)
    mu_v = 0.5 * (1.0 + seq.n_events / arch.K[0]) / seq.T
    return SequenceParams(mu, {n: mu_v for n in arch.hidden_nodes()})


def default_architecture(dataset: list[EventSequence], n_hidden: int) -> Architecture:
    theta = initial_kernel(dataset)
    return n_hidden_architecture(n_hidden, dataset[0].n_types, theta, theta)


def population_params(arch: Architecture, seq_params: list[SequenceParams]) -> SequenceParams:
    mu = tuple(float(np.mean([sp.mu[k] for sp in seq_params])) for k in range(arch.K[-1]))
    mu_v = {n: float(np.mean([sp.mu_virtual[n] for sp in seq_params])) for n in arch.hidden_nodes()}
    return SequenceParams(mu, mu_v)


# -- the EM loop -----------------------------------------------------------------------


def _batch_means_se(x: np.ndarray, n_batches: int = 8) -> float:
    x = np.asarray(x, dtype=float)
    nb = min(n_batches, len(x))
    if nb < 2:
        return 0.0
    size = len(x) // nb
    means = x[: nb * size].reshape(nb, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(nb))


class _SeqWork:
    """Per-sequence sampling results of one E-step."""

    def __init__(self, arch):
        self.lls: list[float] = []
        self.counts: list[np.ndarray] = []
        self.g_real = np.zeros((len(arch.real_keys), 3))
        self.g_virt = np.zeros((len(arch.virtual_keys), 3))
        self.g_muv = None
        self.n_valid = 0
        self.n_invalid = 0


def _virtual_mu_vector(arch, sp):
    return np.array([sp.mu_virtual[n] for n in arch.hidden_nodes()])


def mcem_fit(dataset: list[EventSequence], arch: Architecture, config: MCEMConfig, rng: np.random.Generator,
             init_seq_params: list[SequenceParams] | None = None, trace_file=None,
             backend: str | None = None) -> FittedModel:
    """Fit kernels and base rates by Monte Carlo EM.

    ``trace_file`` (an open text file) receives one JSON line per iteration.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if any(s.n_types != arch.K[0] for s in dataset):
        raise ValueError(f"every sequence needs {arch.K[0]} event types")
    N = len(dataset)
    seq_params = [sp.copy() for sp in init_seq_params] if init_seq_params else \
        [initial_seq_params(arch, s) for s in dataset]
    chain_rngs = rng.spawn(N)
    chains = []
    for n, seq in enumerate(dataset):
        st = initial_state(arch, seq_params[n], seq, chain_rngs[n])
        chain = Chain(arch, seq_params[n], seq, st, chain_rngs[n], backend)
        if not chain.burn_in_until_valid(config.chain.burn_in, config.chain.move_probs):
            warnings.warn(f"sequence {n}: chain did not reach a positive-likelihood state", RuntimeWarning,
                          stacklevel=2)
        chains.append(chain)

    hidden = arch.hidden_nodes()
    ids = chains[0]._ids
    hidden_ids = [ids[h] for h in hidden]
    adam_real = Adam(config.r, config.adam_betas, config.adam_eps)
    adam_virt = Adam(config.r_tilde, config.adam_betas, config.adam_eps)
    adam_muv = [Adam(config.r_tilde, config.adam_betas, config.adam_eps) for _ in range(N)]
    ccfg = config.chain
    warm = ccfg if config.warm_burn_in is None else ChainConfig(config.warm_burn_in, ccfg.n_samples, ccfg.thin,
                                                                ccfg.move_probs)
    trace: list[dict] = []
    prev = None

    for it in range(config.max_iters):
        batch = range(N) if config.batch == 0 or config.batch >= N else \
            sorted(rng.choice(N, size=config.batch, replace=False).tolist())
        works = {}
        stats_prop = np.zeros(3)
        stats_acc = np.zeros(3)
        for n in batch:
            chain = chains[n]
            chain.set_params(arch, seq_params[n])
            chain.stats.proposed[:] = 0
            chain.stats.accepted[:] = 0
            chain.stats.noop[:] = 0
            w = _SeqWork(arch)
            w.g_muv = np.zeros(len(ids))

            def visit(c, w=w, n=n):
                ll = c.real_loglik()
                if math.isnan(ll) or ll == math.inf:
                    bad = [node for node, v in zip(arch.nodes(), c.kernel.real_loglik_nodes())
                           if not math.isfinite(v)]
                    raise DivergenceError(f"non-finite log-likelihood in sequence {n}",
                                          {"iteration": it, "sequence": n, "nodes": bad})
                if ll == -math.inf:
                    w.n_invalid += 1
                    return
                if c.kernel.accumulate(w.g_real, w.g_virt, w.g_muv, config.alpha_fd_step):
                    w.lls.append(ll)
                    w.counts.append(c.top_counts())
                    w.n_valid += 1
                else:
                    w.n_invalid += 1

            chain.collect(ccfg if it == 0 else warm, visit)
            stats_prop += chain.stats.proposed
            stats_acc += chain.stats.accepted
            if w.n_invalid:
                warnings.warn(f"sequence {n}: skipped {w.n_invalid} samples with zero intensity at an event",
                              RuntimeWarning, stacklevel=2)
            works[n] = w

        used = [n for n in batch if works[n].n_valid]
        if not used:
            raise DivergenceError("no valid posterior sample in this iteration", {"iteration": it})
        # Monte Carlo estimate of the expected real log-likelihood
        est = float(np.mean([np.mean(works[n].lls) for n in used]))
        se = float(math.sqrt(sum(_batch_means_se(works[n].lls) ** 2 for n in used)) / len(used))

        # top rates: exact maximizer
        for n in used:
            mu = maximize_top_rates(works[n].counts, dataset[n].T)
            seq_params[n] = SequenceParams(mu, seq_params[n].mu_virtual)

        # real kernels
        n_valid = sum(works[n].n_valid for n in batch)
        g_real = sum(works[n].g_real for n in batch) / n_valid
        real_params = [arch.real_edges[e] for e in arch.real_keys]
        g_real_u = g_real * _chain_matrix(real_params)
        if not np.all(np.isfinite(g_real_u)):
            raise DivergenceError("non-finite real-kernel gradient", {"iteration": it, "gradient": g_real.tolist()})
        new_real = adam_real.step(arch.real_vector(), g_real_u)

        # virtual kernels (shared) and virtual base rates (per sequence)
        new_virt = arch.virtual_vector()
        if config.fit_virtual:
            g_virt = sum(works[n].g_virt for n in batch) / n_valid
            g_virt_u = g_virt * _chain_matrix([arch.virtual_edges[e] for e in arch.virtual_keys])
            if not np.all(np.isfinite(g_virt_u)):
                raise DivergenceError("non-finite virtual-kernel gradient", {"iteration": it})
            new_virt = adam_virt.step(new_virt, g_virt_u)
            for n in batch:
                w = works[n]
                if w.n_valid == 0:
                    continue
                mv = _virtual_mu_vector(arch, seq_params[n])
                g = np.array([w.g_muv[i] for i in hidden_ids]) / w.n_valid
                g = g * np.array([_softplus_slope(m) for m in mv])
                u = np.array([softplus_inv(max(m, MU_FLOOR)) for m in mv])
                u = adam_muv[n].step(u, g)
                seq_params[n] = SequenceParams(seq_params[n].mu,
                                               {h: softplus(float(x)) for h, x in zip(hidden, u)})
        arch = arch.from_vectors(new_real, new_virt)

        with np.errstate(invalid="ignore", divide="ignore"):
            acc_rate = np.where(stats_prop > 0, stats_acc / np.maximum(stats_prop, 1), 0.0)
        entry = {
            "iteration": it,
            "loglik": est,
            "loglik_se": se,
            "acceptance": [float(a) for a in acc_rate],
            "n_sequences": len(used),
        }
        trace.append(entry)
        log.info("iteration %d: loglik %.6f (se %.4f)", it, est, se)
        if trace_file is not None:
            trace_file.write(json.dumps(entry) + "\n")
        if prev is not None and abs(est - prev) < config.loglik_tol:
            break
        prev = est

    return FittedModel(arch, population_params(arch, seq_params), seq_params, trace)
