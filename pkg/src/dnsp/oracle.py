"""Slow, independent reference computations used to validate the fast paths.

The posterior oracle is self-normalized importance sampling with the prior as
proposal: hidden layers are drawn by ancestral sampling and weighted by the
evidence likelihood.  It is exact in the limit and practical only for tiny
models.  Incomplete-gamma values here come from scipy, not from ``special``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .model import Architecture, EventSequence, LatentState, SequenceParams, evidence_loglik
from .simulate import forward_sample


class OracleReliabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    std_error: float
    n_draws: int
    ess: float = math.nan

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be >= 0")


@dataclass(frozen=True)
class Statistic:
    """A function of the hidden state, with an optional vectorized form.

    ``batch(counts, time_sums)`` receives per-draw totals over all hidden
    nodes; when given, single-hidden-layer models use the vectorized sampler.
    """

    fn: Callable[[LatentState], float]
    batch: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None


HIDDEN_COUNT = Statistic(lambda s: float(s.hidden_count()), lambda c, s: c.astype(float))
HIDDEN_TIME_SUM = Statistic(lambda s: s.hidden_time_sum(), lambda c, s: s)
ONE = Statistic(lambda s: 1.0, lambda c, s: np.ones(len(c)))


def _snis(logw: np.ndarray, fvals: np.ndarray, min_ess: float) -> OracleEstimate:
    n_draws = len(logw)
    # zero-weight draws drop out; their statistic may be undefined there
    keep = logw > -np.inf
    logw, fvals = logw[keep], fvals[keep]
    w = np.exp(logw - logw.max())
    total = w.sum()
    value = float((w * fvals).sum() / total)
    wn = w / total
    ess = float(1.0 / (wn ** 2).sum())
    if ess < min_ess:
        raise OracleReliabilityError(f"effective sample size {ess:.1f} below {min_ess}")
    se = float(math.sqrt(((wn * (fvals - value)) ** 2).sum()))
    return OracleEstimate(value, se, n_draws, ess)


def _gamma_pdf(p, a, b, x):
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = np.exp(math.log(p) + a * math.log(b) - special.gammaln(a) + (a - 1) * np.log(xp) - b * xp)
    return out


def _one_layer_draws(arch, sp, evidence, n, rng, stats):
    """Log-weights and statistic values for ``n`` prior draws of a single hidden layer."""
    T = evidence.T
    K1 = arch.K[1]
    counts = rng.poisson(np.array(sp.mu) * T, size=(n, K1))
    total = counts.sum()
    draw_of = np.repeat(np.repeat(np.arange(n), K1), counts.ravel())
    node_of = np.repeat(np.tile(np.arange(K1), n), counts.ravel())
    times = rng.random(total) * T

    logw = np.zeros(n)
    for k in range(arch.K[0]):
        x = evidence.events[k]
        lam = np.zeros((n, len(x)))
        for e in arch.parent_edges((0, k)):
            p, a, b = arch.real_edges[e].natural()
            sel = node_of == e[0][1]
            t_sel, d_sel = times[sel], draw_of[sel]
            logw -= np.bincount(d_sel, weights=p * special.gammainc(a, b * (T - t_sel)), minlength=n)
            for j, xj in enumerate(x):
                lam[:, j] += np.bincount(d_sel, weights=_gamma_pdf(p, a, b, xj - t_sel), minlength=n)
        with np.errstate(divide="ignore"):
            logw += np.log(lam).sum(axis=1)

    n_hidden = counts.sum(axis=1)
    tsum = np.bincount(draw_of, weights=times, minlength=n)
    return logw, [st.batch(n_hidden, tsum) for st in stats]


def importance_posterior_expectation(arch: Architecture, seq_params: SequenceParams, evidence: EventSequence,
                                     f, n_draws: int, rng: np.random.Generator, min_ess: float = 50.0,
                                     chunk: int = 100_000):
    """Posterior expectation of ``f`` given the evidence, by prior importance sampling.

    ``f`` is a :class:`Statistic`, a plain callable on :class:`LatentState`, or
    a list of statistics (then a list of estimates is returned, all from the
    same draws).
    """
    many = isinstance(f, (list, tuple))
    stats = [s if isinstance(s, Statistic) else Statistic(s) for s in (f if many else [f])]
    if arch.L == 1 and all(s.batch is not None for s in stats):
        logw, vals = [], [[] for _ in stats]
        done = 0
        while done < n_draws:
            m = min(chunk, n_draws - done)
            lw, fv = _one_layer_draws(arch, seq_params, evidence, m, rng, stats)
            logw.append(lw)
            for acc, v in zip(vals, fv):
                acc.append(v)
            done += m
        logw = np.concatenate(logw)
        fvals = [np.concatenate(v) for v in vals]
    else:
        logw = np.empty(n_draws)
        fvals = [np.empty(n_draws) for _ in stats]
        for i in range(n_draws):
            state, _ = forward_sample(arch, seq_params, evidence.T, rng)
            logw[i] = evidence_loglik(arch, seq_params, evidence, state)
            for fv, s in zip(fvals, stats):
                fv[i] = s.fn(state)
    if not np.isfinite(logw.max()):
        raise OracleReliabilityError("every draw has zero evidence likelihood")
    out = [_snis(logw, fv, min_ess) for fv in fvals]
    return out if many else out[0]


def quadrature(g: Callable[[float], float], a: float, b: float, tol: float = 1e-10, **kw) -> float:
    """Adaptive Gauss-Kronrod integral of ``g`` over ``[a, b]``; raises when the error bound exceeds ``tol``."""
    val, err, info = integrate.quad(g, a, b, epsabs=tol, epsrel=0.0, limit=500, full_output=True, **kw)[:3]
    if err > tol and abs(err) > tol * max(1.0, abs(val)):
        raise ArithmeticError(f"quadrature error estimate {err:.3g} exceeds {tol:.3g}")
    return float(val)


def quad_reg_lower_inc_gamma(a: float, x: float, tol: float = 1e-11) -> float:
    """P(a, x) by quadrature, with the t^(a-1) endpoint singularity handled by an algebraic weight."""
    if x == 0:
        return 0.0
    lg = math.lgamma(a)
    return quadrature(lambda t: math.exp(-t - lg), 0.0, x, tol, weight="alg", wvar=(a - 1.0, 0.0))


def finite_diff_grad(objective: Callable[[np.ndarray], float], at, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences per coordinate, step ``rel_step * max(1, |x_i|)``."""
    x = np.array(at, dtype=float)
    flat = x.ravel()
    g = np.empty_like(flat)
    for i in range(flat.size):
        h = rel_step * max(1.0, abs(flat[i]))
        up = flat.copy()
        dn = flat.copy()
        up[i] += h
        dn[i] -= h
        fu = objective(up.reshape(x.shape))
        fd = objective(dn.reshape(x.shape))
        if not (math.isfinite(fu) and math.isfinite(fd)):
            raise ArithmeticError(f"objective not finite near coordinate {i}")
        g[i] = (fu - fd) / (2 * h)
    return g.reshape(x.shape)
