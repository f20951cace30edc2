import math

import numpy as np
import pytest
from scipy import stats

from dnsp.model import (
    EventSequence,
    KernelParams,
    LatentState,
    SequenceParams,
    kernel_mass,
    n_hidden_architecture,
    virtual_intensity,
)
from dnsp.simulate import (
    RngStream,
    first_event_after,
    forward_sample,
    initial_state,
    sample_children,
    sample_hpp,
    sample_vpp,
    truncated_gamma_offsets,
)
from dnsp.special import reg_lower_inc_gamma


def test_sample_hpp_zero_rate_and_domain(rng):
    assert sample_hpp(0.0, 5.0, rng).size == 0
    with pytest.raises(ValueError):
        sample_hpp(-1.0, 1.0, rng)


def test_sample_hpp_mean_count(rng):
    counts = np.array([sample_hpp(2.0, 5.0, rng).size for _ in range(100_000)])
    assert abs(counts.mean() - 10.0) <= 3 * math.sqrt(10) / math.sqrt(1e5)


def test_sample_hpp_poisson_chi_square(rng):
    counts = np.array([sample_hpp(1.0, 1.0, rng).size for _ in range(100_000)])
    kmax = 6
    obs = np.array([np.sum(counts == k) for k in range(kmax)] + [np.sum(counts >= kmax)])
    probs = np.array([stats.poisson.pmf(k, 1.0) for k in range(kmax)] + [stats.poisson.sf(kmax - 1, 1.0)])
    assert stats.chisquare(obs, probs * len(counts)).pvalue > 0.01


def test_sample_hpp_sorted_in_window(rng):
    t = sample_hpp(3.0, 4.0, rng, start=1.0)
    assert np.all(np.diff(t) >= 0) and np.all((t >= 1.0) & (t <= 5.0))


def test_sample_children_edge_cases(rng):
    th = KernelParams.from_natural(3.0, 1.0, 1.0)
    assert sample_children(th, 2.0, 2.0, rng).size == 0
    with pytest.raises(ValueError):
        sample_children(th, 3.0, 2.0, rng)


def test_sample_children_mean_mass(rng):
    th = KernelParams.from_natural(3.0, 1.0, 1.0)
    counts = np.array([sample_children(th, 0.0, 60.0, rng).size for _ in range(20_000)])
    assert abs(counts.mean() - th.p) <= 3 * math.sqrt(th.p / len(counts))


def test_truncated_offsets_ks(rng):
    th = KernelParams.from_natural(1.0, 2.5, 1.3)
    d = 2.0
    x = truncated_gamma_offsets(th, 0.0, d, 5000, rng)
    assert np.all((x > 0) & (x <= d))
    norm = reg_lower_inc_gamma(th.alpha, th.beta * d)
    cdf = lambda v: np.array([reg_lower_inc_gamma(th.alpha, th.beta * s) / norm for s in np.atleast_1d(v)])  # noqa: E731
    assert stats.kstest(x, cdf).pvalue > 0.01


def test_truncated_offsets_lower_bound(rng):
    th = KernelParams.from_natural(1.0, 1.5, 2.0)
    x = truncated_gamma_offsets(th, 0.7, 1.9, 2000, rng)
    assert np.all((x > 0.7) & (x <= 1.9))


def test_forward_sample_zero_rates(rng):
    arch = n_hidden_architecture(2, 2, (1.0, 1.0, 1.0))
    sp = SequenceParams((1e-300,), {n: 0.0 for n in arch.hidden_nodes()})
    state, ev = forward_sample(arch, sp, 5.0, rng)
    assert ev.n_events == 0 and state.hidden_count() == 0


def test_forward_sample_expected_evidence_count(rng):
    th = KernelParams.from_natural(2.0, 1.5, 1.0)
    arch = n_hidden_architecture(1, 1, th)
    sp = SequenceParams((1.0,), {(1, 0): 0.0})
    T = 3.0
    n = 20_000
    counts = np.empty(n)
    comps = np.empty(n)
    for i in range(n):
        state, ev = forward_sample(arch, sp, T, rng)
        counts[i] = ev.n_events
        comps[i] = float(np.sum(kernel_mass(th, T - state.real[(1, 0)]))) if state.hidden_count() else 0.0
    se = math.sqrt(counts.var() / n + comps.var() / n)
    assert abs(counts.mean() - comps.mean()) <= 3 * se


def test_forward_sample_tight_kernel_offsets(rng):
    th = KernelParams.from_natural(1.0, 200.0, 100.0)
    arch = n_hidden_architecture(1, 1, th)
    # parents far apart so every child's nearest earlier parent is its own
    sp = SequenceParams((0.02,), {(1, 0): 0.0})
    offs = []
    for _ in range(100):
        state, ev = forward_sample(arch, sp, 200.0, rng)
        par = state.real[(1, 0)]
        for t in ev.events[0]:
            offs.append(t - par[par < t].max())
    assert abs(np.median(offs) - 2.0) < 0.05


def test_forward_sample_times_in_window_and_deterministic():
    arch = n_hidden_architecture(2, 2, (1.5, 1.2, 1.0))
    sp = SequenceParams((0.8,), {n: 0.1 for n in arch.hidden_nodes()})
    s1, e1 = forward_sample(arch, sp, 6.0, RngStream(4, 1).generator(0))
    s2, e2 = forward_sample(arch, sp, 6.0, RngStream(4, 1).generator(0))
    for a, b in zip(e1.events, e2.events):
        assert a.tobytes() == b.tobytes()
    for n in arch.hidden_nodes():
        assert s1.real[n].tobytes() == s2.real[n].tobytes()
        assert np.all((s1.real[n] >= 0) & (s1.real[n] <= 6.0))


def test_rng_streams_are_distinct():
    a = RngStream(1, 1).generator(0).random(4)
    b = RngStream(1, 2).generator(0).random(4)
    c = RngStream(1, 1).generator(1).random(4)
    assert not np.allclose(a, b) and not np.allclose(a, c)


def test_sample_vpp_empty_and_domain(rng):
    arch = n_hidden_architecture(1, 1, (1.0, 1.0, 1.0))
    sp = SequenceParams((1.0,), {(1, 0): 0.0})
    ev = EventSequence(5.0, (np.empty(0),))
    st_ = LatentState.empty(arch, include_terminal_event=False)
    assert sample_vpp(arch, sp, ev, st_, 1, 0, rng).size == 0
    with pytest.raises(ValueError):
        sample_vpp(arch, sp, ev, st_, 0, 0, rng)


def test_sample_vpp_base_rate_mean(rng):
    arch = n_hidden_architecture(1, 1, (1.0, 1.0, 1.0))
    sp = SequenceParams((1.0,), {(1, 0): 0.4})
    ev = EventSequence(10.0, (np.empty(0),))
    st_ = LatentState.empty(arch, include_terminal_event=False)
    counts = np.array([sample_vpp(arch, sp, ev, st_, 1, 0, rng).size for _ in range(20_000)])
    assert abs(counts.mean() - 4.0) <= 3 * math.sqrt(4.0 / len(counts))


def test_sample_vpp_histogram_matches_intensity(rng):
    arch = n_hidden_architecture(2, 1, (1.2, 2.0, 3.0), (1.0, 2.0, 2.5))
    sp = SequenceParams((1.0,), {(1, 0): 0.3, (2, 0): 0.2})
    T = 3.0
    ev = EventSequence(T, (np.array([0.8, 1.1, 2.6]),))
    st_ = LatentState.empty(arch, include_terminal_event=True)
    st_.real[(1, 0)] = np.array([0.5, 2.0])
    n = 40_000
    draws = np.concatenate([sample_vpp(arch, sp, ev, st_, 2, 0, rng) for _ in range(n)])
    edges = np.linspace(0, T, 31)
    hist = np.histogram(draws, edges)[0]
    for lo, hi, h in zip(edges[:-1], edges[1:], hist):
        grid = np.linspace(lo, hi, 41)
        lam = virtual_intensity(arch, sp, ev, st_, 2, 0, grid)
        expected = n * np.trapezoid(lam, grid)
        assert abs(h - expected) <= 3 * math.sqrt(expected) + 1e-3 * expected


def test_initial_state_has_no_reals(rng):
    arch = n_hidden_architecture(2, 2, (1.0, 1.0, 1.0))
    sp = SequenceParams((1.0,), {n: 0.5 for n in arch.hidden_nodes()})
    ev = EventSequence(4.0, (np.array([1.0, 2.0]), np.array([3.0])))
    st_ = initial_state(arch, sp, ev, rng)
    assert st_.hidden_count() == 0


def test_first_event_after_matches_direct_simulation():
    # top rate 1 feeding one type through a unit-mass exponential kernel
    th = KernelParams.from_natural(1.0, 1.0, 2.0)
    arch = n_hidden_architecture(1, 1, th)
    sp = SequenceParams((1.0,), {(1, 0): 0.0})
    rng = np.random.default_rng(3)
    t_last = 2.0
    real = {(1, 0): np.array([1.5])}
    a = [first_event_after(arch, sp, real, t_last, 200.0, rng, 0.5)[0] - t_last for _ in range(4000)]

    # direct: superpose the old parent's remaining offspring and a fresh HPP cascade on a long window
    rng2 = np.random.default_rng(4)
    b = []
    for _ in range(4000):
        cand = [1.5 + x for x in rng2.exponential(0.5, rng2.poisson(1.0))]
        for tp in t_last + np.cumsum(rng2.exponential(1.0, 400)):
            cand += [tp + x for x in rng2.exponential(0.5, rng2.poisson(1.0))]
        b.append(min(c for c in cand if c > t_last) - t_last)
    a, b = np.array(a), np.array(b)
    assert abs(a.mean() - b.mean()) <= 3 * math.sqrt(a.var() / len(a) + b.var() / len(b))
