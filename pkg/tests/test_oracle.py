import math

import numpy as np
import pytest

from dnsp.model import EventSequence, KernelParams, SequenceParams, kernel_eval, kernel_mass, n_hidden_architecture
from dnsp.oracle import (
    HIDDEN_COUNT,
    ONE,
    OracleEstimate,
    OracleReliabilityError,
    Statistic,
    finite_diff_grad,
    importance_posterior_expectation,
    quad_reg_lower_inc_gamma,
    quadrature,
)

TH = KernelParams.from_natural(1.0, 2.0, 3.0)


def tiny(mu=1.0, mu_v=0.5):
    arch = n_hidden_architecture(1, 1, TH, TH)
    return arch, SequenceParams((mu,), {(1, 0): mu_v})


def test_estimate_validation():
    with pytest.raises(ValueError):
        OracleEstimate(1.0, -0.1, 10)


def test_constant_statistic_is_exactly_one(rng):
    arch, sp = tiny()
    ev = EventSequence(2.0, (np.array([0.7]),))
    est = importance_posterior_expectation(arch, sp, ev, ONE, 20_000, rng)
    assert est.value == pytest.approx(1.0, abs=1e-12) and est.std_error == pytest.approx(0.0, abs=1e-12)


def test_empty_evidence_matches_closed_form_posterior(rng):
    # with no evidence the weights are exp(-sum Phi(T - t)); the posterior
    # count is Poisson with mean mu * int_0^T exp(-Phi(T - s)) ds
    arch, sp = tiny()
    T = 2.0
    ev = EventSequence(T, (np.empty(0),))
    est = importance_posterior_expectation(arch, sp, ev, HIDDEN_COUNT, 200_000, rng)
    exact = sp.mu[0] * quadrature(lambda s: math.exp(-kernel_mass(TH, T - s)), 0, T)
    assert abs(est.value - exact) <= 3 * est.std_error


def test_generic_path_agrees_with_vectorized(rng):
    arch, sp = tiny()
    ev = EventSequence(2.0, (np.array([0.7, 1.5]),))
    fast = importance_posterior_expectation(arch, sp, ev, HIDDEN_COUNT, 100_000, rng)
    slow = importance_posterior_expectation(arch, sp, ev, Statistic(HIDDEN_COUNT.fn), 20_000, rng)
    assert abs(fast.value - slow.value) <= 3 * math.hypot(fast.std_error, slow.std_error)


def test_low_ess_raises(rng):
    arch, sp = tiny(mu=0.05)
    ev = EventSequence(2.0, (np.array([0.3, 0.6, 0.9, 1.2, 1.5, 1.8]),))
    with pytest.raises(OracleReliabilityError):
        importance_posterior_expectation(arch, sp, ev, HIDDEN_COUNT, 2_000, rng)


def test_variance_halves_when_draws_double():
    arch, sp = tiny()
    ev = EventSequence(2.0, (np.array([0.7]),))
    ratios = []
    for rep in range(6):
        rng = np.random.default_rng(rep)
        small = [importance_posterior_expectation(arch, sp, ev, HIDDEN_COUNT, 5_000, rng).value for _ in range(60)]
        large = [importance_posterior_expectation(arch, sp, ev, HIDDEN_COUNT, 10_000, rng).value for _ in range(60)]
        ratios.append(np.var(small) / np.var(large))
    assert 1.6 <= float(np.mean(ratios)) <= 2.5


def test_quadrature_examples():
    assert quadrature(lambda x: 1.0, 0, 1) == pytest.approx(1.0, abs=1e-12)
    assert quadrature(math.sin, 0, math.pi) == pytest.approx(2.0, abs=1e-10)
    th = KernelParams.from_natural(1.2, 2.5, 1.5)
    assert quadrature(lambda x: kernel_eval(th, x), 0, 60) == pytest.approx(kernel_mass(th, 60.0), abs=1e-8)


def test_quadrature_failure_raises():
    with pytest.raises(ArithmeticError):
        quadrature(lambda x: 1.0 / x if x > 0 else 0.0, 0, 1, tol=1e-12)


def test_quad_incomplete_gamma():
    assert quad_reg_lower_inc_gamma(1.0, 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-12)
    assert quad_reg_lower_inc_gamma(0.3, 0.0) == 0.0


def test_finite_diff_examples():
    g = finite_diff_grad(lambda v: 3.0 * v[0] - 2.0 * v[1], [1.0, 5.0])
    np.testing.assert_allclose(g, [3.0, -2.0], rtol=1e-9)
    assert finite_diff_grad(lambda v: v[0] ** 2, [3.0])[0] == pytest.approx(6.0, abs=1e-8)
    with pytest.raises(ArithmeticError):
        finite_diff_grad(lambda v: math.log(v[0]) if v[0] > 0 else math.nan, [0.0])
