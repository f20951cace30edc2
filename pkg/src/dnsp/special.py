"""Gamma-function numerics for the gamma kernel.

The regularized lower incomplete gamma function is evaluated with the usual
split at ``x = a + 1``: power series below, Lentz continued fraction above.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

_EPS = 2.220446049250313e-16
_FPMIN = 1e-300


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Tolerance:
    """Convergence control.

    ``max_iter`` bounds the series / continued-fraction / root-finding loops.
    A loop that runs out of iterations is still accepted when its last relative
    increment is below ``rel_tol``; otherwise :class:`ConvergenceError` is raised.
    ``abs_tol`` is the target residual ``|P(a, x) - u|`` of the inversion.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_iter: int = 300

    def __post_init__(self):
        if not self.abs_tol > 0 or not self.rel_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


DEFAULT_TOL = Tolerance()


def _check_positive(name, v):
    if not (math.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be finite and > 0, got {v!r}")


def log_gamma(a: float) -> float:
    _check_positive("a", a)
    return math.lgamma(a)


def _series(a, x, lga, tol):
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(tol.max_iter):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        if abs(term) > abs(total) * tol.rel_tol:
            raise ConvergenceError(f"series for P({a}, {x}) did not converge")
    return total * math.exp(a * math.log(x) - x - lga)


def _contfrac(a, x, lga, tol):
    # returns Q(a, x) = 1 - P(a, x)
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, tol.max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        if abs(delta - 1.0) > tol.rel_tol:
            raise ConvergenceError(f"continued fraction for P({a}, {x}) did not converge")
    return math.exp(a * math.log(x) - x - lga) * h


def reg_lower_inc_gamma(a: float, x: float, tol: Tolerance = DEFAULT_TOL, lgamma_a: float | None = None) -> float:
    """P(a, x) = gamma(a, x) / Gamma(a).

    ``lgamma_a`` may be passed when ln Gamma(a) is already known.
    """
    _check_positive("a", a)
    if not (x >= 0) or math.isnan(x):
        raise ValueError(f"x must be >= 0, got {x!r}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    lga = math.lgamma(a) if lgamma_a is None else lgamma_a
    if x < a + 1.0:
        return min(1.0, _series(a, x, lga, tol))
    return max(0.0, 1.0 - _contfrac(a, x, lga, tol))


_TAIL_X = 1e-250


def _initial_guess(a, u, lga):
    if a > 1.0:
        # Wilson-Hilferty
        pp = u if u < 0.5 else 1.0 - u
        t = math.sqrt(-2.0 * math.log(pp))
        z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        if u < 0.5:
            z = -z
        x = a * (1.0 - 1.0 / (9.0 * a) - z / (3.0 * math.sqrt(a))) ** 3
        return max(x, 1e-3 * a)
    t = 1.0 - a * (0.253 + a * 0.12)
    if u < t:
        return (u / t) ** (1.0 / a)
    return 1.0 - math.log(1.0 - (u - t) / (1.0 - t))


def inv_reg_lower_inc_gamma(a: float, u: float, tol: Tolerance = DEFAULT_TOL, lgamma_a: float | None = None) -> float:
    """Solve P(a, x) = u for x by Newton iteration safeguarded with bisection."""
    _check_positive("a", a)
    if not (0.0 <= u < 1.0):
        raise ValueError(f"u must lie in [0, 1), got {u!r}")
    if u == 0.0:
        return 0.0
    lga = math.lgamma(a) if lgamma_a is None else lgamma_a
    # deep left tail: P(a, x) = x^a / Gamma(a + 1) to machine precision
    x_tail = math.exp((math.log(u) + lga + math.log(a)) / a)
    if x_tail < _TAIL_X:
        return x_tail

    lo, hi = 0.0, max(a, 1.0)
    while reg_lower_inc_gamma(a, hi, tol, lga) < u:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise ConvergenceError("could not bracket the inverse")

    x = _initial_guess(a, u, lga)
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    target = tol.abs_tol * u
    for _ in range(tol.max_iter):
        f = reg_lower_inc_gamma(a, x, tol, lga) - u
        if abs(f) <= target:
            return x
        if f > 0:
            hi = x
        else:
            lo = x
        dens = math.exp((a - 1.0) * math.log(x) - x - lga) if x > 0 else 0.0
        step_ok = False
        if dens > 0:
            xn = x - f / dens
            if lo < xn < hi:
                x = xn
                step_ok = True
        if not step_ok:
            x = 0.5 * (lo + hi)
        if hi - lo <= 4 * _EPS * hi:
            return x
    f = reg_lower_inc_gamma(a, x, tol, lga) - u
    if abs(f) > tol.rel_tol * max(u, 1e-300) and abs(f) > tol.abs_tol:
        raise ConvergenceError(f"inverse of P({a}, .) at {u} did not converge")
    return x
