# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
# distutils: language = c++
"""Compiled chain kernel.

Operation-for-operation port of ``_chain_py.PyChainKernel``.  Random numbers
come from the same numpy bit generator through the same distribution
routines, so both kernels produce identical trajectories.
"""
import math

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log, sqrt, pow, INFINITY, isinf
from libc.stdint cimport int64_t
from libcpp.vector cimport vector
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_uniform, random_poisson

from .special import ConvergenceError

cdef double EPS = 2.220446049250313e-16
cdef double FPMIN = 1e-300
cdef double REL_TOL = 1e-10
cdef double ABS_TOL = 1e-12
cdef int MAX_ITER = 300
cdef double CANCEL = 1e-9
cdef double ONE_MINUS = 1.0 - 2.0 ** -53


# -- special functions (same algorithms as special.py) ------------------------------

cdef double _series(double a, double x, double lga, int* err) noexcept nogil:
    cdef double ap = a, term = 1.0 / a, total = term
    cdef int i
    cdef bint done = False
    for i in range(MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * EPS:
            done = True
            break
    if not done and abs(term) > abs(total) * REL_TOL:
        err[0] = 1
    return total * exp(a * log(x) - x - lga)


cdef double _contfrac(double a, double x, double lga, int* err) noexcept nogil:
    cdef double b = x + 1.0 - a, c = 1.0 / FPMIN, d = 1.0 / b, h = d, an, delta = 0.0
    cdef int i
    cdef bint done = False
    for i in range(1, MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < FPMIN:
            d = FPMIN
        c = b + an / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            done = True
            break
    if not done and abs(delta - 1.0) > REL_TOL:
        err[0] = 1
    return exp(a * log(x) - x - lga) * h


cdef double _P(double a, double x, double lga, int* err) noexcept nogil:
    cdef double v
    if x == 0.0:
        return 0.0
    if isinf(x):
        return 1.0
    if x < a + 1.0:
        v = _series(a, x, lga, err)
        return 1.0 if v > 1.0 else v
    v = 1.0 - _contfrac(a, x, lga, err)
    return 0.0 if v < 0.0 else v


cdef double _guess(double a, double u) noexcept nogil:
    cdef double pp, t, z, x
    if a > 1.0:
        pp = u if u < 0.5 else 1.0 - u
        t = sqrt(-2.0 * log(pp))
        z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        if u < 0.5:
            z = -z
        x = a * pow(1.0 - 1.0 / (9.0 * a) - z / (3.0 * sqrt(a)), 3.0)
        return x if x >= 1e-3 * a else 1e-3 * a
    t = 1.0 - a * (0.253 + a * 0.12)
    if u < t:
        return pow(u / t, 1.0 / a)
    return 1.0 - log(1.0 - (u - t) / (1.0 - t))


cdef double _invP(double a, double u, double lga, int* err) noexcept nogil:
    cdef double lo = 0.0, hi = a if a > 1.0 else 1.0, x, f, dens, xn, target
    cdef bint step_ok
    cdef int i
    if u == 0.0:
        return 0.0
    x = exp((log(u) + lga + log(a)) / a)
    if x < 1e-250:
        return x
    while _P(a, hi, lga, err) < u:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            err[0] = 1
            return hi
    x = _guess(a, u)
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    target = ABS_TOL * u
    for i in range(MAX_ITER):
        f = _P(a, x, lga, err) - u
        if abs(f) <= target:
            return x
        if f > 0:
            hi = x
        else:
            lo = x
        dens = exp((a - 1.0) * log(x) - x - lga) if x > 0 else 0.0
        step_ok = False
        if dens > 0:
            xn = x - f / dens
            if lo < xn < hi:
                x = xn
                step_ok = True
        if not step_ok:
            x = 0.5 * (lo + hi)
        if hi - lo <= 4 * EPS * hi:
            return x
    f = _P(a, x, lga, err) - u
    if abs(f) > REL_TOL * (u if u > 1e-300 else 1e-300) and abs(f) > ABS_TOL:
        err[0] = 1
    return x


# -- kernel helpers; a parameter row is (p, alpha, beta, log_norm, lgamma(alpha)) ----

cdef inline double _phi(const double* par, double x) noexcept nogil:
    if x <= 0.0:
        return 0.0
    return exp(par[3] + (par[1] - 1.0) * log(x) - par[2] * x)


cdef inline double _Phi(const double* par, double x, int* err) noexcept nogil:
    if x <= 0.0:
        return 0.0
    return par[0] * _P(par[1], par[2] * x, par[4], err)


cdef inline double _combine(double fin, int dz) noexcept nogil:
    if dz > 0:
        return -INFINITY
    if dz < 0:
        return INFINITY
    return fin


cdef inline void _swap_remove(vector[double]& t, vector[double]& l, size_t i) noexcept nogil:
    t[i] = t.back()
    l[i] = l.back()
    t.pop_back()
    l.pop_back()


cdef inline size_t _find(vector[double]& v, double x) except? 0:
    cdef size_t i
    for i in range(v.size()):
        if v[i] == x:
            return i
    raise ValueError(f"{x!r} is not an event of this node")


cdef class ChainKernel:
    cdef public object rng
    cdef bitgen_t* bitgen
    cdef double T
    cdef bint terminal
    cdef vector[int] layer, hidden, is_top, e_parent, e_child, v_driver, v_target
    cdef vector[double] mu, muv, epar, vpar
    cdef vector[vector[int]] parent_edges, child_edges, drivers, driven
    cdef vector[vector[double]] real, lam, virt, lamv
    cdef int64_t proposed[3]
    cdef int64_t accepted[3]
    cdef int64_t noop[3]
    cdef int err

    backend = "cython"

    def __init__(self, flat, real, virtual, rng):
        cdef int n = flat.n_nodes
        self.rng = rng
        capsule = rng.bit_generator.capsule
        self.bitgen = <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")
        self.real.resize(n)
        self.virt.resize(n)
        for i in range(n):
            self.real[i] = [float(x) for x in real[i]]
            self.virt[i] = [float(x) for x in virtual[i]]
        self.reset_counts()
        self.err = 0
        self.set_model(flat)

    # -- structure -----------------------------------------------------------------

    def set_model(self, flat):
        cdef int n = flat.n_nodes
        self.T = float(flat.T)
        self.terminal = bool(flat.include_terminal)
        self.layer = [int(x) for x in flat.layer]
        self.hidden = [int(x) for x in flat.hidden]
        self.is_top = [int(x) for x in flat.is_top]
        self.mu = [float(x) for x in flat.mu]
        self.muv = [float(x) for x in flat.mu_virtual]
        self.e_parent = [int(x) for x in flat.e_parent]
        self.e_child = [int(x) for x in flat.e_child]
        self.epar = [float(v) for v in np.asarray(flat.e_par, dtype=float).ravel()]
        self.v_driver = [int(x) for x in flat.v_driver]
        self.v_target = [int(x) for x in flat.v_target]
        self.vpar = [float(v) for v in np.asarray(flat.v_par, dtype=float).ravel()]
        self.parent_edges.assign(n, vector[int]())
        self.child_edges.assign(n, vector[int]())
        self.drivers.assign(n, vector[int]())
        self.driven.assign(n, vector[int]())
        cdef int e
        for e in range(<int> self.e_parent.size()):
            self.child_edges[self.e_parent[e]].push_back(e)
            self.parent_edges[self.e_child[e]].push_back(e)
        for e in range(<int> self.v_driver.size()):
            self.driven[self.v_driver[e]].push_back(e)
            self.drivers[self.v_target[e]].push_back(e)
        self.refresh()

    def set_events(self, int node, times):
        self.real[node] = [float(x) for x in times]
        self.refresh()

    def refresh(self):
        with nogil:
            self._refresh()

    cdef void _refresh(self) noexcept nogil:
        cdef size_t c, j, n = self.real.size()
        self.lam.assign(n, vector[double]())
        self.lamv.assign(n, vector[double]())
        for c in range(n):
            for j in range(self.real[c].size()):
                self.lam[c].push_back(self._lam_real_exact(c, self.real[c][j], -1, -1, False, 0.0))
            if self.layer[c] >= 1:
                for j in range(self.virt[c].size()):
                    self.lamv[c].push_back(self._lam_virt_exact(c, self.virt[c][j], -1, -1, False, 0.0))

    # -- intensities ---------------------------------------------------------------

    cdef double _lam_real_exact(self, int c, double x, int n, long skip, bint has_add, double add) noexcept nogil:
        cdef double s = 0.0
        cdef const double* par
        cdef int e, src
        cdef size_t j
        if self.is_top[c]:
            return self.mu[c]
        for e in self.parent_edges[c]:
            par = &self.epar[5 * e]
            src = self.e_parent[e]
            for j in range(self.real[src].size()):
                if src == n and <long> j == skip:
                    continue
                s += _phi(par, x - self.real[src][j])
            if src == n and has_add:
                s += _phi(par, x - add)
        return s

    cdef double _lam_virt_exact(self, int u, double y, int n, long skip, bint has_add, double add) noexcept nogil:
        cdef double s = self.muv[u]
        cdef const double* par
        cdef int v, d
        cdef size_t j
        for v in self.drivers[u]:
            par = &self.vpar[5 * v]
            d = self.v_driver[v]
            for j in range(self.real[d].size()):
                if d == n and <long> j == skip:
                    continue
                s += _phi(par, self.real[d][j] - y)
            if d == n and has_add:
                s += _phi(par, add - y)
            if self.terminal and self.layer[d] >= 1:
                s += _phi(par, self.T - y)
        return s

    # -- proposals -----------------------------------------------------------------

    cdef double _delta(self, int n, long ia, long ir, bint apply, int* dz_out) noexcept nogil:
        cdef double T = self.T, fin = 0.0, a = 0.0, r = 0.0, lam_a = 0.0, lamv_r = 0.0
        cdef double old, new, d, x, y
        cdef int dz = 0, e, c, v, u
        cdef bint has_a = ia >= 0, has_r = ir >= 0
        cdef const double* par
        cdef size_t j
        if has_a:
            a = self.virt[n][ia]
        if has_r:
            r = self.real[n][ir]
        if has_a:
            lam_a = self._lam_real_exact(n, a, -1, -1, False, 0.0)
            if lam_a > 0.0:
                fin += log(lam_a)
            else:
                dz += 1
            old = self.lamv[n][ia]
            if old > 0.0:
                fin -= log(old)
            else:
                dz -= 1
        if has_r:
            old = self.lam[n][ir]
            if old > 0.0:
                fin -= log(old)
            else:
                dz -= 1
            lamv_r = self._lam_virt_exact(n, r, -1, -1, False, 0.0)
            if lamv_r > 0.0:
                fin += log(lamv_r)
            else:
                dz += 1

        for e in self.child_edges[n]:
            par = &self.epar[5 * e]
            c = self.e_child[e]
            if has_a:
                fin -= _Phi(par, T - a, &self.err)
            if has_r:
                fin += _Phi(par, T - r, &self.err)
            for j in range(self.real[c].size()):
                x = self.real[c][j]
                d = 0.0
                if has_a:
                    d += _phi(par, x - a)
                if has_r:
                    d -= _phi(par, x - r)
                if d == 0.0:
                    continue
                old = self.lam[c][j]
                new = old + d
                if has_r and new <= CANCEL * old:
                    new = self._lam_real_exact(c, x, n, ir, has_a, a)
                if old > 0.0:
                    fin -= log(old)
                else:
                    dz -= 1
                if new > 0.0:
                    fin += log(new)
                else:
                    dz += 1
                if apply:
                    self.lam[c][j] = new

        for v in self.driven[n]:
            par = &self.vpar[5 * v]
            u = self.v_target[v]
            if has_a:
                fin -= _Phi(par, a, &self.err)
            if has_r:
                fin += _Phi(par, r, &self.err)
            for j in range(self.virt[u].size()):
                y = self.virt[u][j]
                d = 0.0
                if has_a:
                    d += _phi(par, a - y)
                if has_r:
                    d -= _phi(par, r - y)
                if d == 0.0:
                    continue
                old = self.lamv[u][j]
                new = old + d
                if has_r and new <= CANCEL * old:
                    new = self._lam_virt_exact(u, y, n, ir, has_a, a)
                if old > 0.0:
                    fin -= log(old)
                else:
                    dz -= 1
                if new > 0.0:
                    fin += log(new)
                else:
                    dz += 1
                if apply:
                    self.lamv[u][j] = new

        if apply:
            if has_a and has_r:
                self.real[n][ir] = a
                self.lam[n][ir] = lam_a
                self.virt[n][ia] = r
                self.lamv[n][ia] = lamv_r
            elif has_a:
                _swap_remove(self.virt[n], self.lamv[n], ia)
                self.real[n].push_back(a)
                self.lam[n].push_back(lam_a)
            elif has_r:
                _swap_remove(self.real[n], self.lam[n], ir)
                self.virt[n].push_back(r)
                self.lamv[n].push_back(lamv_r)
        dz_out[0] = dz
        return fin

    cdef void _resample(self, int n) noexcept nogil:
        cdef double T = self.T, muv = self.muv[n], tc, pt, mass, q
        cdef int64_t cnt, i
        cdef int v, d, extra
        cdef size_t j, m
        cdef const double* par
        cdef vector[double] new
        if muv > 0.0:
            cnt = random_poisson(self.bitgen, muv * T)
            for i in range(cnt):
                new.push_back(random_standard_uniform(self.bitgen) * T)
        for v in self.drivers[n]:
            par = &self.vpar[5 * v]
            d = self.v_driver[v]
            m = self.real[d].size()
            extra = 1 if (self.terminal and self.layer[d] >= 1) else 0
            for j in range(m + extra):
                tc = self.real[d][j] if j < m else T
                if tc <= 0.0:
                    continue
                pt = _P(par[1], par[2] * tc, par[4], &self.err)
                mass = par[0] * pt
                if mass <= 0.0:
                    continue
                cnt = random_poisson(self.bitgen, mass)
                for i in range(cnt):
                    q = random_standard_uniform(self.bitgen) * pt
                    if q > ONE_MINUS:
                        q = ONE_MINUS
                    new.push_back(tc - _invP(par[1], q, par[4], &self.err) / par[2])
        self.virt[n].swap(new)
        self.lamv[n].clear()
        for j in range(self.virt[n].size()):
            self.lamv[n].push_back(self._lam_virt_exact(n, self.virt[n][j], -1, -1, False, 0.0))

    cdef bint _accept(self, double fin, int dz) noexcept nogil:
        cdef double lr = _combine(fin, dz)
        if lr >= 0.0:
            return True
        return random_standard_uniform(self.bitgen) < exp(lr)

    cdef void _run(self, long n_steps, double p_resample, double p_flip) noexcept nogil:
        cdef size_t nh = self.hidden.size()
        cdef double p12 = p_resample + p_flip, w, fin
        cdef long step, j, m, mv, ir, ia
        cdef int n, dz = 0
        if nh == 0:
            return
        for step in range(n_steps):
            n = self.hidden[<size_t> (random_standard_uniform(self.bitgen) * nh)]
            w = random_standard_uniform(self.bitgen)
            if w < p_resample:
                self.proposed[0] += 1
                self._resample(n)
                self.accepted[0] += 1
            elif w < p12:
                self.proposed[1] += 1
                m = self.real[n].size()
                mv = self.virt[n].size()
                if m + mv == 0:
                    self.noop[1] += 1
                    continue
                j = <long> (random_standard_uniform(self.bitgen) * (m + mv))
                if j < m:
                    fin = self._delta(n, -1, j, False, &dz)
                    if self._accept(fin, dz):
                        self._delta(n, -1, j, True, &dz)
                        self.accepted[1] += 1
                else:
                    fin = self._delta(n, j - m, -1, False, &dz)
                    if self._accept(fin, dz):
                        self._delta(n, j - m, -1, True, &dz)
                        self.accepted[1] += 1
            else:
                self.proposed[2] += 1
                m = self.real[n].size()
                mv = self.virt[n].size()
                if m == 0 or mv == 0:
                    self.noop[2] += 1
                    continue
                ir = <long> (random_standard_uniform(self.bitgen) * m)
                ia = <long> (random_standard_uniform(self.bitgen) * mv)
                fin = self._delta(n, ia, ir, False, &dz)
                if self._accept(fin, dz):
                    self._delta(n, ia, ir, True, &dz)
                    self.accepted[2] += 1

    def _check(self):
        if self.err:
            self.err = 0
            raise ConvergenceError("incomplete gamma evaluation did not converge inside the chain kernel")

    def run(self, long n_steps, double p_resample, double p_flip):
        with self.rng.bit_generator.lock:
            with nogil:
                self._run(n_steps, p_resample, p_flip)
        self._check()

    # -- inspection ----------------------------------------------------------------

    def counts(self):
        return (np.array([self.proposed[i] for i in range(3)]),
                np.array([self.accepted[i] for i in range(3)]),
                np.array([self.noop[i] for i in range(3)]))

    def reset_counts(self):
        for i in range(3):
            self.proposed[i] = 0
            self.accepted[i] = 0
            self.noop[i] = 0

    def real_events(self, int node):
        return np.sort(np.array(self.real[node], dtype=float))

    def virtual_events(self, int node):
        return np.sort(np.array(self.virt[node], dtype=float))

    def real_count(self, int node):
        return self.real[node].size()

    def flip_log_ratio(self, int node, double t, bint to_real):
        cdef int dz = 0
        cdef double fin
        if to_real:
            fin = self._delta(node, _find(self.virt[node], t), -1, False, &dz)
        else:
            fin = self._delta(node, -1, _find(self.real[node], t), False, &dz)
        self._check()
        return _combine(fin, dz)

    def swap_log_ratio(self, int node, double t_real, double t_virtual):
        cdef int dz = 0
        cdef long ir = _find(self.real[node], t_real)
        cdef long ia = _find(self.virt[node], t_virtual)
        cdef double fin = self._delta(node, ia, ir, False, &dz)
        self._check()
        return _combine(fin, dz)

    def apply_flip(self, int node, double t, bint to_real):
        cdef int dz = 0
        if to_real:
            self._delta(node, _find(self.virt[node], t), -1, True, &dz)
        else:
            self._delta(node, -1, _find(self.real[node], t), True, &dz)
        self._check()

    # -- likelihood pieces and gradients ---------------------------------------------

    def real_loglik_nodes(self):
        cdef size_t c, j
        cdef int e, src
        cdef double s, T = self.T
        cdef const double* par
        self.refresh()
        out = np.zeros(self.real.size())
        for c in range(self.real.size()):
            if self.is_top[c]:
                out[c] = self.real[c].size() * math.log(self.mu[c]) - self.mu[c] * T
                continue
            s = 0.0
            for j in range(self.lam[c].size()):
                if self.lam[c][j] <= 0.0:
                    s = -INFINITY
                    break
                s += log(self.lam[c][j])
            for e in self.parent_edges[c]:
                par = &self.epar[5 * e]
                src = self.e_parent[e]
                for j in range(self.real[src].size()):
                    s -= _Phi(par, T - self.real[src][j], &self.err)
            out[c] = s
        self._check()
        return out

    def virtual_loglik_nodes(self):
        cdef size_t j
        cdef int u, v, d
        cdef double s, T = self.T
        cdef const double* par
        self.refresh()
        out = np.zeros(self.real.size())
        for u in self.hidden:
            s = 0.0
            for j in range(self.lamv[u].size()):
                if self.lamv[u][j] <= 0.0:
                    s = -INFINITY
                    break
                s += log(self.lamv[u][j])
            s -= self.muv[u] * T
            for v in self.drivers[u]:
                par = &self.vpar[5 * v]
                d = self.v_driver[v]
                for j in range(self.real[d].size()):
                    s -= _Phi(par, self.real[d][j], &self.err)
                if self.terminal and self.layer[d] >= 1:
                    s -= _Phi(par, T, &self.err)
            out[u] = s
        self._check()
        return out

    def accumulate(self, g_real, g_virt, g_muv, double fd_rel):
        """Add natural-space gradients of the real and virtual objectives at the current state.

        Returns False (and adds nothing) when some intensity at an event is zero.
        """
        cdef double[:, ::1] gr = np.zeros_like(np.asarray(g_real, dtype=float))
        cdef double[:, ::1] gv = np.zeros_like(np.asarray(g_virt, dtype=float))
        cdef double[::1] gm = np.zeros_like(np.asarray(g_muv, dtype=float))
        cdef vector[double] eup = _shifted_rows(self.epar, fd_rel, 1.0)
        cdef vector[double] edn = _shifted_rows(self.epar, fd_rel, -1.0)
        cdef vector[double] vup = _shifted_rows(self.vpar, fd_rel, 1.0)
        cdef vector[double] vdn = _shifted_rows(self.vpar, fd_rel, -1.0)
        cdef bint ok
        self.refresh()
        with nogil:
            ok = self._accumulate(gr, gv, gm, fd_rel, eup, edn, vup, vdn)
        self._check()
        if not ok:
            return False
        g_real += np.asarray(gr)
        g_virt += np.asarray(gv)
        g_muv += np.asarray(gm)
        return True

    cdef bint _accumulate(self, double[:, ::1] gr, double[:, ::1] gv, double[::1] gm, double fd_rel,
                          vector[double]& eup, vector[double]& edn,
                          vector[double]& vup, vector[double]& vdn) noexcept nogil:
        cdef double T = self.T, lamx, inv_sum
        cdef int e, c, v, u, d
        cdef size_t j
        cdef vector[double] spans, drv, lamy
        for e in range(<int> self.e_parent.size()):
            c = self.e_child[e]
            for j in range(self.real[c].size()):
                lamx = self.lam[c][j]
                if lamx <= 0.0:
                    return False
                if not _event_terms(&self.epar[5 * e], &eup[5 * e], &edn[5 * e], self.real[c][j],
                                    self.real[self.e_parent[e]], 1.0, lamx, fd_rel, &gr[e, 0]):
                    return False
            spans.clear()
            for j in range(self.real[self.e_parent[e]].size()):
                spans.push_back(T - self.real[self.e_parent[e]][j])
            _compensator_terms(&self.epar[5 * e], &eup[5 * e], &edn[5 * e], spans, fd_rel, &gr[e, 0], &self.err)

        for u in self.hidden:
            lamy.clear()
            inv_sum = 0.0
            for j in range(self.real[u].size()):
                lamy.push_back(self._lam_virt_exact(u, self.real[u][j], -1, -1, False, 0.0))
                if lamy[j] <= 0.0:
                    return False
            for j in range(lamy.size()):
                inv_sum += 1.0 / lamy[j]
            gm[u] += inv_sum - T
            for v in self.drivers[u]:
                d = self.v_driver[v]
                drv = self.real[d]
                if self.terminal and self.layer[d] >= 1:
                    drv.push_back(T)
                for j in range(self.real[u].size()):
                    if not _event_terms(&self.vpar[5 * v], &vup[5 * v], &vdn[5 * v], self.real[u][j],
                                        drv, -1.0, lamy[j], fd_rel, &gv[v, 0]):
                        return False
                _compensator_terms(&self.vpar[5 * v], &vup[5 * v], &vdn[5 * v], drv, fd_rel, &gv[v, 0], &self.err)
        return True


cdef vector[double] _shifted_rows(vector[double]& rows, double fd_rel, double sign):
    # lgamma from the math module keeps the shifted kernels identical to the Python kernel
    cdef vector[double] out
    cdef size_t i
    cdef double p, a, b, lga
    for i in range(rows.size() // 5):
        p = rows[5 * i]
        a = rows[5 * i + 1] + sign * (fd_rel * rows[5 * i + 1])
        b = rows[5 * i + 2]
        lga = math.lgamma(a)
        out.push_back(p)
        out.push_back(a)
        out.push_back(b)
        out.push_back(log(p) + a * log(b) - lga)
        out.push_back(lga)
    return out


cdef bint _event_terms(const double* par, const double* up, const double* dn, double x,
                       vector[double]& sources, double sign, double lamx, double fd_rel, double* g) noexcept nogil:
    cdef double p = par[0], a = par[1], b = par[2], h = fd_rel * par[1]
    cdef double s_p = 0.0, s_b = 0.0, d_up = 0.0, d_dn = 0.0, dist, f, lu, ld
    cdef size_t j
    for j in range(sources.size()):
        dist = (x - sources[j]) if sign > 0 else (sources[j] - x)
        if dist <= 0.0:
            continue
        f = _phi(par, dist)
        s_p += f / p
        s_b += f * (a / b - dist)
        d_up += _phi(up, dist) - f
        d_dn += _phi(dn, dist) - f
    g[0] += s_p / lamx
    g[2] += s_b / lamx
    lu = lamx + d_up
    ld = lamx + d_dn
    if lu <= 0.0 or ld <= 0.0:
        return False
    g[1] += (log(lu) - log(ld)) / (2.0 * h)
    return True


cdef void _compensator_terms(const double* par, const double* up, const double* dn,
                             vector[double]& spans, double fd_rel, double* g, int* err) noexcept nogil:
    cdef double a = par[1], b = par[2], h = fd_rel * par[1], x
    cdef size_t j
    for j in range(spans.size()):
        x = spans[j]
        if x <= 0.0:
            continue
        g[0] -= _P(a, b * x, par[4], err)
        g[2] -= x * _phi(par, x) / b
        g[1] -= (_Phi(up, x, err) - _Phi(dn, x, err)) / (2.0 * h)
