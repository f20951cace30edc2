"""Pure-Python chain kernel.

Mirrors ``_chain_ext.pyx`` operation for operation, including the order in
which random numbers are consumed, so both backends follow the same
trajectory for the same generator state.

Events are kept per node in unsorted lists alongside cached intensities at
each event (``lam`` for real events, ``lamv`` for virtual events).  A proposal
only touches the proposing node, its children's real events and the virtual
events of the nodes it drives, and the log acceptance ratio is accumulated
from those cached values.

Zero intensities are handled as the limit of an infinitesimal intensity: each
event whose intensity becomes zero adds one to a counter, each event leaving
zero subtracts one.  A positive net count rejects, a negative one accepts, and
a zero count falls back to the finite part.
"""
from __future__ import annotations

import math

import numpy as np

from .special import inv_reg_lower_inc_gamma, reg_lower_inc_gamma

CANCEL = 1e-9
_ONE_MINUS = 1.0 - 2.0 ** -53


def _phi(par, x):
    if x <= 0.0:
        return 0.0
    return math.exp(par[3] + (par[1] - 1.0) * math.log(x) - par[2] * x)


def _Phi(par, x):
    if x <= 0.0:
        return 0.0
    return par[0] * reg_lower_inc_gamma(par[1], par[2] * x, lgamma_a=par[4])


def _combine(fin, dz):
    if dz > 0:
        return -math.inf
    if dz < 0:
        return math.inf
    return fin


class PyChainKernel:
    backend = "python"

    def __init__(self, flat, real, virtual, rng: np.random.Generator):
        self.rng = rng
        self.real = [[float(x) for x in ev] for ev in real]
        self.virt = [[float(x) for x in ev] for ev in virtual]
        self.proposed = [0, 0, 0]
        self.accepted = [0, 0, 0]
        self.noop = [0, 0, 0]
        self.set_model(flat)

    # -- structure -----------------------------------------------------------------

    def set_model(self, flat):
        n = flat.n_nodes
        self.T = float(flat.T)
        self.terminal = bool(flat.include_terminal)
        self.layer = [int(x) for x in flat.layer]
        self.hidden = [int(x) for x in flat.hidden]
        self.is_top = [bool(x) for x in flat.is_top]
        self.mu = [float(x) for x in flat.mu]
        self.muv = [float(x) for x in flat.mu_virtual]
        self.e_parent = [int(x) for x in flat.e_parent]
        self.e_child = [int(x) for x in flat.e_child]
        self.epar = [tuple(float(v) for v in row) for row in flat.e_par]
        self.v_driver = [int(x) for x in flat.v_driver]
        self.v_target = [int(x) for x in flat.v_target]
        self.vpar = [tuple(float(v) for v in row) for row in flat.v_par]
        self.parent_edges = [[] for _ in range(n)]
        self.child_edges = [[] for _ in range(n)]
        self.drivers = [[] for _ in range(n)]
        self.driven = [[] for _ in range(n)]
        for e in range(len(self.e_parent)):
            self.child_edges[self.e_parent[e]].append(e)
            self.parent_edges[self.e_child[e]].append(e)
        for v in range(len(self.v_driver)):
            self.driven[self.v_driver[v]].append(v)
            self.drivers[self.v_target[v]].append(v)
        self.refresh()

    def set_events(self, node, times):
        self.real[node] = [float(x) for x in times]
        self.refresh()

    def refresh(self):
        self.lam = [[self._lam_real_exact(c, x) for x in self.real[c]] for c in range(len(self.real))]
        self.lamv = [[self._lam_virt_exact(u, y) for y in self.virt[u]] if self.layer[u] >= 1 else []
                     for u in range(len(self.virt))]

    # -- intensities ---------------------------------------------------------------

    def _lam_real_exact(self, c, x, n=-1, skip=-1, has_add=False, add=0.0):
        if self.is_top[c]:
            return self.mu[c]
        s = 0.0
        for e in self.parent_edges[c]:
            par = self.epar[e]
            src = self.e_parent[e]
            ev = self.real[src]
            for j in range(len(ev)):
                if src == n and j == skip:
                    continue
                s += _phi(par, x - ev[j])
            if src == n and has_add:
                s += _phi(par, x - add)
        return s

    def _lam_virt_exact(self, u, y, n=-1, skip=-1, has_add=False, add=0.0):
        s = self.muv[u]
        for v in self.drivers[u]:
            par = self.vpar[v]
            d = self.v_driver[v]
            ev = self.real[d]
            for j in range(len(ev)):
                if d == n and j == skip:
                    continue
                s += _phi(par, ev[j] - y)
            if d == n and has_add:
                s += _phi(par, add - y)
            if self.terminal and self.layer[d] >= 1:
                s += _phi(par, self.T - y)
        return s

    # -- proposals -----------------------------------------------------------------

    def _delta(self, n, ia, ir, apply):
        """Log ratio pieces for moving virt[n][ia] to real and/or real[n][ir] to virtual."""
        T = self.T
        fin = 0.0
        dz = 0
        has_a = ia >= 0
        has_r = ir >= 0
        a = self.virt[n][ia] if has_a else 0.0
        r = self.real[n][ir] if has_r else 0.0
        lam_a = 0.0
        lamv_r = 0.0
        if has_a:
            lam_a = self._lam_real_exact(n, a)
            if lam_a > 0.0:
                fin += math.log(lam_a)
            else:
                dz += 1
            old = self.lamv[n][ia]
            if old > 0.0:
                fin -= math.log(old)
            else:
                dz -= 1
        if has_r:
            old = self.lam[n][ir]
            if old > 0.0:
                fin -= math.log(old)
            else:
                dz -= 1
            lamv_r = self._lam_virt_exact(n, r)
            if lamv_r > 0.0:
                fin += math.log(lamv_r)
            else:
                dz += 1

        for e in self.child_edges[n]:
            par = self.epar[e]
            c = self.e_child[e]
            if has_a:
                fin -= _Phi(par, T - a)
            if has_r:
                fin += _Phi(par, T - r)
            rc = self.real[c]
            lc = self.lam[c]
            for j in range(len(rc)):
                x = rc[j]
                d = 0.0
                if has_a:
                    d += _phi(par, x - a)
                if has_r:
                    d -= _phi(par, x - r)
                if d == 0.0:
                    continue
                old = lc[j]
                new = old + d
                if has_r and new <= CANCEL * old:
                    new = self._lam_real_exact(c, x, n, ir, has_a, a)
                if old > 0.0:
                    fin -= math.log(old)
                else:
                    dz -= 1
                if new > 0.0:
                    fin += math.log(new)
                else:
                    dz += 1
                if apply:
                    lc[j] = new

        for v in self.driven[n]:
            par = self.vpar[v]
            u = self.v_target[v]
            if has_a:
                fin -= _Phi(par, a)
            if has_r:
                fin += _Phi(par, r)
            vu = self.virt[u]
            lu = self.lamv[u]
            for j in range(len(vu)):
                y = vu[j]
                d = 0.0
                if has_a:
                    d += _phi(par, a - y)
                if has_r:
                    d -= _phi(par, r - y)
                if d == 0.0:
                    continue
                old = lu[j]
                new = old + d
                if has_r and new <= CANCEL * old:
                    new = self._lam_virt_exact(u, y, n, ir, has_a, a)
                if old > 0.0:
                    fin -= math.log(old)
                else:
                    dz -= 1
                if new > 0.0:
                    fin += math.log(new)
                else:
                    dz += 1
                if apply:
                    lu[j] = new

        if apply:
            if has_a and has_r:
                self.real[n][ir] = a
                self.lam[n][ir] = lam_a
                self.virt[n][ia] = r
                self.lamv[n][ia] = lamv_r
            elif has_a:
                self._swap_remove(self.virt[n], self.lamv[n], ia)
                self.real[n].append(a)
                self.lam[n].append(lam_a)
            elif has_r:
                self._swap_remove(self.real[n], self.lam[n], ir)
                self.virt[n].append(r)
                self.lamv[n].append(lamv_r)
        return fin, dz

    @staticmethod
    def _swap_remove(times, lams, i):
        times[i] = times[-1]
        lams[i] = lams[-1]
        times.pop()
        lams.pop()

    def _resample(self, n):
        rng = self.rng
        T = self.T
        new = []
        muv = self.muv[n]
        if muv > 0.0:
            cnt = int(rng.poisson(muv * T))
            for _ in range(cnt):
                new.append(rng.random() * T)
        for v in self.drivers[n]:
            par = self.vpar[v]
            d = self.v_driver[v]
            ev = self.real[d]
            m = len(ev)
            extra = 1 if (self.terminal and self.layer[d] >= 1) else 0
            for j in range(m + extra):
                tc = ev[j] if j < m else T
                if tc <= 0.0:
                    continue
                pt = reg_lower_inc_gamma(par[1], par[2] * tc, lgamma_a=par[4])
                mass = par[0] * pt
                if mass <= 0.0:
                    continue
                cnt = int(rng.poisson(mass))
                for _ in range(cnt):
                    q = rng.random() * pt
                    if q > _ONE_MINUS:
                        q = _ONE_MINUS
                    new.append(tc - inv_reg_lower_inc_gamma(par[1], q, lgamma_a=par[4]) / par[2])
        self.virt[n] = new
        self.lamv[n] = [self._lam_virt_exact(n, y) for y in new]

    def _accept(self, fin, dz):
        lr = _combine(fin, dz)
        if lr >= 0.0:
            return True
        return self.rng.random() < math.exp(lr)

    def run(self, n_steps, p_resample, p_flip):
        rng = self.rng
        nh = len(self.hidden)
        if nh == 0:
            return
        p12 = p_resample + p_flip
        for _ in range(int(n_steps)):
            n = self.hidden[int(rng.random() * nh)]
            w = rng.random()
            if w < p_resample:
                self.proposed[0] += 1
                self._resample(n)
                self.accepted[0] += 1
            elif w < p12:
                self.proposed[1] += 1
                m = len(self.real[n])
                mv = len(self.virt[n])
                if m + mv == 0:
                    self.noop[1] += 1
                    continue
                j = int(rng.random() * (m + mv))
                if j < m:
                    fin, dz = self._delta(n, -1, j, False)
                    if self._accept(fin, dz):
                        self._delta(n, -1, j, True)
                        self.accepted[1] += 1
                else:
                    fin, dz = self._delta(n, j - m, -1, False)
                    if self._accept(fin, dz):
                        self._delta(n, j - m, -1, True)
                        self.accepted[1] += 1
            else:
                self.proposed[2] += 1
                m = len(self.real[n])
                mv = len(self.virt[n])
                if m == 0 or mv == 0:
                    self.noop[2] += 1
                    continue
                ir = int(rng.random() * m)
                ia = int(rng.random() * mv)
                fin, dz = self._delta(n, ia, ir, False)
                if self._accept(fin, dz):
                    self._delta(n, ia, ir, True)
                    self.accepted[2] += 1

    # -- inspection ----------------------------------------------------------------

    def counts(self):
        return np.array(self.proposed), np.array(self.accepted), np.array(self.noop)

    def reset_counts(self):
        self.proposed = [0, 0, 0]
        self.accepted = [0, 0, 0]
        self.noop = [0, 0, 0]

    def real_events(self, node):
        return np.sort(np.array(self.real[node], dtype=float))

    def virtual_events(self, node):
        return np.sort(np.array(self.virt[node], dtype=float))

    def real_count(self, node):
        return len(self.real[node])

    def flip_log_ratio(self, node, t, to_real):
        if to_real:
            return _combine(*self._delta(node, self.virt[node].index(t), -1, False))
        return _combine(*self._delta(node, -1, self.real[node].index(t), False))

    def swap_log_ratio(self, node, t_real, t_virtual):
        ir = self.real[node].index(t_real)
        ia = self.virt[node].index(t_virtual)
        return _combine(*self._delta(node, ia, ir, False))

    def apply_flip(self, node, t, to_real):
        if to_real:
            self._delta(node, self.virt[node].index(t), -1, True)
        else:
            self._delta(node, -1, self.real[node].index(t), True)

    # -- likelihood pieces and gradients ---------------------------------------------

    def real_loglik_nodes(self):
        """Per-node real log-likelihood, from exact intensities."""
        self.refresh()
        out = np.zeros(len(self.real))
        T = self.T
        for c in range(len(self.real)):
            if self.is_top[c]:
                out[c] = len(self.real[c]) * math.log(self.mu[c]) - self.mu[c] * T
                continue
            s = 0.0
            for lam in self.lam[c]:
                if lam <= 0.0:
                    s = -math.inf
                    break
                s += math.log(lam)
            for e in self.parent_edges[c]:
                par = self.epar[e]
                for tp in self.real[self.e_parent[e]]:
                    s -= _Phi(par, T - tp)
            out[c] = s
        return out

    def virtual_loglik_nodes(self):
        self.refresh()
        out = np.zeros(len(self.real))
        T = self.T
        for u in self.hidden:
            s = 0.0
            for lam in self.lamv[u]:
                if lam <= 0.0:
                    s = -math.inf
                    break
                s += math.log(lam)
            s -= self.muv[u] * T
            for v in self.drivers[u]:
                par = self.vpar[v]
                d = self.v_driver[v]
                for tc in self.real[d]:
                    s -= _Phi(par, tc)
                if self.terminal and self.layer[d] >= 1:
                    s -= _Phi(par, T)
            out[u] = s
        return out

    def accumulate(self, g_real, g_virt, g_muv, fd_rel):
        """Add natural-space gradients of the real and virtual objectives at the current state.

        Returns False (and adds nothing) when some intensity at an event is zero.
        """
        self.refresh()
        T = self.T
        gr = np.zeros_like(g_real)
        gv = np.zeros_like(g_virt)
        gm = np.zeros_like(g_muv)

        for e in range(len(self.e_parent)):
            par = self.epar[e]
            c = self.e_child[e]
            src = self.real[self.e_parent[e]]
            for j, x in enumerate(self.real[c]):
                lamx = self.lam[c][j]
                if lamx <= 0.0:
                    return False
                if not _edge_event_terms(par, x, src, 1.0, lamx, fd_rel, gr[e]):
                    return False
            _edge_compensator_terms(par, [T - tp for tp in src], fd_rel, gr[e])

        for u in self.hidden:
            data = self.real[u]
            lamy = [self._lam_virt_exact(u, y) for y in data]
            if any(l <= 0.0 for l in lamy):
                return False
            gm[u] += sum(1.0 / l for l in lamy) - T
            for v in self.drivers[u]:
                par = self.vpar[v]
                d = self.v_driver[v]
                drv = list(self.real[d])
                if self.terminal and self.layer[d] >= 1:
                    drv.append(T)
                for j, y in enumerate(data):
                    if not _edge_event_terms(par, y, drv, -1.0, lamy[j], fd_rel, gv[v]):
                        return False
                _edge_compensator_terms(par, drv, fd_rel, gv[v])

        g_real += gr
        g_virt += gv
        g_muv += gm
        return True


def _shifted(par, h):
    p, a, b = par[0], par[1] + h, par[2]
    lga = math.lgamma(a)
    return (p, a, b, math.log(p) + a * math.log(b) - lga, lga)


def _edge_event_terms(par, x, sources, sign, lamx, fd_rel, g):
    """Event part of d/d(p, alpha, beta) of log(lam(x)) for one edge.

    ``sign`` = +1 for real kernels (argument x - s), -1 for virtual kernels (s - x).
    """
    p, a, b = par[0], par[1], par[2]
    h = fd_rel * a
    up = _shifted(par, h)
    dn = _shifted(par, -h)
    s_p = s_b = d_up = d_dn = 0.0
    for s in sources:
        dist = (x - s) if sign > 0 else (s - x)
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
    g[1] += (math.log(lu) - math.log(ld)) / (2.0 * h)
    return True


def _edge_compensator_terms(par, spans, fd_rel, g):
    """Compensator part: minus d/d(p, alpha, beta) of sum Phi(span)."""
    a, b = par[1], par[2]
    h = fd_rel * a
    up = _shifted(par, h)
    dn = _shifted(par, -h)
    for x in spans:
        if x <= 0.0:
            continue
        g[0] -= reg_lower_inc_gamma(a, b * x, lgamma_a=par[4])
        g[2] -= x * _phi(par, x) / b
        g[1] -= (_Phi(up, x) - _Phi(dn, x)) / (2.0 * h)
