"""The compiled chain kernel and the pure-Python one must agree bit for bit."""
import math

import numpy as np
import pytest

from dnsp import _backend
from dnsp._flat import event_lists, flatten, node_ids
from dnsp.mcem import grad_real, grad_virtual
from dnsp.mcmc import ratio_flip_r2v, ratio_flip_v2r, ratio_swap
from dnsp.model import real_loglik, virtual_loglik

from conftest import sampled_instance

PY = _backend.kernel_class("python")
try:
    CY = _backend.kernel_class("cython")
except ImportError:  # extension not built
    CY = None

needs_cython = pytest.mark.skipif(CY is None, reason="compiled kernel not available")


def make(cls, arch, sp, ev, st_, seed):
    flat = flatten(arch, sp, ev.T, st_.include_terminal_event)
    real, virt = event_lists(arch, ev, st_)
    return cls(flat, real, virt, np.random.default_rng(seed))


def test_default_backend_reported():
    assert _backend.BACKEND in ("python", "cython")


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        _backend.kernel_class("fortran")


@pytest.mark.parametrize("cls", [PY, CY], ids=["python", "cython"])
def test_kernel_ratios_match_reference(cls):
    if cls is None:
        pytest.skip("compiled kernel not available")
    rng = np.random.default_rng(31)
    for _ in range(200):
        arch, sp, ev, st_ = sampled_instance(rng)
        ker = make(cls, arch, sp, ev, st_, 0)
        ids = node_ids(arch)
        for n in arch.hidden_nodes():
            i = ids[n]
            for t in st_.virtual[n]:
                ref = ratio_flip_v2r(arch, sp, ev, st_, n[0], n[1], t)
                assert ker.flip_log_ratio(i, t, True) == pytest.approx(ref, rel=1e-10, abs=1e-10)
            for t in st_.real[n]:
                ref = ratio_flip_r2v(arch, sp, ev, st_, n[0], n[1], t)
                got = ker.flip_log_ratio(i, t, False)
                assert got == ref if math.isinf(ref) else got == pytest.approx(ref, rel=1e-10, abs=1e-10)
                for tv in st_.virtual[n]:
                    ref = ratio_swap(arch, sp, ev, st_, n[0], n[1], t, tv)
                    got = ker.swap_log_ratio(i, t, tv)
                    assert got == ref if math.isinf(ref) else got == pytest.approx(ref, rel=1e-10, abs=1e-10)
        assert ker.real_loglik_nodes().sum() == pytest.approx(real_loglik(arch, sp, ev, st_), rel=1e-12)
        assert ker.virtual_loglik_nodes().sum() == pytest.approx(virtual_loglik(arch, sp, ev, st_), rel=1e-12)


@pytest.mark.parametrize("cls", [PY, CY], ids=["python", "cython"])
def test_kernel_gradients_match_reference(cls):
    if cls is None:
        pytest.skip("compiled kernel not available")
    rng = np.random.default_rng(8)
    done = 0
    while done < 40:
        arch, sp, ev, st_ = sampled_instance(rng)
        ker = make(cls, arch, sp, ev, st_, 0)
        gr = np.zeros((len(arch.real_keys), 3))
        gv = np.zeros((len(arch.virtual_keys), 3))
        gm = np.zeros(len(node_ids(arch)))
        ok = ker.accumulate(gr, gv, gm, 1e-4)
        ref_r = grad_real(arch, sp, ev, st_)
        ref_v = grad_virtual(arch, sp, ev, st_)
        assert ok == (ref_r.valid and ref_v.valid)
        if not ok:
            continue
        chain_r = np.array([arch.real_edges[e].chain_rule() for e in arch.real_keys])
        chain_v = np.array([arch.virtual_edges[e].chain_rule() for e in arch.virtual_keys])
        np.testing.assert_allclose(gr * chain_r, ref_r.real, rtol=1e-8, atol=1e-9)
        np.testing.assert_allclose(gv * chain_v, ref_v.virtual, rtol=1e-8, atol=1e-9)
        done += 1


@needs_cython
def test_trajectories_identical():
    rng = np.random.default_rng(4)
    for seed in range(20):
        arch, sp, ev, st_ = sampled_instance(rng)
        a = make(PY, arch, sp, ev, st_, seed)
        b = make(CY, arch, sp, ev, st_, seed)
        for _ in range(5):
            a.run(300, 0.2, 0.6)
            b.run(300, 0.2, 0.6)
            for i in range(len(node_ids(arch))):
                if i in a.hidden:
                    assert a.real_events(i).tobytes() == b.real_events(i).tobytes()
                    assert a.virtual_events(i).tobytes() == b.virtual_events(i).tobytes()
            assert [list(x) for x in a.counts()] == [list(x) for x in b.counts()]
            assert a.real_loglik_nodes().tobytes() == b.real_loglik_nodes().tobytes()
