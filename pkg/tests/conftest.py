"""Shared builders for small random models and states."""
from __future__ import annotations

import numpy as np
import pytest

from dnsp.model import (
    EventSequence,
    KernelParams,
    LatentState,
    SequenceParams,
    fully_connected_architecture,
    n_hidden_architecture,
)


def random_kernel(rng: np.random.Generator) -> KernelParams:
    return KernelParams.from_natural(rng.uniform(0.3, 2.0), rng.uniform(0.6, 3.0), rng.uniform(0.5, 4.0))


def random_arch(rng: np.random.Generator):
    kind = rng.integers(3)
    init = lambda e: random_kernel(rng)  # noqa: E731
    if kind == 0:
        return n_hidden_architecture(1, int(rng.integers(1, 3)), init, init)
    if kind == 1:
        return n_hidden_architecture(2, int(rng.integers(1, 3)), init, init)
    K = [int(rng.integers(1, 3)), int(rng.integers(1, 3)), 1]
    return fully_connected_architecture(K, init, init)


def random_times(rng, n_max, T):
    return np.sort(rng.uniform(0.0, T, int(rng.integers(0, n_max + 1))))


def random_instance(rng: np.random.Generator, T: float | None = None, terminal: bool | None = None):
    """Random architecture, rates, evidence and hidden state (not necessarily of positive density)."""
    arch = random_arch(rng)
    T = float(rng.uniform(1.0, 4.0)) if T is None else T
    sp = SequenceParams(tuple(rng.uniform(0.2, 1.5, arch.K[-1])),
                        {n: float(rng.uniform(0.0, 1.0)) for n in arch.hidden_nodes()})
    evidence = EventSequence(T, tuple(random_times(rng, 4, T) for _ in range(arch.K[0])))
    terminal = bool(rng.integers(2)) if terminal is None else terminal
    state = LatentState.empty(arch, terminal)
    for n in arch.hidden_nodes():
        state.real[n] = random_times(rng, 3, T)
        state.virtual[n] = random_times(rng, 3, T)
    return arch, sp, evidence, state


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sampled_instance(rng: np.random.Generator, terminal: bool | None = None):
    """Random model with hidden reals and evidence drawn from it, plus random virtual events.

    Virtual base rates are strictly positive, so every such state has finite density.
    """
    from dnsp.simulate import forward_sample

    arch = random_arch(rng)
    T = float(rng.uniform(1.0, 3.0))
    sp = SequenceParams(tuple(rng.uniform(0.3, 1.2, arch.K[-1])),
                        {n: float(rng.uniform(0.05, 1.0)) for n in arch.hidden_nodes()})
    state, evidence = forward_sample(arch, sp, T, rng)
    state.include_terminal_event = bool(rng.integers(2)) if terminal is None else terminal
    for n in arch.hidden_nodes():
        state.virtual[n] = random_times(rng, 3, T)
    return arch, sp, evidence, state


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are printed at the end of the run."""
    def add(number: int, ok: bool, detail: str):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}")
        print(ACCEPTANCE_LINES[-1])
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
