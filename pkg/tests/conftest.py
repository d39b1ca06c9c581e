import random

import pytest

from bamcbr.bam import BamState
from bamcbr.model import (
    BamId,
    Case,
    ContextInfo,
    MeasurementSnapshot,
    ProblemDescriptor,
    ProblemKind,
    ToleranceProfile,
)
from bamcbr.sim import POC_PROFILES, seed_poc_store

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        _CRITERIA.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def poc_store():
    return seed_poc_store()


@pytest.fixture
def carlos():
    return POC_PROFILES["Carlos"]


def make_case(case_id="q", bam=BamId.MAM, limits=None, bcs=(256, 512, 1024),
              util=(50, 50, 50), block=(10, 10, 10), pre=(0, 0, 0), dev=(0, 0, 0),
              kind=ProblemKind.HIGH_BLOCKING, tcs=(0,), window=0):
    return Case(
        id=case_id,
        context=ContextInfo(bam, limits or POC_PROFILES["Carlos"], bcs),
        problem=ProblemDescriptor(kind, tcs),
        measurements=MeasurementSnapshot(util, block, pre, dev, window),
    )


def random_case(rng: random.Random, case_id: str = "r", n_tc: int = 3) -> Case:
    bcs = sorted(rng.choice([64, 128, 256, 384, 512, 768, 1024, 2048]) for _ in range(n_tc))
    pct = lambda: round(rng.uniform(0, 100), 3)  # noqa: E731
    vec = lambda: tuple(pct() for _ in range(n_tc))  # noqa: E731
    limits = ToleranceProfile(f"p{rng.randrange(100)}", vec(), vec(), vec(), vec())
    return Case(
        id=case_id,
        context=ContextInfo(rng.choice(list(BamId)), limits, tuple(bcs)),
        problem=ProblemDescriptor(rng.choice(list(ProblemKind)), (rng.randrange(n_tc),)),
        measurements=MeasurementSnapshot(vec(), vec(), vec(), vec(), rng.randrange(1000)),
    )


def reference_similarity(q, s, k=128.0):
    """Leaf-by-leaf recomputation straight from the case fields, uniform weights."""
    n = len(q.context.bcs)
    bam = 1.0 if q.context.bam == s.context.bam else 0.0
    bw = sum(1.0 if abs(a - b) <= k else 0.0 for a, b in zip(q.context.bcs, s.context.bcs)) / n
    tol_terms = []
    for m in ("blocking", "preemption", "devolution"):
        for a, b in zip(getattr(q.context.limits, m), getattr(s.context.limits, m)):
            tol_terms.append(1 - abs(a - b) / 100)
    meas_terms = []
    for m in ("utilization", "blocking", "preemption", "devolution"):
        for a, b in zip(getattr(q.measurements, m), getattr(s.measurements, m)):
            meas_terms.append(1 - abs(a - b) / 100)
    tol = sum(tol_terms) / len(tol_terms)
    meas = sum(meas_terms) / len(meas_terms)
    return (bam + bw + tol + meas) / 4


EPS = 1e-6


def check_invariants(state: BamState) -> None:
    """Constraint oracle computed from the LSP list alone."""
    n = state.n_tc
    alloc = [0.0] * n
    regular = [0.0] * n
    for lsp in state.lsps.values():
        assert 0.0 <= lsp.borrowed <= lsp.bandwidth + EPS
        if lsp.borrowed > 0:
            assert state.model is BamId.ATCS and lsp.tc < n - 1
        alloc[lsp.tc] += lsp.bandwidth
        regular[lsp.tc] += lsp.bandwidth - lsp.borrowed
    assert sum(alloc) <= state.capacity + EPS
    if state.model is BamId.MAM:
        for c in range(n):
            assert alloc[c] <= state.bcs[c] + EPS
    else:
        for d in range(n):
            assert sum(regular[: d + 1]) <= state.bcs[d] + EPS
    c = state.counters
    for tc in range(n):
        assert c.requests[tc] == c.admitted[tc] + c.blocked[tc]
    if state.model is not BamId.ATCS:
        assert sum(c.devolutions) == 0
    if state.model is BamId.MAM:
        assert sum(c.preemptions) == 0
    # the top class never reclaims by preemption, TC0 never needs to devolve
    assert c.preemptions[n - 1] == 0
    assert c.devolutions[0] == 0
