"""Single-link DS-TE bandwidth allocation under MAM, RDM and AllocTC-Sharing.

TC0 is the highest-priority class. BC vectors are nondecreasing for the
nested models, so BC[c] bounds the joint reservation of TC0..TCc and the
last BC equals the link capacity.

* MAM: each class is capped by its own BC; no preemption, no devolution.
* RDM: nested caps. A class may preempt lower-priority LSPs that crowd it
  out of a doll it belongs to.
* ATCS: RDM plus high-priority borrowing of idle bandwidth beyond the
  class's own dolls. Borrowed bandwidth is handed back (the borrowing LSP is
  torn down) when a lower-priority class needs it; that is a devolution,
  charged to the reclaiming class.

Preemption and devolution counters are charged to the class that initiates
reclamation, not to the class that loses its LSPs.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .model import BamId, MeasurementSnapshot

logger = logging.getLogger(__name__)

EPS = 1e-9


class BamConfigError(ValueError):
    pass


class UnknownLspError(KeyError):
    pass


@dataclass
class Lsp:
    id: int
    tc: int
    bandwidth: float
    admitted_at: float = 0.0
    borrowed: float = 0.0

    @property
    def regular(self) -> float:
        return self.bandwidth - self.borrowed


class AdmissionKind(str, Enum):
    ADMITTED = "Admitted"
    PREEMPTION = "AdmittedWithPreemption"
    DEVOLUTION = "AdmittedWithDevolution"
    BLOCKED = "Blocked"


@dataclass(frozen=True)
class AdmissionOutcome:
    kind: AdmissionKind
    lsp_id: Optional[int] = None
    preempted: tuple[int, ...] = ()
    devolved: tuple[int, ...] = ()
    reason: str = ""
    borrowed: float = 0.0

    @property
    def admitted(self) -> bool:
        return self.kind is not AdmissionKind.BLOCKED


@dataclass(frozen=True)
class MigrationReport:
    model: BamId
    bcs: tuple[float, ...]
    losses: tuple[int, ...] = ()


@dataclass
class WindowCounters:
    requests: list[int]
    admitted: list[int]
    blocked: list[int]
    preemptions: list[int]
    devolutions: list[int]

    @classmethod
    def zeros(cls, n: int) -> "WindowCounters":
        return cls(*([0] * n for _ in range(5)))


def validate_bcs(model: BamId, bcs: Sequence[float], capacity: float, n_tc: Optional[int] = None) -> None:
    if n_tc is not None and len(bcs) != n_tc:
        raise BamConfigError(f"expected {n_tc} BCs, got {len(bcs)}")
    if not bcs:
        raise BamConfigError("empty BC vector")
    if not (math.isfinite(capacity) and capacity > 0):
        raise BamConfigError(f"capacity must be > 0, got {capacity}")
    if any(not math.isfinite(b) or b <= 0 for b in bcs):
        raise BamConfigError(f"BCs must be > 0: {list(bcs)}")
    if model in (BamId.RDM, BamId.ATCS):
        if any(a > b for a, b in zip(bcs, bcs[1:])):
            raise BamConfigError(f"{model.value} BCs must be nondecreasing: {list(bcs)}")
        if abs(bcs[-1] - capacity) > EPS:
            raise BamConfigError(f"{model.value} needs BC[last] == capacity ({bcs[-1]} != {capacity})")


class BamState:
    """Mutable link state: model, BCs, active LSPs and window counters."""

    def __init__(self, model: BamId, bcs: Sequence[float], capacity: float):
        model = BamId(model)
        bcs = tuple(float(b) for b in bcs)
        validate_bcs(model, bcs, float(capacity))
        self.model = model
        self.bcs = bcs
        self.capacity = float(capacity)
        self.lsps: dict[int, Lsp] = {}
        self.counters = WindowCounters.zeros(len(bcs))
        self._next_id = 0

    @property
    def n_tc(self) -> int:
        return len(self.bcs)

    def clone(self) -> "BamState":
        return copy.deepcopy(self)

    # --- accounting --------------------------------------------------------

    def alloc(self) -> list[float]:
        out = [0.0] * self.n_tc
        for lsp in self.lsps.values():
            out[lsp.tc] += lsp.bandwidth
        return out

    def regular_alloc(self) -> list[float]:
        out = [0.0] * self.n_tc
        for lsp in self.lsps.values():
            out[lsp.tc] += lsp.regular
        return out

    def total(self) -> float:
        return math.fsum(lsp.bandwidth for lsp in self.lsps.values())

    def borrowed_total(self) -> float:
        return math.fsum(lsp.borrowed for lsp in self.lsps.values())

    def free(self) -> float:
        return self.capacity - self.total()

    # --- operations --------------------------------------------------------

    def admit(self, tc: int, bandwidth: float, now: float = 0.0, lsp_id: Optional[int] = None) -> AdmissionOutcome:
        if not 0 <= tc < self.n_tc:
            raise ValueError(f"TC{tc} out of range")
        if not (math.isfinite(bandwidth) and bandwidth > 0):
            raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
        if lsp_id is None:
            lsp_id = self._next_id
        if lsp_id in self.lsps:
            raise ValueError(f"LSP {lsp_id} already active")
        self._next_id = max(self._next_id, lsp_id + 1)
        self.counters.requests[tc] += 1

        if bandwidth > self.capacity + EPS:
            return self._blocked(tc, "oversize")
        if self.model is BamId.MAM:
            plan = self._plan_mam(tc, bandwidth)
        else:
            plan = self._plan_nested(tc, bandwidth)
        if plan is None:
            return self._blocked(tc, "bandwidth constraint")

        preempted, devolved, borrowed = plan
        for vid in preempted + devolved:
            del self.lsps[vid]
        self.lsps[lsp_id] = Lsp(lsp_id, tc, float(bandwidth), now, borrowed)
        self.counters.admitted[tc] += 1
        self.counters.preemptions[tc] += len(preempted)
        self.counters.devolutions[tc] += len(devolved)
        if preempted:
            kind = AdmissionKind.PREEMPTION
        elif devolved:
            kind = AdmissionKind.DEVOLUTION
        else:
            kind = AdmissionKind.ADMITTED
        return AdmissionOutcome(kind, lsp_id, tuple(preempted), tuple(devolved), borrowed=borrowed)

    def _blocked(self, tc: int, reason: str) -> AdmissionOutcome:
        self.counters.blocked[tc] += 1
        return AdmissionOutcome(AdmissionKind.BLOCKED, reason=reason)

    def _plan_mam(self, tc: int, bw: float):
        alloc = self.alloc()
        if alloc[tc] + bw <= self.bcs[tc] + EPS and self.total() + bw <= self.capacity + EPS:
            return [], [], 0.0
        return None

    def _victim_order(self, lsps: Iterable[Lsp]) -> list[Lsp]:
        # lowest priority first, most recently admitted first
        return sorted(lsps, key=lambda l: (-l.tc, -l.admitted_at, -l.id))

    def _plan_nested(self, tc: int, bw: float):
        """Admission plan under RDM/ATCS: (preempted ids, devolved ids, borrowed)."""
        n = self.n_tc
        reg = self.regular_alloc()
        inner = math.fsum(reg[: tc + 1])

        if inner + bw <= self.bcs[tc] + EPS:
            # regular admission, possibly crowding out lower classes
            removed: set[int] = set()
            preempted: list[int] = []
            doll_use = [math.fsum(reg[: d + 1]) + (bw if d >= tc else 0.0) for d in range(n)]
            pool = self._victim_order(l for l in self.lsps.values() if l.tc > tc)
            for d in range(tc, n):
                for victim in pool:
                    if doll_use[d] <= self.bcs[d] + EPS:
                        break
                    if victim.id in removed or victim.tc > d:
                        continue
                    removed.add(victim.id)
                    preempted.append(victim.id)
                    for e in range(victim.tc, n):
                        doll_use[e] -= victim.regular
            # the link itself may still be full of borrowed bandwidth
            excess = self.total() + bw - self.capacity
            excess -= math.fsum(self.lsps[i].bandwidth for i in removed)
            devolved: list[int] = []
            if excess > EPS:
                borrowers = [l for l in self.lsps.values() if l.borrowed > 0 and l.id not in removed]
                higher = self._victim_order(l for l in borrowers if l.tc < tc)
                lower = self._victim_order(l for l in borrowers if l.tc > tc)
                for victim in higher:
                    if excess <= EPS:
                        break
                    devolved.append(victim.id)
                    excess -= victim.bandwidth
                for victim in lower:
                    if excess <= EPS:
                        break
                    preempted.append(victim.id)
                    excess -= victim.bandwidth
            if excess > EPS:
                return None
            return preempted, devolved, 0.0

        if self.model is not BamId.ATCS or tc == n - 1:
            return None
        # borrow idle bandwidth from lower-priority pools; no reclamation
        regular = max(0.0, self.bcs[tc] - inner)
        for d in range(tc + 1, n):
            if math.fsum(reg[: d + 1]) + regular > self.bcs[d] + EPS:
                return None
        if bw > self.free() + EPS:
            return None
        return [], [], bw - regular

    def release(self, lsp_id: int) -> Lsp:
        try:
            return self.lsps.pop(lsp_id)
        except KeyError:
            raise UnknownLspError(lsp_id) from None

    def is_active(self, lsp_id: int) -> bool:
        return lsp_id in self.lsps

    def switch_bam(self, model: BamId, bcs: Optional[Sequence[float]] = None) -> MigrationReport:
        """Move to a new model and/or BC vector, re-validating every LSP.

        LSPs are re-admitted in priority order (TC0 first, oldest first)
        without any reclamation; those that no longer fit are torn down and
        reported as migration losses.
        """
        model = BamId(model)
        new_bcs = tuple(float(b) for b in (bcs if bcs is not None else self.bcs))
        validate_bcs(model, new_bcs, self.capacity, self.n_tc)

        fresh = BamState(model, new_bcs, self.capacity)
        losses: list[int] = []
        for lsp in sorted(self.lsps.values(), key=lambda l: (l.tc, l.admitted_at, l.id)):
            borrowed = fresh._fit_without_reclaim(lsp.tc, lsp.bandwidth)
            if borrowed is None:
                losses.append(lsp.id)
            else:
                fresh.lsps[lsp.id] = Lsp(lsp.id, lsp.tc, lsp.bandwidth, lsp.admitted_at, borrowed)
        self.model, self.bcs = model, new_bcs
        self.lsps = {i: fresh.lsps[i] for i in self.lsps if i in fresh.lsps}
        if losses:
            logger.info("switch to %s lost %d LSP(s)", model.value, len(losses))
        return MigrationReport(model, new_bcs, tuple(losses))

    def _fit_without_reclaim(self, tc: int, bw: float) -> Optional[float]:
        """Borrowed amount if the LSP fits as-is, else None."""
        if bw > self.free() + EPS:
            return None
        if self.model is BamId.MAM:
            return 0.0 if self.alloc()[tc] + bw <= self.bcs[tc] + EPS else None
        reg = self.regular_alloc()
        dolls = [math.fsum(reg[: d + 1]) for d in range(self.n_tc)]
        if all(dolls[d] + bw <= self.bcs[d] + EPS for d in range(tc, self.n_tc)):
            return 0.0
        if self.model is not BamId.ATCS or tc == self.n_tc - 1:
            return None
        regular = max(0.0, self.bcs[tc] - dolls[tc])
        if all(dolls[d] + regular <= self.bcs[d] + EPS for d in range(tc, self.n_tc)):
            return bw - regular
        return None

    # --- measurement -------------------------------------------------------

    def metrics(self, window_id: int = 0) -> MeasurementSnapshot:
        """Per-TC percentages for the window that just closed."""
        c = self.counters
        alloc = self.alloc()
        admitted_total = max(1, sum(c.admitted))

        def pct(x: float) -> float:
            return min(100.0, max(0.0, 100.0 * x))

        n = self.n_tc
        return MeasurementSnapshot(
            utilization=[pct(alloc[i] / self.bcs[i]) for i in range(n)],
            blocking=[pct(c.blocked[i] / c.requests[i]) if c.requests[i] else 0.0 for i in range(n)],
            preemption=[pct(c.preemptions[i] / admitted_total) for i in range(n)],
            devolution=[pct(c.devolutions[i] / admitted_total) for i in range(n)],
            window_id=window_id,
        )

    def reset_window(self) -> None:
        self.counters = WindowCounters.zeros(self.n_tc)

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "bcs": list(self.bcs),
            "capacity": self.capacity,
            "lsps": [
                {"id": l.id, "tc": l.tc, "bandwidth": l.bandwidth, "admitted_at": l.admitted_at, "borrowed": l.borrowed}
                for l in self.lsps.values()
            ],
            "counters": {
                "requests": list(self.counters.requests),
                "admitted": list(self.counters.admitted),
                "blocked": list(self.counters.blocked),
                "preemptions": list(self.counters.preemptions),
                "devolutions": list(self.counters.devolutions),
            },
            "next_id": self._next_id,
        }
