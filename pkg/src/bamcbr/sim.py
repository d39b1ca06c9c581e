"""Scenario runner binding the BAM link model to the CBR cycle.

Time is measured in ticks; a measurement window is ``window_length`` ticks.
Per window and per TC, LSP requests arrive as a Poisson process with the
phase's rate (requests per window); each request draws its bandwidth and
an exponential holding time (mean in windows) at arrival, whether or not it
is admitted, so the offered traffic does not depend on the BAM in use.

All randomness comes from one ``random.Random`` seeded by the scenario.
Cloning a :class:`Simulator` copies that generator, so a probe sees exactly
the traffic the live link would see.
"""

from __future__ import annotations

import copy
import heapq
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .bam import BamConfigError, BamState, MigrationReport
from .engine import (
    DEFAULT_MAX_ITERATIONS,
    CycleMode,
    ProbeResult,
    UnresolvedProblemError,
    run_cycle,
)
from .model import (
    BamId,
    Case,
    ContextInfo,
    MeasurementSnapshot,
    Outcome,
    ProblemDescriptor,
    ProblemKind,
    Solution,
    ToleranceProfile,
)
from .similarity import ConfigError, SimilarityConfig
from .store import CaseStore

logger = logging.getLogger(__name__)


class ScenarioError(ValueError):
    pass


class ScenarioAborted(Exception):
    def __init__(self, message: str, report: dict, cause: Exception | None = None):
        super().__init__(message)
        self.report = report
        self.cause = cause


# --- traffic ---------------------------------------------------------------


@dataclass(frozen=True)
class Demand:
    kind: str = "fixed"
    value: float = 10.0
    min: float = 0.0
    max: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "fixed":
            if self.value <= 0:
                raise ScenarioError("fixed demand must be > 0")
        elif self.kind == "uniform":
            if not 0 < self.min <= self.max:
                raise ScenarioError(f"uniform demand needs 0 < min <= max, got [{self.min}, {self.max}]")
        else:
            raise ScenarioError(f"unknown demand kind {self.kind!r}")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.value
        return rng.uniform(self.min, self.max)

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "value": self.value}
        return {"kind": "uniform", "min": self.min, "max": self.max}

    @classmethod
    def from_dict(cls, data: Any) -> "Demand":
        if isinstance(data, (int, float)):
            return cls("fixed", float(data))
        kind = data.get("kind", "fixed")
        if kind == "fixed":
            return cls("fixed", float(data["value"]))
        return cls("uniform", min=float(data["min"]), max=float(data["max"]))


@dataclass(frozen=True)
class Phase:
    duration: int
    rates: tuple[float, ...]
    demand: tuple[Demand, ...]
    holding: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ScenarioError("phase duration must be > 0")
        if any(r < 0 for r in self.rates):
            raise ScenarioError("arrival rates must be >= 0")
        if any(h <= 0 for h in self.holding):
            raise ScenarioError("holding times must be > 0")
        if not len(self.rates) == len(self.demand) == len(self.holding):
            raise ScenarioError("phase vectors differ in length")

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "rates": list(self.rates),
            "demand": [d.to_dict() for d in self.demand],
            "holding": list(self.holding),
        }

    @classmethod
    def from_dict(cls, data: dict, n_tc: int) -> "Phase":
        rates = tuple(float(r) for r in data["rates"])
        demand = data.get("demand", 10.0)
        demand = [demand] * n_tc if not isinstance(demand, list) else demand
        holding = data.get("holding", 1.0)
        holding = [holding] * n_tc if not isinstance(holding, list) else holding
        return cls(
            duration=int(data["duration"]),
            rates=rates,
            demand=tuple(Demand.from_dict(d) for d in demand),
            holding=tuple(float(h) for h in holding),
        )


@dataclass(frozen=True)
class TrafficProfile:
    phases: tuple[Phase, ...]

    def phase_at(self, window: int) -> Phase:
        """Phase active in ``window``; the last phase persists past the end."""
        t = 0
        for p in self.phases:
            t += p.duration
            if window < t:
                return p
        return self.phases[-1]

    def to_dict(self) -> dict:
        return {"phases": [p.to_dict() for p in self.phases]}

    @classmethod
    def from_dict(cls, data: dict, n_tc: int) -> "TrafficProfile":
        phases = tuple(Phase.from_dict(p, n_tc) for p in data["phases"])
        if not phases:
            raise ScenarioError("traffic needs at least one phase")
        return cls(phases)


# --- scenario config -------------------------------------------------------

SCENARIO_KEYS = {
    "name", "seed", "capacity", "bam", "bcs", "tolerance", "traffic", "window_length", "windows",
    "mode", "similarity", "store", "debounce", "probe_windows", "max_iterations",
}


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    capacity: float
    bam: BamId
    bcs: tuple[float, ...]
    tolerance: ToleranceProfile
    traffic: TrafficProfile
    windows: int
    name: str = "scenario"
    window_length: float = 200.0
    mode: CycleMode = CycleMode.AUTONOMOUS
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    store: Optional[str] = None
    debounce: int = 2
    probe_windows: int = 3
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self) -> None:
        n = len(self.bcs)
        try:
            BamState(self.bam, self.bcs, self.capacity)
        except BamConfigError as exc:
            raise ScenarioError(str(exc)) from None
        if self.tolerance.n_tc != n:
            raise ScenarioError("tolerance vectors do not match the BC count")
        for p in self.traffic.phases:
            if len(p.rates) != n:
                raise ScenarioError("traffic phase vectors do not match the BC count")
        if self.windows < 1 or self.window_length <= 0:
            raise ScenarioError("windows and window_length must be positive")
        if self.debounce < 1 or self.probe_windows < 1 or self.max_iterations < 1:
            raise ScenarioError("debounce, probe_windows and max_iterations must be >= 1")

    @property
    def n_tc(self) -> int:
        return len(self.bcs)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "capacity": self.capacity,
            "bam": self.bam.value,
            "bcs": list(self.bcs),
            "tolerance": self.tolerance.to_dict(),
            "traffic": self.traffic.to_dict(),
            "window_length": self.window_length,
            "windows": self.windows,
            "mode": self.mode.value,
            "similarity": self.similarity.to_dict(),
            "store": self.store,
            "debounce": self.debounce,
            "probe_windows": self.probe_windows,
            "max_iterations": self.max_iterations,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        unknown = set(data) - SCENARIO_KEYS
        if unknown:
            raise ScenarioError(f"unknown scenario key(s) {sorted(unknown)}")
        try:
            bcs = tuple(float(b) for b in data["bcs"])
            tol = data["tolerance"]
            tolerance = POC_PROFILES[tol] if isinstance(tol, str) else ToleranceProfile.from_dict(tol)
            return cls(
                name=str(data.get("name", "scenario")),
                seed=int(data["seed"]),
                capacity=float(data.get("capacity", bcs[-1])),
                bam=BamId.parse(data["bam"]),
                bcs=bcs,
                tolerance=tolerance,
                traffic=TrafficProfile.from_dict(data["traffic"], len(bcs)),
                windows=int(data["windows"]),
                window_length=float(data.get("window_length", 200.0)),
                mode=CycleMode.parse(data.get("mode", "auto")),
                similarity=SimilarityConfig.from_dict(data.get("similarity", {})),
                store=data.get("store"),
                debounce=int(data.get("debounce", 2)),
                probe_windows=int(data.get("probe_windows", 3)),
                max_iterations=int(data.get("max_iterations", DEFAULT_MAX_ITERATIONS)),
            )
        except KeyError as exc:
            raise ScenarioError(f"missing scenario key {exc}") from None
        except (ConfigError, ValueError, TypeError) as exc:
            raise ScenarioError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from None
        return cls.from_dict(data)


# --- alerts ----------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    metric: str
    tc: int
    value: float
    limit: float


@dataclass(frozen=True)
class Alert:
    problem: ProblemDescriptor
    violations: tuple[Violation, ...]
    window_id: int

    def to_dict(self) -> dict:
        return {
            "window": self.window_id,
            "kind": self.problem.kind.value,
            "affected_tcs": list(self.problem.affected_tcs),
            "violations": [
                {"tc": v.tc, "metric": v.metric, "value": v.value, "limit": v.limit} for v in self.violations
            ],
        }


# (problem kind, measured metric, limit field, whether low values violate)
ALERT_RULES = (
    (ProblemKind.HIGH_BLOCKING, "blocking", "blocking", False),
    (ProblemKind.HIGH_PREEMPTION, "preemption", "preemption", False),
    (ProblemKind.HIGH_DEVOLUTION, "devolution", "devolution", False),
    (ProblemKind.LOW_UTILIZATION, "utilization", "min_utilization", True),
)


def detect_alerts(snapshot: MeasurementSnapshot, limits: ToleranceProfile) -> list[Alert]:
    """One alert per problem kind whose limit is strictly crossed on some TC."""
    if snapshot.n_tc != limits.n_tc:
        raise ValueError("snapshot and limits differ in TC count")
    alerts = []
    for kind, metric, limit_field, below in ALERT_RULES:
        values, limit = getattr(snapshot, metric), getattr(limits, limit_field)
        bad = [
            Violation(metric, c, values[c], limit[c])
            for c in range(snapshot.n_tc)
            if (values[c] < limit[c] if below else values[c] > limit[c])
        ]
        if bad:
            alerts.append(Alert(ProblemDescriptor(kind, tuple(v.tc for v in bad)), tuple(bad), snapshot.window_id))
    return alerts


def violation_set(alerts: Sequence[Alert]) -> set[tuple[ProblemKind, int]]:
    return {(a.problem.kind, tc) for a in alerts for tc in a.problem.affected_tcs}


# --- simulator -------------------------------------------------------------


class Simulator:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.state = BamState(config.bam, config.bcs, config.capacity)
        self.rng = random.Random(config.seed)
        self.departures: list[tuple[float, int]] = []
        self.window = 0
        self.next_lsp = 0

    def clone(self) -> "Simulator":
        twin = copy.copy(self)  # config is immutable and shared
        twin.state = self.state.clone()
        twin.rng = copy.deepcopy(self.rng)
        twin.departures = list(self.departures)
        return twin

    def fingerprint(self) -> str:
        """Stable text digest of the live state, used to check probe isolation."""
        return json.dumps(
            [self.state.to_dict(), self.departures, self.window, self.next_lsp, repr(self.rng.getstate())],
            sort_keys=True,
        )

    def _drain(self, t: float) -> None:
        while self.departures and self.departures[0][0] <= t:
            _, lsp_id = heapq.heappop(self.departures)
            if self.state.is_active(lsp_id):
                self.state.release(lsp_id)

    def run_window(self) -> MeasurementSnapshot:
        cfg = self.config
        w = cfg.window_length
        start, end = self.window * w, (self.window + 1) * w
        phase = cfg.traffic.phase_at(self.window)
        arrivals = []
        for tc in range(self.state.n_tc):
            rate = phase.rates[tc] / w
            if rate <= 0:
                continue
            t = start
            while True:
                t += self.rng.expovariate(rate)
                if t >= end:
                    break
                bw = phase.demand[tc].sample(self.rng)
                hold = self.rng.expovariate(1.0 / (phase.holding[tc] * w))
                arrivals.append((t, tc, bw, hold))
        arrivals.sort(key=lambda a: (a[0], a[1]))
        for t, tc, bw, hold in arrivals:
            self._drain(t)
            lsp_id = self.next_lsp
            self.next_lsp += 1
            if self.state.admit(tc, bw, now=t, lsp_id=lsp_id).admitted:
                heapq.heappush(self.departures, (t + hold, lsp_id))
        self._drain(end)
        snap = self.state.metrics(self.window)
        self.state.reset_window()
        self.window += 1
        return snap

    def apply_solution(self, solution: Solution) -> MigrationReport:
        return self.state.switch_bam(solution.switch_to or self.state.model, solution.new_bcs)

    def probe_solution(self, solution: Solution, problem: ProblemDescriptor,
                       baseline: set | None = None, windows: Optional[int] = None) -> ProbeResult:
        """Try ``solution`` on a clone and judge the final probe window.

        Satisfactory means the triggering problem no longer shows on its TCs
        and no violation appears that was not present in ``baseline``.
        """
        windows = windows or self.config.probe_windows
        twin = self.clone()
        try:
            twin.apply_solution(solution)
        except BamConfigError as exc:
            raise ScenarioError(f"invalid solution {solution.describe()}: {exc}") from None
        snap = None
        for _ in range(windows):
            snap = twin.run_window()
        now = violation_set(detect_alerts(snap, self.config.tolerance))
        persists = sorted(tc for kind, tc in now if kind is problem.kind and tc in problem.affected_tcs)
        new = sorted((k.value, tc) for k, tc in now - set(baseline or ()))
        ok = not persists and not new
        detail = "cleared" if ok else f"persists on TC{persists}" if persists else f"new violations {new}"
        return ProbeResult(snap, ok, detail)


class ScenarioProbe:
    """Revision probe bound to the live simulator at the moment of an alert."""

    def __init__(self, sim: Simulator, baseline: set):
        self.sim = sim
        self.baseline = baseline

    def probe(self, candidate: Case) -> ProbeResult:
        return self.sim.probe_solution(candidate.solution, candidate.problem, self.baseline)


def run_scenario(config: ScenarioConfig, store: CaseStore, manager=None,
                 mode: Optional[CycleMode] = None) -> dict:
    """Run a whole scenario, invoking the CBR cycle on debounced alerts.

    ``store`` is updated in place. Returns the run report; on an unresolved
    cycle raises :class:`ScenarioAborted` carrying the partial report.
    """
    mode = mode or config.mode
    sim = Simulator(config)
    report: dict[str, Any] = {
        "scenario": config.name,
        "seed": config.seed,
        "mode": mode.value,
        "tolerance": config.tolerance.to_dict(),
        "windows": [],
        "alerts": [],
        "cycles": [],
        "switches": [],
    }
    streak = {k: 0 for k, *_ in ALERT_RULES}
    pos0, neg0 = store.counts()

    def summary(status: str, error: str = "") -> dict:
        pos, neg = store.counts()
        cycles = report["cycles"]
        return {
            "status": status,
            "error": error,
            "windows": len(report["windows"]),
            "alerts_fired": sum(1 for a in report["alerts"] if a["fired"]),
            "cycles": len(cycles),
            "fallbacks": sum(
                1 for c in cycles for e in c["trace"] if e["event"] == "candidate" and e["source"] == "fallback"
            ),
            "retained_positive": pos - pos0,
            "retained_negative": neg - neg0,
            "final_bam": sim.state.model.value,
            "final_bcs": list(sim.state.bcs),
        }

    for _ in range(config.windows):
        bam_before, bcs_before = sim.state.model, sim.state.bcs
        snap = sim.run_window()
        row = {"window": snap.window_id, "bam": bam_before.value, "bcs": list(bcs_before)}
        row.update({k: v for k, v in snap.to_dict().items() if k != "window_id"})
        report["windows"].append(row)

        alerts = detect_alerts(snap, config.tolerance)
        present = {a.problem.kind for a in alerts}
        for kind in streak:
            streak[kind] = streak[kind] + 1 if kind in present else 0
        fired = next((a for a in alerts if streak[a.problem.kind] >= config.debounce), None)
        for a in alerts:
            report["alerts"].append({**a.to_dict(), "fired": a is fired})
        if fired is None:
            continue

        current = Case(
            id=f"alert-w{snap.window_id:04d}",
            context=ContextInfo(sim.state.model, config.tolerance, sim.state.bcs),
            problem=fired.problem,
            measurements=snap,
        )
        env = ScenarioProbe(sim, violation_set(alerts))
        try:
            outcome = run_cycle(fired.problem, current, store, env, mode, config.similarity, manager,
                                config.max_iterations, window_id=snap.window_id)
        except UnresolvedProblemError as exc:
            report["cycles"].append({"window": snap.window_id, "converged": False, "final_case": None,
                                     "iterations": None, "fallbacks": None, "trace": exc.trace})
            report["summary"] = summary("unresolved", str(exc))
            raise ScenarioAborted(str(exc), report, exc) from None
        except Exception as exc:
            report["summary"] = summary("error", str(exc))
            raise ScenarioAborted(str(exc), report, exc) from exc
        report["cycles"].append({"window": snap.window_id, **outcome.to_dict()})
        solution = outcome.final_case.solution
        try:
            migration = sim.apply_solution(solution)
        except BamConfigError as exc:
            report["summary"] = summary("error", str(exc))
            raise ScenarioAborted(str(exc), report, exc) from exc
        report["switches"].append({
            "window": snap.window_id,
            "from": bam_before.value,
            "to": migration.model.value,
            "bcs": list(migration.bcs),
            "losses": len(migration.losses),
            "case_id": outcome.final_case.id,
        })
        streak = {k: 0 for k in streak}

    report["summary"] = summary("ok")
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


# --- proof-of-concept fixtures --------------------------------------------

POC_PROFILES = {
    "Carlos": ToleranceProfile("Carlos", (70, 65, 60), (80, 70, 0), (0, 70, 80)),
    "Marcos": ToleranceProfile("Marcos", (60, 50, 40), (90, 80, 0), (0, 80, 90)),
    "Lucas": ToleranceProfile("Lucas", (65, 60, 70), (70, 60, 0), (0, 60, 70)),
}

POC_BANDWIDTHS = {
    "A": (256.0, 512.0, 1024.0),
    "B": (128.0, 256.0, 512.0),
}

# profile -> (BAM, problem, affected TCs, measurements, solution BAM)
_POC_FIXTURES = {
    "Carlos": (
        BamId.MAM, ProblemKind.HIGH_BLOCKING, (0, 1, 2),
        MeasurementSnapshot((90, 85, 80), (85, 80, 75), (0, 0, 0), (0, 0, 0)),
        BamId.ATCS,
    ),
    "Marcos": (
        BamId.RDM, ProblemKind.LOW_UTILIZATION, (0, 1, 2),
        MeasurementSnapshot((10, 10, 10), (5, 5, 5), (10, 10, 0), (0, 0, 0)),
        BamId.ATCS,
    ),
    "Lucas": (
        BamId.RDM, ProblemKind.HIGH_PREEMPTION, (0, 1),
        MeasurementSnapshot((70, 70, 70), (20, 20, 20), (85, 75, 0), (0, 0, 0)),
        BamId.MAM,
    ),
}


def poc_cases() -> list[Case]:
    """The six proof-of-concept cases: three profiles times two BC sets."""
    cases = []
    for name, profile in POC_PROFILES.items():
        bam, kind, tcs, snap, target = _POC_FIXTURES[name]
        for bw_name, bcs in POC_BANDWIDTHS.items():
            cases.append(Case(
                id=f"poc-{name.lower()}-bw{bw_name.lower()}",
                context=ContextInfo(bam, profile, bcs),
                problem=ProblemDescriptor(kind, tcs),
                measurements=snap,
                solution=Solution(switch_to=target, rationale=f"{kind.value} under {bam.value}"),
                outcome=Outcome.POSITIVE,
            ))
    return cases


def seed_poc_store() -> CaseStore:
    store = CaseStore()
    for case in poc_cases():
        store.retain(case)
    return store
