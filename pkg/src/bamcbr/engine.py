"""The retrieve / reuse / revise / retain cycle.

:func:`run_cycle` is driven by an alert. It walks the ranked retrieval
results, skipping solutions already tried or vetoed by the negative case
base, and falls back to a fixed enumeration of BAM switches and BC
adjustments when retrieval has nothing left. Each executed candidate is
revised (probed, or reviewed by the manager) and retained as a positive or
negative case. The cycle stops at the first satisfactory solution.

Every decision is appended to a trace of plain dicts so a cycle can be
exported as JSON and replayed.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional, Protocol, TextIO, Union

from .model import BamId, Case, MeasurementSnapshot, Outcome, ProblemDescriptor, SchemaError, Solution
from .similarity import SimilarityConfig
from .store import CaseStore

logger = logging.getLogger(__name__)

FALLBACK_BAM_ORDER = (BamId.ATCS, BamId.RDM, BamId.MAM)
BC_SCALE_FACTORS = (1.25, 0.75)
DEFAULT_MAX_ITERATIONS = 10


class CycleError(Exception):
    pass


class NoCandidatesError(CycleError):
    pass


class UnresolvedProblemError(CycleError):
    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


class RevisionInfrastructureError(CycleError):
    """The revision probe itself failed; distinct from an unsatisfactory verdict."""


class ManagerInputError(CycleError):
    pass


class CycleMode(str, Enum):
    AUTONOMOUS = "Autonomous"
    MANAGER = "Manager"

    @classmethod
    def parse(cls, text: str) -> "CycleMode":
        t = str(text).strip().lower()
        if t in ("auto", "autonomous"):
            return cls.AUTONOMOUS
        if t in ("manager", "manual"):
            return cls.MANAGER
        raise ValueError(f"unknown cycle mode {text!r}")


class Verdict(str, Enum):
    SATISFACTORY_AS_IS = "SatisfactoryAsIs"
    ADAPTED_THEN_SATISFACTORY = "AdaptedThenSatisfactory"
    UNSATISFACTORY = "Unsatisfactory"


@dataclass(frozen=True)
class ProbeResult:
    snapshot: MeasurementSnapshot
    satisfactory: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"snapshot": self.snapshot.to_dict(), "satisfactory": self.satisfactory, "detail": self.detail}

    @classmethod
    def from_dict(cls, data: dict) -> "ProbeResult":
        return cls(MeasurementSnapshot.from_dict(data["snapshot"]), bool(data["satisfactory"]), data.get("detail", ""))


@dataclass(frozen=True)
class RevisionVerdict:
    verdict: Verdict
    evidence: Optional[MeasurementSnapshot] = None
    adapted: Optional[Solution] = None

    @property
    def satisfactory(self) -> bool:
        return self.verdict is not Verdict.UNSATISFACTORY


class RevisionProbe(Protocol):
    def probe(self, candidate: Case) -> ProbeResult: ...


Answer = Union[str, Solution]


class ManagerConsole:
    """Line-oriented manager prompts: ``approve``, ``reject`` or a solution JSON.

    Prompts go to ``output`` (stderr by default) so stdout stays clean.
    """

    def __init__(self, input: TextIO | None = None, output: TextIO | None = None):
        self.input = input if input is not None else sys.stdin
        self.output = output if output is not None else sys.stderr

    def review(self, candidate: Case, evidence: Optional[ProbeResult]) -> Answer:
        sol = candidate.solution
        print(f"[manager] alert {candidate.problem.kind.value} on TC{list(candidate.problem.affected_tcs)}"
              f" under {candidate.context.bam.value}", file=self.output)
        print(f"[manager] proposed: {sol.describe() if sol else '-'} ({sol.rationale if sol else ''})",
              file=self.output)
        if evidence is not None:
            snap = evidence.snapshot
            print(f"[manager] probe: blocking={list(snap.blocking)} utilization={list(snap.utilization)}"
                  f" satisfactory={evidence.satisfactory}", file=self.output)
        print("[manager] approve | reject | solution JSON > ", end="", file=self.output, flush=True)
        line = self.input.readline()
        if not line:
            raise ManagerInputError("manager input closed before an answer was given")
        return parse_answer(line)


class ScriptedManager:
    """Replays a fixed list of answers; used for tests and trace replay."""

    def __init__(self, answers: list[Answer]):
        self.answers = list(answers)

    def review(self, candidate: Case, evidence: Optional[ProbeResult]) -> Answer:
        if not self.answers:
            raise ManagerInputError("no scripted answers left")
        ans = self.answers.pop(0)
        return parse_answer(ans) if isinstance(ans, str) else ans


def parse_answer(text: str) -> Answer:
    t = text.strip()
    if t.lower() in ("approve", "a", "yes", "y"):
        return "approve"
    if t.lower() in ("reject", "r", "no", "n"):
        return "reject"
    try:
        return Solution.from_dict(json.loads(t))
    except (json.JSONDecodeError, SchemaError, AttributeError) as exc:
        raise ManagerInputError(f"unrecognised manager answer {t!r}: {exc}") from None


def _answer_to_json(ans: Answer) -> Any:
    return ans.to_dict() if isinstance(ans, Solution) else ans


def _answer_from_json(data: Any) -> Answer:
    return Solution.from_dict(data) if isinstance(data, dict) else data


# --- reuse / fallback / revise / retain ------------------------------------


def reuse(current: Case, similar: Case) -> Case:
    """New case = current case + the similar case's solution."""
    if similar.solution is None:
        raise ValueError(f"case {similar.id} has no solution to reuse")
    if current.solution is not None:
        raise ValueError(f"current case {current.id} already carries a solution")
    sol = replace(similar.solution, rationale=f"reused from {similar.id}")
    return replace(current, solution=sol, outcome=Outcome.UNRESOLVED, retained_at=None)


def fallback_candidates(current: Case) -> list[Solution]:
    """The full, ordered enumeration of arbitrary solutions for ``current``."""
    ctx = current.context
    out = [Solution(switch_to=b, rationale=f"fallback: switch to {b.value}")
           for b in FALLBACK_BAM_ORDER if b is not ctx.bam]
    bcs = ctx.bcs
    n = len(bcs)
    seen = {bcs}
    for c in current.problem.affected_tcs:
        lo = bcs[c - 1] if c > 0 else 0.0
        hi = bcs[c + 1] if c < n - 1 else bcs[c]
        if lo > hi:
            continue
        for factor in BC_SCALE_FACTORS:
            value = min(max(bcs[c] * factor, lo), hi)
            new = bcs[:c] + (value,) + bcs[c + 1:]
            if value <= 0 or new in seen:
                continue
            seen.add(new)
            out.append(Solution(new_bcs=new, rationale=f"fallback: scale BC{c} by {factor:g}"))
    return out


def fallback_solution(current: Case, already_tried: set) -> Solution:
    """First enumerated solution whose key is not in ``already_tried``."""
    tried = {s.key if isinstance(s, Solution) else s for s in already_tried}
    for sol in fallback_candidates(current):
        if sol.key not in tried:
            return sol
    raise NoCandidatesError(f"fallback enumeration exhausted for {current.id}")


def revise(candidate: Case, env: Optional[RevisionProbe], mode: CycleMode = CycleMode.AUTONOMOUS,
           manager=None, trace: Optional["Trace"] = None) -> RevisionVerdict:
    if candidate.solution is None:
        raise ValueError("candidate has no solution to revise")
    evidence: Optional[ProbeResult] = None
    if env is not None:
        try:
            evidence = env.probe(candidate)
        except CycleError:
            raise
        except Exception as exc:  # the probe is a black box; wrap whatever it raised
            raise RevisionInfrastructureError(f"probe failed: {exc}") from exc
        if trace is not None:
            trace.add("probe", **evidence.to_dict())
    elif mode is CycleMode.AUTONOMOUS:
        raise RevisionInfrastructureError("autonomous revision needs a probe")

    snapshot = evidence.snapshot if evidence is not None else None
    if mode is CycleMode.AUTONOMOUS:
        verdict = Verdict.SATISFACTORY_AS_IS if evidence.satisfactory else Verdict.UNSATISFACTORY
        return RevisionVerdict(verdict, snapshot)

    if manager is None:
        raise ManagerInputError("manager mode without a manager console")
    answer = manager.review(candidate, evidence)
    if trace is not None:
        trace.add("manager", answer=_answer_to_json(answer))
    if answer == "approve":
        return RevisionVerdict(Verdict.SATISFACTORY_AS_IS, snapshot)
    if answer == "reject":
        return RevisionVerdict(Verdict.UNSATISFACTORY, snapshot)
    return RevisionVerdict(Verdict.ADAPTED_THEN_SATISFACTORY, snapshot,
                           adapted=replace(answer, rationale=answer.rationale or "manager adaptation"))


def retain_outcome(case: Case, verdict: RevisionVerdict, store: CaseStore) -> Case:
    if verdict.satisfactory:
        sol = verdict.adapted or case.solution
        done = replace(case, solution=sol, outcome=Outcome.POSITIVE)
    else:
        done = replace(case, outcome=Outcome.NEGATIVE)
    return store.retain(done)


# --- the cycle -------------------------------------------------------------


class Trace(list):
    def add(self, event: str, **data: Any) -> dict:
        entry = {"seq": len(self), "event": event, **data}
        self.append(entry)
        return entry


@dataclass
class CycleOutcome:
    final_case: Optional[Case]
    trace: list[dict] = field(default_factory=list)
    iterations: int = 0
    fallbacks: int = 0

    @property
    def converged(self) -> bool:
        return self.final_case is not None

    def executed_solutions(self) -> list[dict]:
        return [e["solution"] for e in self.trace if e["event"] == "candidate"]

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "final_case": self.final_case.to_dict() if self.final_case else None,
            "iterations": self.iterations,
            "fallbacks": self.fallbacks,
            "trace": list(self.trace),
        }


def run_cycle(
    alert: ProblemDescriptor,
    current: Case,
    store: CaseStore,
    env: Optional[RevisionProbe],
    mode: CycleMode = CycleMode.AUTONOMOUS,
    config: SimilarityConfig | None = None,
    manager=None,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    window_id: Optional[int] = None,
) -> CycleOutcome:
    config = config or SimilarityConfig()
    mode = CycleMode(mode)
    if current.solution is not None or current.outcome is not Outcome.UNRESOLVED:
        raise ValueError("current case must be unresolved and carry no solution")
    current = replace(current, problem=alert)

    trace = Trace()
    trace.add(
        "start",
        window_id=window_id,
        mode=mode.value,
        max_iterations=max_iterations,
        sequence_before=store.next_sequence,
        similarity=config.to_dict(),
        current=current.to_dict(),
    )
    result = store.retrieve(current, config, k=max(1, len(store.positive)))
    trace.add("retrieve", matches=[{"case_id": m.case.id, "global": m.similarity} for m in result.matches])
    ranked = [m.case for m in result.matches]

    tried: set = set()
    iterations = fallbacks = 0
    while True:
        if ranked:
            similar = ranked.pop(0)
            candidate = reuse(current, similar)
            source, origin = "retrieval", similar.id
        else:
            try:
                sol = fallback_solution(current, tried)
            except NoCandidatesError as exc:
                trace.add("unresolved", reason=str(exc))
                raise UnresolvedProblemError(str(exc), list(trace)) from None
            candidate = current.with_solution(sol)
            source, origin = "fallback", None
        key = candidate.solution.key
        if key in tried:
            trace.add("skip", source=source, from_case=origin, solution=candidate.solution.to_dict(),
                      reason="already tried")
            continue
        tried.add(key)
        if store.is_negative_match(candidate, config):
            trace.add("negative_veto", source=source, from_case=origin, solution=candidate.solution.to_dict())
            continue
        if iterations >= max_iterations:
            msg = f"iteration cap {max_iterations} reached without a satisfactory solution"
            trace.add("unresolved", reason=msg)
            raise UnresolvedProblemError(msg, list(trace))

        iterations += 1
        if source == "fallback":
            fallbacks += 1
        trace.add("candidate", source=source, from_case=origin, solution=candidate.solution.to_dict())
        verdict = revise(candidate, env, mode, manager, trace)
        if verdict.adapted is not None:
            trace.add("adapted", source="manager", solution=verdict.adapted.to_dict())
        candidate = replace(candidate, id=store.new_case_id())
        kept = retain_outcome(candidate, verdict, store)
        trace.add("retain", verdict=verdict.verdict.value, case_id=kept.id,
                  store=kept.outcome.value.lower(), retained_at=kept.retained_at,
                  solution=kept.solution.to_dict())
        if verdict.satisfactory:
            trace.add("resolved", case_id=kept.id, iterations=iterations, fallbacks=fallbacks)
            logger.info("cycle resolved with %s after %d iteration(s)", kept.solution.describe(), iterations)
            return CycleOutcome(kept, list(trace), iterations, fallbacks)


# --- replay ----------------------------------------------------------------


class ReplayDivergence(CycleError):
    pass


class _RecordedProbe:
    def __init__(self, probes: list[dict]):
        self.probes = list(probes)

    def probe(self, candidate: Case) -> ProbeResult:
        if not self.probes:
            raise ReplayDivergence("replay executed more candidates than were recorded")
        return ProbeResult.from_dict(self.probes.pop(0))


def replay_cycle(trace: list[dict], store: CaseStore) -> list[dict]:
    """Re-run a recorded cycle against ``store`` rolled back to the cycle start.

    Probe results and manager answers come from the recording. Returns the
    replayed trace; raises :class:`ReplayDivergence` naming the first event
    that differs.
    """
    if not trace or trace[0].get("event") != "start":
        raise ValueError("trace does not begin with a start event")
    start = trace[0]
    base = store.rolled_back(int(start["sequence_before"]))
    current = Case.from_dict(start["current"])
    config = SimilarityConfig.from_dict(start["similarity"])
    mode = CycleMode(start["mode"])
    env = _RecordedProbe([{k: e[k] for k in ("snapshot", "satisfactory", "detail")}
                          for e in trace if e["event"] == "probe"])
    manager = ScriptedManager([_answer_from_json(e["answer"]) for e in trace if e["event"] == "manager"])
    if mode is CycleMode.MANAGER and not any(e["event"] == "probe" for e in trace):
        env = None
    try:
        outcome = run_cycle(current.problem, current, base, env, mode, config, manager,
                            int(start["max_iterations"]), start.get("window_id"))
        replayed = outcome.trace
    except UnresolvedProblemError as exc:
        replayed = exc.trace
    except (ReplayDivergence, ManagerInputError) as exc:
        raise ReplayDivergence(f"replay ran past the recording: {exc}") from None

    norm = lambda t: json.loads(json.dumps(t))  # noqa: E731
    a, b = norm(trace), norm(replayed)
    for i in range(max(len(a), len(b))):
        if i >= len(a) or i >= len(b) or a[i] != b[i]:
            got = b[i] if i < len(b) else None
            want = a[i] if i < len(a) else None
            raise ReplayDivergence(f"event {i} differs: recorded {want!r}, replayed {got!r}")
    return replayed
