"""Case schema: context, problem, measurements, solution and outcome.

A :class:`Case` is the unit stored in and retrieved from the case base. All
value types here are frozen dataclasses; vectors are tuples sized by the
run-level traffic-class count (three for the proof-of-concept profile).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, NamedTuple, Optional

N_TC = 3
DEFAULT_MIN_UTILIZATION = 20.0


class SchemaError(ValueError):
    """Raised when a case or one of its parts does not match the schema."""


class BamId(str, Enum):
    MAM = "MAM"
    RDM = "RDM"
    ATCS = "ATCS"

    @classmethod
    def parse(cls, text: str) -> "BamId":
        key = str(text).strip().upper().replace("-", "")
        try:
            return cls(key)
        except ValueError:
            raise SchemaError(f"unknown BAM {text!r}") from None

    def __str__(self) -> str:
        return self.value


class ProblemKind(str, Enum):
    HIGH_BLOCKING = "HighBlocking"
    HIGH_PREEMPTION = "HighPreemption"
    HIGH_DEVOLUTION = "HighDevolution"
    LOW_UTILIZATION = "LowUtilization"

    def __str__(self) -> str:
        return self.value


class Outcome(str, Enum):
    UNRESOLVED = "Unresolved"
    POSITIVE = "Positive"
    NEGATIVE = "Negative"

    def __str__(self) -> str:
        return self.value


def _vec(values: Iterable[Any], what: str) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise SchemaError(f"{what}: expected a list of numbers") from None
    return out


@dataclass(frozen=True)
class ToleranceProfile:
    """Manager-defined per-TC limits, in percent.

    ``min_utilization`` has no counterpart in the published profiles; it is
    an extension that backs the LowUtilization problem.
    """

    name: str
    blocking: tuple[float, ...]
    preemption: tuple[float, ...]
    devolution: tuple[float, ...]
    min_utilization: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocking", _vec(self.blocking, "blocking"))
        object.__setattr__(self, "preemption", _vec(self.preemption, "preemption"))
        object.__setattr__(self, "devolution", _vec(self.devolution, "devolution"))
        mu = self.min_utilization
        if not mu:
            mu = (DEFAULT_MIN_UTILIZATION,) * len(self.blocking)
        object.__setattr__(self, "min_utilization", _vec(mu, "min_utilization"))

    @property
    def n_tc(self) -> int:
        return len(self.blocking)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "blocking": list(self.blocking),
            "preemption": list(self.preemption),
            "devolution": list(self.devolution),
            "min_utilization": list(self.min_utilization),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToleranceProfile":
        _check_keys(data, {"name", "blocking", "preemption", "devolution"},
                    {"min_utilization"}, "limits")
        return cls(
            name=str(data["name"]),
            blocking=data["blocking"],
            preemption=data["preemption"],
            devolution=data["devolution"],
            min_utilization=data.get("min_utilization") or (),
        )


@dataclass(frozen=True)
class MeasurementSnapshot:
    """Per-TC percentages sampled at the end of one measurement window."""

    utilization: tuple[float, ...]
    blocking: tuple[float, ...]
    preemption: tuple[float, ...]
    devolution: tuple[float, ...]
    window_id: int = 0

    def __post_init__(self) -> None:
        for name in ("utilization", "blocking", "preemption", "devolution"):
            object.__setattr__(self, name, _vec(getattr(self, name), name))

    @property
    def n_tc(self) -> int:
        return len(self.utilization)

    def to_dict(self) -> dict:
        return {
            "utilization": list(self.utilization),
            "blocking": list(self.blocking),
            "preemption": list(self.preemption),
            "devolution": list(self.devolution),
            "window_id": self.window_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MeasurementSnapshot":
        _check_keys(data, {"utilization", "blocking", "preemption", "devolution", "window_id"},
                    set(), "measurements")
        return cls(
            utilization=data["utilization"],
            blocking=data["blocking"],
            preemption=data["preemption"],
            devolution=data["devolution"],
            window_id=int(data["window_id"]),
        )


@dataclass(frozen=True)
class ProblemDescriptor:
    kind: ProblemKind
    affected_tcs: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        object.__setattr__(self, "affected_tcs", tuple(sorted({int(t) for t in self.affected_tcs})))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "affected_tcs": list(self.affected_tcs)}

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemDescriptor":
        _check_keys(data, {"kind", "affected_tcs"}, set(), "problem")
        try:
            kind = ProblemKind(data["kind"])
        except ValueError:
            raise SchemaError(f"unknown problem kind {data['kind']!r}") from None
        return cls(kind=kind, affected_tcs=tuple(data["affected_tcs"]))


@dataclass(frozen=True)
class ContextInfo:
    """The (BAM, limits, BCs) triple that scopes comparable cases."""

    bam: BamId
    limits: ToleranceProfile
    bcs: tuple[float, ...]

    def __post_init__(self) -> None:
        bam = self.bam if isinstance(self.bam, BamId) else BamId.parse(self.bam)
        object.__setattr__(self, "bam", bam)
        object.__setattr__(self, "bcs", _vec(self.bcs, "bcs"))

    def to_dict(self) -> dict:
        return {"bam": self.bam.value, "limits": self.limits.to_dict(), "bcs": list(self.bcs)}

    @classmethod
    def from_dict(cls, data: dict) -> "ContextInfo":
        _check_keys(data, {"bam", "limits", "bcs"}, set(), "context")
        return cls(
            bam=BamId.parse(data["bam"]),
            limits=ToleranceProfile.from_dict(data["limits"]),
            bcs=data["bcs"],
        )


@dataclass(frozen=True)
class Solution:
    """A BAM switch, a BC reconfiguration, or both."""

    switch_to: Optional[BamId] = None
    new_bcs: Optional[tuple[float, ...]] = None
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.switch_to is not None and not isinstance(self.switch_to, BamId):
            object.__setattr__(self, "switch_to", BamId.parse(self.switch_to))
        if self.new_bcs is not None:
            object.__setattr__(self, "new_bcs", _vec(self.new_bcs, "new_bcs"))

    @property
    def key(self) -> tuple:
        """Identity used for negative matching; the rationale is ignored."""
        return (self.switch_to, self.new_bcs)

    def describe(self) -> str:
        parts = []
        if self.switch_to is not None:
            parts.append(f"switch to {self.switch_to.value}")
        if self.new_bcs is not None:
            parts.append("BCs " + "/".join(f"{b:g}" for b in self.new_bcs))
        return ", ".join(parts) or "no-op"

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        if self.switch_to is not None:
            out["switch_to"] = self.switch_to.value
        if self.new_bcs is not None:
            out["new_bcs"] = list(self.new_bcs)
        out["rationale"] = self.rationale
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Solution":
        _check_keys(data, set(), {"switch_to", "new_bcs", "rationale"}, "solution")
        sw = data.get("switch_to")
        bcs = data.get("new_bcs")
        sol = cls(
            switch_to=BamId.parse(sw) if sw is not None else None,
            new_bcs=tuple(bcs) if bcs is not None else None,
            rationale=str(data.get("rationale", "")),
        )
        if sol.switch_to is None and sol.new_bcs is None:
            raise SchemaError("solution needs switch_to or new_bcs")
        return sol


@dataclass(frozen=True)
class Case:
    id: str
    context: ContextInfo
    problem: ProblemDescriptor
    measurements: MeasurementSnapshot
    solution: Optional[Solution] = None
    outcome: Outcome = Outcome.UNRESOLVED
    retained_at: Optional[int] = None

    @property
    def n_tc(self) -> int:
        return len(self.context.bcs)

    def with_solution(self, solution: Optional[Solution]) -> "Case":
        return replace(self, solution=solution)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "context": self.context.to_dict(),
            "problem": self.problem.to_dict(),
            "measurements": self.measurements.to_dict(),
            "solution": self.solution.to_dict() if self.solution is not None else None,
            "outcome": self.outcome.value,
            "retained_at": self.retained_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Case":
        if not isinstance(data, dict):
            raise SchemaError("case must be a JSON object")
        _check_keys(data, {"id", "context", "problem", "measurements", "outcome"},
                    {"solution", "retained_at"}, "case")
        try:
            outcome = Outcome(data["outcome"])
        except ValueError:
            raise SchemaError(f"unknown outcome {data['outcome']!r}") from None
        sol = data.get("solution")
        retained = data.get("retained_at")
        return cls(
            id=str(data["id"]),
            context=ContextInfo.from_dict(data["context"]),
            problem=ProblemDescriptor.from_dict(data["problem"]),
            measurements=MeasurementSnapshot.from_dict(data["measurements"]),
            solution=Solution.from_dict(sol) if sol is not None else None,
            outcome=outcome,
            retained_at=int(retained) if retained is not None else None,
        )


def _check_keys(data: Any, required: set, optional: set, where: str) -> None:
    if not isinstance(data, dict):
        raise SchemaError(f"{where}: expected an object")
    missing = required - data.keys()
    if missing:
        raise SchemaError(f"{where}: missing field(s) {sorted(missing)}")
    unknown = data.keys() - required - optional
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {sorted(unknown)}")


def case_to_json(case: Case) -> str:
    return json.dumps(case.to_dict())


def case_from_json(text: str) -> Case:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON: {exc}") from None
    return Case.from_dict(data)


# --- attribute-vector view -------------------------------------------------

GROUPS = ("bam", "bandwidth", "tolerance", "measurement")
TOLERANCE_METRICS = ("blocking", "preemption", "devolution")
MEASUREMENT_METRICS = ("utilization", "blocking", "preemption", "devolution")


class AttributeId(NamedTuple):
    group: str
    metric: str
    tc: Optional[int]

    def __str__(self) -> str:
        if self.tc is None:
            return f"{self.group}.{self.metric}"
        return f"{self.group}.{self.metric}.tc{self.tc}"


@dataclass(frozen=True)
class AttributeVector:
    leaves: tuple[tuple[AttributeId, Any], ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.leaves)

    def __iter__(self):
        return iter(self.leaves)

    @property
    def ids(self) -> tuple[AttributeId, ...]:
        return tuple(a for a, _ in self.leaves)

    @property
    def values(self) -> tuple:
        return tuple(v for _, v in self.leaves)

    def group(self, name: str) -> list[tuple[AttributeId, Any]]:
        return [(a, v) for a, v in self.leaves if a.group == name]


def to_attribute_vector(case: Case) -> AttributeVector:
    """Flatten a case into its leaf attributes.

    Layout: the BAM leaf, one bandwidth leaf per TC, tolerance leaves
    (blocking, preemption, devolution per TC) and measurement leaves
    (utilization, blocking, preemption, devolution per TC).
    """
    n = case.n_tc
    problems = [p for p in validate_case(case) if "length" in p]
    if problems:
        raise SchemaError("; ".join(problems))
    leaves: list[tuple[AttributeId, Any]] = [(AttributeId("bam", "model", None), case.context.bam)]
    leaves += [(AttributeId("bandwidth", "bc", c), case.context.bcs[c]) for c in range(n)]
    limits = case.context.limits
    for metric in TOLERANCE_METRICS:
        values = getattr(limits, metric)
        leaves += [(AttributeId("tolerance", metric, c), values[c]) for c in range(n)]
    for metric in MEASUREMENT_METRICS:
        values = getattr(case.measurements, metric)
        leaves += [(AttributeId("measurement", metric, c), values[c]) for c in range(n)]
    return AttributeVector(tuple(leaves))


def _pct_violations(where: str, values: tuple[float, ...]) -> list[str]:
    out = []
    for i, v in enumerate(values):
        if not math.isfinite(v) or v < 0.0 or v > 100.0:
            out.append(f"{where}[{i}]={v:g}: percentage out of [0,100]")
    return out


def validate_case(case: Case) -> list[str]:
    """Return every schema violation found in ``case``; empty means valid."""
    issues: list[str] = []
    ctx = case.context
    n = len(ctx.bcs)
    if n == 0:
        issues.append("bcs: length 0")
    lim = ctx.limits
    named = [
        ("limits.blocking", lim.blocking),
        ("limits.preemption", lim.preemption),
        ("limits.devolution", lim.devolution),
        ("limits.min_utilization", lim.min_utilization),
        ("measurements.utilization", case.measurements.utilization),
        ("measurements.blocking", case.measurements.blocking),
        ("measurements.preemption", case.measurements.preemption),
        ("measurements.devolution", case.measurements.devolution),
    ]
    for where, values in named:
        if len(values) != n:
            issues.append(f"{where}: length {len(values)} != {n}")
        issues += _pct_violations(where, values)
    issues += _bcs_violations("bcs", ctx.bcs, ctx.bam)

    if not case.problem.affected_tcs:
        issues.append("problem.affected_tcs: empty")
    for tc in case.problem.affected_tcs:
        if not 0 <= tc < n:
            issues.append(f"problem.affected_tcs: TC{tc} out of range")

    sol = case.solution
    if sol is not None:
        if sol.switch_to is None and sol.new_bcs is None:
            issues.append("solution: needs switch_to or new_bcs")
        if sol.new_bcs is not None:
            if len(sol.new_bcs) != n:
                issues.append(f"solution.new_bcs: length {len(sol.new_bcs)} != {n}")
            issues += _bcs_violations("solution.new_bcs", sol.new_bcs, sol.switch_to or ctx.bam)
    if case.outcome in (Outcome.POSITIVE, Outcome.NEGATIVE) and sol is None:
        issues.append(f"outcome {case.outcome.value} requires a solution")
    return issues


def _bcs_violations(where: str, bcs: tuple[float, ...], bam: BamId) -> list[str]:
    out = []
    for i, b in enumerate(bcs):
        if not math.isfinite(b) or b <= 0:
            out.append(f"{where}[{i}]={b:g}: bandwidth must be > 0")
    if bam in (BamId.RDM, BamId.ATCS) and any(a > b for a, b in zip(bcs, bcs[1:])):
        out.append(f"{where}: must be nondecreasing under {bam.value}")
    return out
