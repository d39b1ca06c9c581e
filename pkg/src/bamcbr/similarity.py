"""Local and global similarity between cases.

Local functions compare one attribute of two cases: exact match for
categorical values, a range-normalized linear similarity and a ladder
(threshold) similarity for numbers. The global score is a weighted
nearest-neighbour mean, applied at two levels: leaves are combined into one
score per attribute group, and the BAM term joins the group scores.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Mapping, Sequence

from .model import (
    GROUPS,
    MEASUREMENT_METRICS,
    AttributeId,
    Case,
    ContextInfo,
    to_attribute_vector,
)

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid similarity configuration."""


class DomainError(ValueError):
    """Non-finite input to a numeric similarity primitive."""


class IncomparableCasesError(ValueError):
    """The two cases have different traffic-class counts."""


class ContextGate(str, Enum):
    BAM_ONLY = "BamOnly"
    FULL_CONTEXT = "FullContext"
    OFF = "Off"


@dataclass(frozen=True)
class ValueRange:
    min: float
    max: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.min) and math.isfinite(self.max)) or self.max <= self.min:
            raise ConfigError(f"degenerate range [{self.min}, {self.max}]")

    @property
    def width(self) -> float:
        return self.max - self.min

    def clamp(self, x: float) -> float:
        return min(max(x, self.min), self.max)


PERCENT = ValueRange(0.0, 100.0)


def exact_sim(a: Any, b: Any) -> int:
    return 1 if a == b else 0


def abs_distance(a: float, b: float) -> float:
    if not (math.isfinite(a) and math.isfinite(b)):
        raise DomainError(f"non-finite input ({a}, {b})")
    return abs(a - b)


def linear_sim(a: float, b: float, rng: ValueRange = PERCENT) -> float:
    """``1 - |a - b| / (max - min)``, with inputs clamped into the range first."""
    ca, cb = rng.clamp(a), rng.clamp(b)
    if ca != a or cb != b:
        logger.warning("clamped (%g, %g) into [%g, %g]", a, b, rng.min, rng.max)
    return 1.0 - abs_distance(ca, cb) / rng.width


def ladder_sim(a: float, b: float, k: float) -> int:
    if k < 0:
        raise ConfigError(f"ladder k must be >= 0, got {k}")
    return 1 if abs_distance(a, b) <= k else 0


def nn_global(locals_: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Weighted mean of local similarities."""
    if len(locals_) == 0:
        raise ConfigError("no local similarities to combine")
    if weights is None:
        weights = [1.0] * len(locals_)
    if len(weights) != len(locals_):
        raise ConfigError(f"{len(locals_)} locals but {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise ConfigError("weights must be nonnegative")
    total = math.fsum(weights)
    if total <= 0:
        raise ConfigError("total weight must be > 0")
    value = math.fsum(f * w for f, w in zip(locals_, weights)) / total
    # fsum rounding can step a hair outside the inputs' hull
    return min(max(value, min(locals_)), max(locals_))


LOCAL_FUNCTIONS = ("exact", "linear", "ladder")
DEFAULT_FUNCTIONS = {"bam": "exact", "bandwidth": "ladder", "tolerance": "linear", "measurement": "linear"}


@dataclass(frozen=True)
class SimilarityConfig:
    """Function assignment, parameters and weights for case comparison.

    ``weights`` maps either a group name (level-1 weight) or a leaf id such
    as ``"measurement.blocking.tc0"`` to a nonnegative weight; anything not
    listed weighs 1.
    """

    functions: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_FUNCTIONS))
    ladder_k: float = 128.0
    ranges: Mapping[str, ValueRange] = field(default_factory=dict)
    weights: Mapping[str, float] = field(default_factory=dict)
    theta: float = 0.8
    context_gate: ContextGate = ContextGate.BAM_ONLY

    def __post_init__(self) -> None:
        funcs = dict(DEFAULT_FUNCTIONS)
        funcs.update(self.functions)
        for group, fn in funcs.items():
            if group not in GROUPS:
                raise ConfigError(f"unknown attribute group {group!r}")
            if fn not in LOCAL_FUNCTIONS:
                raise ConfigError(f"unknown local function {fn!r} for {group}")
        if funcs["bam"] != "exact":
            raise ConfigError("the BAM attribute is categorical; only 'exact' applies")
        ranges = {m: PERCENT for m in MEASUREMENT_METRICS}
        for key, value in dict(self.ranges).items():
            ranges[key] = value if isinstance(value, ValueRange) else ValueRange(*map(float, value))
        if funcs["bandwidth"] == "linear" and "bandwidth" not in ranges:
            raise ConfigError("linear bandwidth similarity needs a 'bandwidth' range")
        if self.ladder_k < 0:
            raise ConfigError("ladder_k must be >= 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0, 1]")
        weights = {str(k): float(v) for k, v in dict(self.weights).items()}
        if any(w < 0 or not math.isfinite(w) for w in weights.values()):
            raise ConfigError("weights must be finite and nonnegative")
        if math.fsum(weights.get(g, 1.0) for g in GROUPS) <= 0:
            raise ConfigError("level-1 weights sum to zero")
        object.__setattr__(self, "functions", MappingProxyType(funcs))
        object.__setattr__(self, "ranges", MappingProxyType(ranges))
        object.__setattr__(self, "weights", MappingProxyType(weights))
        object.__setattr__(self, "ladder_k", float(self.ladder_k))
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "context_gate", ContextGate(self.context_gate))

    def __deepcopy__(self, memo) -> "SimilarityConfig":
        return self  # immutable

    def weight(self, key: AttributeId | str) -> float:
        return self.weights.get(str(key), 1.0)

    def with_theta(self, theta: float) -> "SimilarityConfig":
        return SimilarityConfig(**{**self._fields(), "theta": theta})

    def _fields(self) -> dict:
        return {
            "functions": dict(self.functions),
            "ladder_k": self.ladder_k,
            "ranges": dict(self.ranges),
            "weights": dict(self.weights),
            "theta": self.theta,
            "context_gate": self.context_gate,
        }

    def to_dict(self) -> dict:
        return {
            "functions": dict(self.functions),
            "ladder_k": self.ladder_k,
            "ranges": {k: [r.min, r.max] for k, r in self.ranges.items()},
            "weights": dict(self.weights),
            "theta": self.theta,
            "context_gate": self.context_gate.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimilarityConfig":
        allowed = {"functions", "ladder_k", "ranges", "weights", "theta", "context_gate"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown similarity config key(s) {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        if "functions" in data:
            kwargs["functions"] = dict(data["functions"])
        if "ladder_k" in data:
            kwargs["ladder_k"] = float(data["ladder_k"])
        if "ranges" in data:
            kwargs["ranges"] = {k: ValueRange(float(v[0]), float(v[1])) for k, v in data["ranges"].items()}
        if "weights" in data:
            kwargs["weights"] = dict(data["weights"])
        if "theta" in data:
            kwargs["theta"] = float(data["theta"])
        if "context_gate" in data:
            try:
                kwargs["context_gate"] = ContextGate(data["context_gate"])
            except ValueError:
                raise ConfigError(f"unknown context_gate {data['context_gate']!r}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "SimilarityConfig":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class SimilarityBreakdown:
    global_: float
    groups: Mapping[str, float]
    leaves: tuple[tuple[AttributeId, float], ...]
    gated: bool = False

    def to_dict(self) -> dict:
        return {
            "global": self.global_,
            "gated": self.gated,
            "groups": dict(self.groups),
            "leaves": {str(a): s for a, s in self.leaves},
        }


def context_gate(query: ContextInfo, stored: ContextInfo, mode: ContextGate = ContextGate.BAM_ONLY,
                 ladder_k: float = 128.0) -> bool:
    """True when ``stored`` may be compared with ``query`` at all."""
    mode = ContextGate(mode)
    if mode is ContextGate.OFF:
        return True
    if query.bam != stored.bam:
        return False
    if mode is ContextGate.BAM_ONLY:
        return True
    q, s = query.limits, stored.limits
    for metric in ("blocking", "preemption", "devolution", "min_utilization"):
        if getattr(q, metric) != getattr(s, metric):
            return False
    if len(query.bcs) != len(stored.bcs):
        return False
    return all(abs(a - b) <= ladder_k for a, b in zip(query.bcs, stored.bcs))


def _local(group: str, attr: AttributeId, a: Any, b: Any, config: SimilarityConfig) -> float:
    fn = config.functions[group]
    if fn == "exact":
        return float(exact_sim(a, b))
    if fn == "ladder":
        return float(ladder_sim(a, b, config.ladder_k))
    if group == "bandwidth":
        return linear_sim(a, b, config.ranges["bandwidth"])
    return linear_sim(a, b, config.ranges.get(attr.metric, PERCENT))


def case_similarity(query: Case, stored: Case, config: SimilarityConfig | None = None) -> SimilarityBreakdown:
    """Three-level similarity of two cases.

    Leaves are scored with their group's local function, each numeric group
    is reduced to one score by :func:`nn_global`, and the four level-1 terms
    (BAM match plus the three group scores) give the global value. A pair
    rejected by the context gate keeps its breakdown but has global 0.
    """
    config = config or SimilarityConfig()
    if query.n_tc != stored.n_tc:
        raise IncomparableCasesError(f"N_TC {query.n_tc} vs {stored.n_tc}")
    qv, sv = to_attribute_vector(query), to_attribute_vector(stored)

    leaves: list[tuple[AttributeId, float]] = []
    by_group: dict[str, list[tuple[AttributeId, float]]] = {g: [] for g in GROUPS}
    for (attr, a), (_, b) in zip(qv, sv):
        s = _local(attr.group, attr, a, b, config)
        leaves.append((attr, s))
        by_group[attr.group].append((attr, s))

    groups: dict[str, float] = {}
    for g in GROUPS:
        items = by_group[g]
        groups[g] = nn_global([s for _, s in items], [config.weight(a) for a, _ in items])
    level1 = [groups[g] for g in GROUPS]
    global_ = nn_global(level1, [config.weight(g) for g in GROUPS])

    passed = context_gate(query.context, stored.context, config.context_gate, config.ladder_k)
    return SimilarityBreakdown(
        global_=global_ if passed else 0.0,
        groups=MappingProxyType(groups),
        leaves=tuple(leaves),
        gated=not passed,
    )
