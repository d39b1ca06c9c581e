"""Positive and negative case bases with ranked retrieval.

Stores are append-only. On disk a store is a directory holding
``positive.jsonl`` and ``negative.jsonl`` (one case per line, in the case
JSON schema) and ``meta.json`` with the schema version and next sequence
number.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

from .model import Case, Outcome, SchemaError, validate_case
from .similarity import SimilarityBreakdown, SimilarityConfig, case_similarity, context_gate

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
POSITIVE_FILE = "positive.jsonl"
NEGATIVE_FILE = "negative.jsonl"
META_FILE = "meta.json"


class StoreError(Exception):
    pass


class DuplicateCaseError(StoreError):
    pass


class SchemaVersionError(StoreError):
    pass


class StoreFormatError(StoreError):
    pass


@dataclass(frozen=True)
class Match:
    case: Case
    breakdown: SimilarityBreakdown

    @property
    def similarity(self) -> float:
        return self.breakdown.global_


@dataclass(frozen=True)
class RetrievalResult:
    query: Case
    matches: tuple[Match, ...]
    theta: float
    k: int

    def __bool__(self) -> bool:
        return bool(self.matches)

    def __len__(self) -> int:
        return len(self.matches)

    @property
    def top(self) -> Optional[Match]:
        return self.matches[0] if self.matches else None

    def to_dict(self) -> dict:
        return {
            "query": self.query.id,
            "theta": self.theta,
            "k": self.k,
            "matches": [
                {"rank": i + 1, "case_id": m.case.id, **m.breakdown.to_dict()}
                for i, m in enumerate(self.matches)
            ],
        }


@dataclass
class CaseStore:
    positive: list[Case] = field(default_factory=list)
    negative: list[Case] = field(default_factory=list)
    next_sequence: int = 0
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.positive) + len(self.negative)

    def __iter__(self) -> Iterator[Case]:
        yield from self.positive
        yield from self.negative

    def ids(self) -> set[str]:
        return {c.id for c in self}

    def get(self, case_id: str) -> Case:
        for c in self:
            if c.id == case_id:
                return c
        raise KeyError(case_id)

    def new_case_id(self) -> str:
        """Id for the next retained case; unique as long as ids follow it."""
        seq = self.next_sequence
        taken = self.ids()
        while f"case-{seq:06d}" in taken:
            seq += 1
        return f"case-{seq:06d}"

    def retrieve(self, query: Case, config: SimilarityConfig | None = None, k: int = 3) -> RetrievalResult:
        config = config or SimilarityConfig()
        if k < 1:
            raise ValueError("k must be >= 1")
        scored = []
        for stored in self.positive:
            if not context_gate(query.context, stored.context, config.context_gate, config.ladder_k):
                continue
            bd = case_similarity(query, stored, config)
            if bd.global_ >= config.theta:
                scored.append(Match(stored, bd))
        # most similar first; ties go to the most recently retained, then id
        scored.sort(key=lambda m: (-m.similarity, -(m.case.retained_at or 0), m.case.id))
        return RetrievalResult(query=query, matches=tuple(scored[:k]), theta=config.theta, k=k)

    def is_negative_match(self, candidate: Case, config: SimilarityConfig | None = None) -> bool:
        """True if a similar negative case already tried the candidate's solution."""
        config = config or SimilarityConfig()
        if candidate.solution is None:
            raise ValueError("candidate carries no solution")
        key = candidate.solution.key
        for neg in self.negative:
            if neg.solution is None or neg.solution.key != key:
                continue
            if not context_gate(candidate.context, neg.context, config.context_gate, config.ladder_k):
                continue
            if case_similarity(candidate, neg, config).global_ >= config.theta:
                return True
        return False

    def retain(self, case: Case) -> Case:
        """Append ``case`` to the store matching its outcome; returns the stored copy."""
        if case.outcome is Outcome.UNRESOLVED:
            raise ValueError(f"cannot retain unresolved case {case.id}")
        if case.solution is None:
            raise ValueError(f"cannot retain case {case.id} without a solution")
        if case.id in self.ids():
            raise DuplicateCaseError(case.id)
        stored = replace(case, retained_at=self.next_sequence)
        self.next_sequence += 1
        (self.positive if case.outcome is Outcome.POSITIVE else self.negative).append(stored)
        return stored

    def rolled_back(self, sequence: int) -> "CaseStore":
        """Copy of the store as it was before retention ``sequence``."""
        keep = lambda cs: [c for c in cs if (c.retained_at or 0) < sequence]  # noqa: E731
        return CaseStore(keep(self.positive), keep(self.negative), sequence, self.schema_version)

    def counts(self) -> tuple[int, int]:
        return len(self.positive), len(self.negative)

    # --- persistence -------------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        for name, cases in ((POSITIVE_FILE, self.positive), (NEGATIVE_FILE, self.negative)):
            with open(root / name, "w") as fh:
                for c in cases:
                    fh.write(json.dumps(c.to_dict()) + "\n")
        meta = {"schema_version": self.schema_version, "next_sequence": self.next_sequence}
        (root / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CaseStore":
        root = Path(path)
        meta_path = root / META_FILE
        if not meta_path.exists():
            raise StoreFormatError(f"{root}: not a case store (no {META_FILE})")
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise StoreFormatError(f"{meta_path}: {exc}") from None
        version = meta.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(f"{meta_path}: schema_version {version!r}, expected {SCHEMA_VERSION}")
        store = cls(next_sequence=int(meta.get("next_sequence", 0)))
        for name, outcome, bucket in (
            (POSITIVE_FILE, Outcome.POSITIVE, store.positive),
            (NEGATIVE_FILE, Outcome.NEGATIVE, store.negative),
        ):
            file = root / name
            if not file.exists():
                continue
            with open(file) as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        case = Case.from_dict(json.loads(line))
                    except (json.JSONDecodeError, SchemaError, KeyError, TypeError, ValueError) as exc:
                        raise StoreFormatError(f"{file}:{lineno}: {exc}") from None
                    issues = validate_case(case)
                    if case.outcome is not outcome:
                        issues.append(f"outcome {case.outcome.value} in {name}")
                    if issues:
                        raise StoreFormatError(f"{file}:{lineno}: " + "; ".join(issues))
                    bucket.append(case)
        ids = [c.id for c in store]
        if len(ids) != len(set(ids)):
            raise StoreFormatError(f"{root}: duplicate case ids")
        if store.positive or store.negative:
            top = max(c.retained_at or 0 for c in store)
            store.next_sequence = max(store.next_sequence, top + 1)
        return store

    @staticmethod
    def exists(path: str | os.PathLike) -> bool:
        root = Path(path)
        return any((root / n).exists() for n in (POSITIVE_FILE, NEGATIVE_FILE, META_FILE))
