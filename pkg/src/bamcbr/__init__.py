"""Case-based reasoning for switching bandwidth allocation models on a DS-TE link."""

from .bam import AdmissionKind, AdmissionOutcome, BamState, Lsp
from .engine import CycleMode, CycleOutcome, RevisionVerdict, Verdict, run_cycle
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
    to_attribute_vector,
    validate_case,
)
from .similarity import SimilarityConfig, case_similarity, exact_sim, ladder_sim, linear_sim, nn_global
from .sim import ScenarioConfig, detect_alerts, run_scenario, seed_poc_store
from .store import CaseStore

__version__ = "0.1.0"
