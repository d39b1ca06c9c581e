import json
import random

import pytest

from bamcbr.engine import CycleMode, ScriptedManager
from bamcbr.model import BamId, MeasurementSnapshot, ProblemDescriptor, ProblemKind, Solution, ToleranceProfile
from bamcbr.scenarios import MAM_OVERLOAD, builtin
from bamcbr.sim import (
    POC_PROFILES,
    ScenarioAborted,
    ScenarioConfig,
    ScenarioError,
    Simulator,
    detect_alerts,
    poc_cases,
    report_to_json,
    run_scenario,
    violation_set,
)
from bamcbr.store import CaseStore

CARLOS = POC_PROFILES["Carlos"]


def snap(util=(50, 50, 50), block=(0, 0, 0), pre=(0, 0, 0), dev=(0, 0, 0), w=0):
    return MeasurementSnapshot(util, block, pre, dev, w)


def scenario(**overrides):
    return ScenarioConfig.from_dict({**MAM_OVERLOAD, **overrides})


def brute_alerts(s: MeasurementSnapshot, limits: ToleranceProfile):
    out = set()
    for c in range(3):
        if s.blocking[c] > limits.blocking[c]:
            out.add((ProblemKind.HIGH_BLOCKING, c))
        if s.preemption[c] > limits.preemption[c]:
            out.add((ProblemKind.HIGH_PREEMPTION, c))
        if s.devolution[c] > limits.devolution[c]:
            out.add((ProblemKind.HIGH_DEVOLUTION, c))
        if s.utilization[c] < limits.min_utilization[c]:
            out.add((ProblemKind.LOW_UTILIZATION, c))
    return out


def test_detect_alerts_examples():
    alerts = detect_alerts(snap(block=(85, 10, 61)), CARLOS)
    assert len(alerts) == 1
    assert alerts[0].problem == ProblemDescriptor(ProblemKind.HIGH_BLOCKING, (0, 2))
    alerts = detect_alerts(snap(util=(10, 50, 50), pre=(90, 0, 0)), CARLOS)
    assert [a.problem.kind for a in alerts] == [ProblemKind.HIGH_PREEMPTION, ProblemKind.LOW_UTILIZATION]


def test_detect_alerts_boundary_is_strict():
    assert detect_alerts(snap(block=(70, 65, 60), util=(20, 20, 20)), CARLOS) == []
    assert detect_alerts(snap(block=(70.0001, 0, 0)), CARLOS)


def test_detect_alerts_against_brute_force():
    rng = random.Random(2)
    for _ in range(2000):
        v = lambda: tuple(rng.choice([0, 20, 60, 65, 70, 80, rng.uniform(0, 100)]) for _ in range(3))  # noqa: E731
        s = snap(v(), v(), v(), v())
        assert violation_set(detect_alerts(s, CARLOS)) == brute_alerts(s, CARLOS)


def test_poc_cases_violate_exactly_their_family():
    for case in poc_cases():
        got = violation_set(detect_alerts(case.measurements, case.context.limits))
        assert {k for k, _ in got} == {case.problem.kind}
        assert sorted(tc for _, tc in got) == list(case.problem.affected_tcs)
        assert all(v == 0 for v in case.measurements.devolution)


def test_simulator_is_deterministic():
    a, b = Simulator(scenario()), Simulator(scenario())
    for _ in range(4):
        assert a.run_window() == b.run_window()
    assert a.fingerprint() == b.fingerprint()


def test_zero_rate_run():
    traffic = {"phases": [{"duration": 1, "rates": [0, 0, 0]}]}
    sim = Simulator(scenario(traffic=traffic))
    s = sim.run_window()
    assert s.utilization == (0.0, 0.0, 0.0) and s.blocking == (0.0, 0.0, 0.0)


def test_mam_overload_alerts_within_three_windows():
    sim = Simulator(scenario())
    hits = 0
    for _ in range(3):
        alerts = detect_alerts(sim.run_window(), scenario().tolerance)
        hits += any(a.problem.kind is ProblemKind.HIGH_BLOCKING and 0 in a.problem.affected_tcs for a in alerts)
    assert hits >= 2


def test_probe_isolation_and_outcomes():
    cfg = scenario()
    sim = Simulator(cfg)
    s = None
    for _ in range(2):
        s = sim.run_window()
    before = sim.fingerprint()
    problem = ProblemDescriptor(ProblemKind.HIGH_BLOCKING, (0,))
    baseline = violation_set(detect_alerts(s, cfg.tolerance))

    noop = sim.probe_solution(Solution(new_bcs=cfg.bcs), problem, baseline)
    assert not noop.satisfactory and "persists" in noop.detail

    atcs = sim.probe_solution(Solution(BamId.ATCS), problem, baseline)
    assert atcs.satisfactory and atcs.snapshot.blocking[0] < 70
    assert sim.fingerprint() == before
    # probing twice gives the same evidence
    assert sim.probe_solution(Solution(BamId.ATCS), problem, baseline) == atcs


def test_probe_rejects_invalid_solution():
    sim = Simulator(scenario())
    with pytest.raises(ScenarioError):
        sim.probe_solution(Solution(new_bcs=(1.0, 2.0)), ProblemDescriptor(ProblemKind.HIGH_BLOCKING, (0,)))


def test_scenario_config_round_trip():
    cfg = scenario()
    assert ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


@pytest.mark.parametrize("patch", [
    {"bogus": 1},
    {"bcs": [512, 256, 1024], "bam": "RDM"},
    {"windows": 0},
    {"traffic": {"phases": []}},
    {"traffic": {"phases": [{"duration": 1, "rates": [1, 1]}]}},
    {"tolerance": "Nobody"},
])
def test_scenario_config_errors(patch):
    with pytest.raises(ScenarioError):
        scenario(**patch)


def test_builtin_lookup():
    assert builtin("mam-overload")["bam"] == "MAM"
    with pytest.raises(ScenarioError):
        builtin("nope")


def test_run_scenario_learns_then_reuses():
    store = CaseStore()
    first = run_scenario(scenario(), store)
    s = first["summary"]
    assert s["status"] == "ok" and s["cycles"] >= 1 and s["fallbacks"] >= 1
    assert s["final_bam"] == "ATCS" and s["retained_positive"] >= 1
    assert first["switches"][0]["from"] == "MAM"
    second = run_scenario(scenario(), store)
    assert second["summary"]["fallbacks"] == 0
    assert second["summary"]["final_bam"] == "ATCS"
    events = [e["event"] for e in second["cycles"][0]["trace"]]
    assert events.index("candidate") < events.index("probe")


def test_run_scenario_with_seeded_store_reuses(poc_store):
    report = run_scenario(scenario(), poc_store)
    cycle = report["cycles"][0]
    assert cycle["fallbacks"] == 0
    first_candidate = next(e for e in cycle["trace"] if e["event"] == "candidate")
    assert first_candidate["source"] == "retrieval"


def test_report_is_reproducible():
    a = report_to_json(run_scenario(scenario(), CaseStore()))
    b = report_to_json(run_scenario(scenario(), CaseStore()))
    assert a == b


def test_report_rows_have_percentages():
    report = run_scenario(scenario(windows=4), CaseStore())
    assert len(report["windows"]) == 4
    for row in report["windows"]:
        for m in ("utilization", "blocking", "preemption", "devolution"):
            assert len(row[m]) == 3 and all(0 <= v <= 100 for v in row[m])


def test_manager_mode_scripted():
    store = CaseStore()
    mgr = ScriptedManager(["reject", "approve"])
    report = run_scenario(scenario(windows=3), store, manager=mgr, mode=CycleMode.MANAGER)
    assert store.counts() == (1, 1)
    assert store.negative[0].solution.switch_to is BamId.ATCS
    assert report["summary"]["final_bam"] == "RDM"


def test_unresolved_run_aborts_with_partial_report():
    store = CaseStore()
    mgr = ScriptedManager(["reject"] * 10)
    with pytest.raises(ScenarioAborted) as exc:
        run_scenario(scenario(windows=3), store, manager=mgr, mode=CycleMode.MANAGER)
    rep = exc.value.report
    assert rep["summary"]["status"] == "unresolved"
    assert rep["cycles"][-1]["converged"] is False
    assert store.counts()[0] == 0 and store.counts()[1] >= 1
