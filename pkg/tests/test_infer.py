from __future__ import annotations

import json

import pytest

from conftest import model, requires_solver
from oracles import initial_states, reachable_by_phase, valuations
from phaseforge.frontend import lower, parse
from phaseforge.infer import (
    AbstractTrace,
    InferConfig,
    InferError,
    PhasePDR,
    diagnose,
    infer,
    validate_trace,
    validate_witness,
)
from phaseforge.logic import TRUE, evaluate
from phaseforge.vcgen import check

pytestmark = requires_solver

TRIVIAL = """
sort node
relation p(node)
init forall n:node. ~p(n)
action set(n: node) {
  p(n) := true
}
safety forall n:node. p(n) | ~p(n)
automaton {
  init phase A { }
  self A on set(*)
}
"""

BAD_AT_START = """
sort node
relation bad
relation p(node)
init bad
action set(n: node) {
  p(n) := true
}
safety ~bad
automaton {
  init phase A { }
  self A on set(*)
}
"""


def _infer(low, session_for, **cfg):
    return infer(low.ts, low.structure, low.safety, InferConfig(**cfg), session_for(low.ts.vocab))


def test_lockserv_single_converges_to_a_checked_automaton(session_for):
    low = model("lockserv_single")
    res = _infer(low, session_for)
    assert res.status == "success"
    assert res.stats.lemmas == len(res.lemmas) > 0
    verdict = check(low.ts, res.automaton, low.safety, session_for(low.ts.vocab))
    assert verdict.valid
    assert res.automaton.eta["HL"] != TRUE


def test_trivially_safe_system_converges_with_true_characterizations(session_for):
    low = lower(parse(TRIVIAL))
    res = _infer(low, session_for)
    assert res.status == "success"
    assert res.lemmas == []
    assert res.automaton.eta == {"A": TRUE}


def test_initial_safety_violation_gives_a_one_state_concrete_trace(session_for):
    low = lower(parse(BAD_AT_START))
    res = _infer(low, session_for)
    assert res.status == "counterexample"
    t = res.trace
    assert len(t) == 1 and t.is_concrete
    assert t.violation.kind == "safety"
    assert validate_trace(t, low.ts, low.structure, low.safety) == []


def test_view_variables_missing_from_a_violation_still_get_values(session_for):
    low = lower(parse(BAD_AT_START.replace("automaton {", "automaton {\n  view x: node")))
    res = _infer(low, session_for)
    assert res.status == "counterexample"
    t = res.trace
    assert set(t.valuation) == set(low.structure.view)
    assert validate_trace(t, low.ts, low.structure, low.safety) == []


def test_inference_is_deterministic_for_a_fixed_seed(session_for):
    low = model("lockserv_single")
    a = _infer(low, session_for, seed=7)
    b = _infer(low, session_for, seed=7)
    assert [(l.phase, l.level, l.clause) for l in a.lemmas] == [(l.phase, l.level, l.clause) for l in b.lemmas]
    assert a.stats.queries == b.stats.queries


def test_exhausted_budget_reports_timeout_with_frames(session_for):
    low = model("lockserv_single")
    res = _infer(low, session_for, budget_s=1e-9)
    assert res.status == "timeout"
    assert "frontier" in res.frames and "lemmas" in res.frames


def test_events_are_json_serializable(session_for):
    low = model("lockserv_single")
    events: list[dict] = []
    res = _infer(low, session_for, on_event=events.append)
    assert res.status == "success"
    kinds = {e["event"] for e in events}
    assert {"start", "frame", "lemma", "converged", "done"} <= kinds
    for e in events:
        json.dumps(e)


class _Recording(PhasePDR):
    """Snapshots lemma levels around every pushing round."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.snapshots: list[dict[int, tuple]] = []

    def _snap(self):
        self.snapshots.append({l.ident: (l.phase, l.clause, l.level) for l in self.lemmas})

    def _push(self):
        self._snap()
        super()._push()
        self._snap()


@pytest.mark.parametrize(
    "name,sizes,depth",
    [
        ("lockserv_single", {"node": 2}, 8),
        ("lockserv_multi", {"node": 2, "lock": 1}, 6),
        ("unsafe_two_step", {"node": 2}, 3),
    ],
)
def test_frames_are_monotone_and_overapproximate_bounded_reachability(name, sizes, depth, session_for):
    low = model(name)
    ts, s = low.ts, low.structure
    pdr = _Recording(ts, s, low.safety, InferConfig(), session_for(ts.vocab))
    pdr.run()
    assert pdr.snapshots
    # Levels only grow, so F_{i+1} is contained in F_i at every point.
    for before, after in zip(pdr.snapshots, pdr.snapshots[1:]):
        for ident, (_, _, lvl) in before.items():
            assert after[ident][2] >= lvl
    inits = initial_states(ts, sizes)
    for v in valuations(s.view, inits[0]):
        layers = reachable_by_phase(ts, s, inits, v, depth)
        for snap in pdr.snapshots:
            for phase, clause, lvl in snap.values():
                for q, sigma in layers[min(lvl, depth)]:
                    if q == phase:
                        assert evaluate(sigma, v, clause), (phase, lvl, clause)


def test_lemmas_at_the_initial_phase_never_exclude_initial_states(session_for):
    low = model("lockserv_multi")
    res = _infer(low, session_for)
    assert res.status == "success"
    s = low.structure
    inits = initial_states(low.ts, {"node": 2, "lock": 1})
    for l in res.lemmas:
        if l.phase != s.init_phase:
            continue
        for sigma in inits:
            for v in valuations(s.view, sigma):
                assert evaluate(sigma, v, l.clause)


# ---------------------------------------------------------------------------
# Abstract traces and diagnosis


@pytest.fixture(scope="module")
def broken():
    from phaseforge.solver import SolverSession

    low = model("kv_broken_structure")
    with SolverSession(low.ts.vocab) as sess:
        res = infer(low.ts, low.structure, low.safety, InferConfig(), sess)
    assert res.status == "counterexample"
    return low, res.trace


def test_broken_structure_trace_revalidates_and_round_trips(broken):
    low, t = broken
    assert validate_trace(t, low.ts, low.structure, low.safety) == []
    assert t.violation.kind == "edge_cover"
    assert t.violation.action == "recv_transfer_msg"
    again = AbstractTrace.from_json(low.ts.vocab, json.loads(t.dumps()))
    assert again.to_json() == t.to_json()
    assert validate_trace(again, low.ts, low.structure, low.safety) == []


def test_tampered_traces_are_rejected(broken):
    low, t = broken
    data = t.to_json()
    data["violation"]["phase"] = "O" if data["violation"]["phase"] != "O" else "T"
    bad = AbstractTrace.from_json(low.ts.vocab, data)
    assert validate_trace(bad, low.ts, low.structure, low.safety)
    data = t.to_json()
    for st in data["steps"]:
        st.pop("args", None)
        if "action" in st:
            st["args"] = {"wrong": "x"}
    bad = AbstractTrace.from_json(low.ts.vocab, data)
    assert any("malformed" in p for p in validate_trace(bad, low.ts, low.structure, low.safety))
    with pytest.raises(InferError):
        AbstractTrace.from_json(low.ts.vocab, {"format": "other"})


def test_broken_structure_trace_is_a_concrete_counterexample(broken, session_for):
    low, t = broken
    d = diagnose(t, low.ts, low.structure, low.safety, bound=max(8, len(t)))
    assert d.concrete
    assert d.violation.kind == "edge_cover"
    assert validate_witness(d, low.ts, low.structure, low.safety, t.phases) == []
    doc = d.to_json()
    assert doc["status"] == "concrete-counterexample" and "witness" in doc


def test_diagnose_rejects_bounds_shorter_than_the_trace(broken):
    low, t = broken
    with pytest.raises(InferError):
        diagnose(t, low.ts, low.structure, low.safety, bound=0)
    if len(t) > 1:
        with pytest.raises(InferError):
            diagnose(t, low.ts, low.structure, low.safety, bound=len(t) - 1)


def test_diagnose_rejects_traces_from_another_structure(broken):
    low, t = broken
    other = model("kvr")
    with pytest.raises(InferError):
        diagnose(t, other.ts, other.structure, other.safety, bound=10)


def test_unsafe_model_has_a_short_concrete_witness(session_for):
    low = model("unsafe_two_step")
    res = _infer(low, session_for)
    assert res.status == "counterexample"
    d = diagnose(res.trace, low.ts, low.structure, low.safety, bound=5)
    assert d.concrete
    assert len(d.actions) <= 2
    assert d.violation.kind == "safety"
    assert not evaluate(d.states[-1], {}, low.safety.body)


def test_concrete_trace_is_returned_as_its_own_witness(session_for):
    low = lower(parse(BAD_AT_START))
    res = _infer(low, session_for)
    d = diagnose(res.trace, low.ts, low.structure, low.safety, bound=1)
    assert d.concrete
    assert d.states == [res.trace.steps[0].concrete]


def test_artifact_trace_is_classified_within_the_bound(session_for):
    low = model("needs_witness")
    res = _infer(low, session_for)
    assert res.status == "counterexample"
    t = res.trace
    assert not t.is_concrete
    assert validate_trace(t, low.ts, low.structure, low.safety) == []
    d = diagnose(t, low.ts, low.structure, low.safety, bound=len(t))
    assert d.status == "artifact-within-bound"
    assert "witness" not in d.to_json()


@pytest.mark.slow
def test_cache_coherence_structure_converges(session_for):
    low = model("cache_mesi")
    res = _infer(low, session_for, budget_s=1800)
    assert res.status == "success", res.reason
    assert check(low.ts, res.automaton, low.safety, session_for(low.ts.vocab)).valid
