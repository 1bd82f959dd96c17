from __future__ import annotations

import random

import pytest

from conftest import model, requires_solver
from oracles import initial_states
from phaseforge.automaton import (
    AutomatonError,
    EdgeLabel,
    PhaseAutomaton,
    PhaseStructure,
    compile_entry,
    determinize,
    flatten,
    is_deterministic,
    trace_member,
    wrap_invariant,
)
from phaseforge.frontend import lower, parse
from phaseforge.logic import FALSE, TRUE, Forall, Not, Rel, Var, evaluate, evaluate_two_vocab
from phaseforge.system import random_trace, step

TOGGLE = """
sort node
relation lit(node)
init forall n:node. ~lit(n)
action flip_on(n: node) {
  require ~lit(n)
  lit(n) := true
}
action flip_off(n: node) {
  require lit(n)
  lit(n) := false
}
automaton {
  view x: node
  init phase Off { invariant ~lit(x) }
  phase On { invariant lit(x) }
  Off -> On on flip_on(x)
  On -> Off on flip_off(x)
  self Off on flip_on(m) where m != x
  self Off on flip_off(m) where m != x
  self On on flip_on(m) where m != x
  self On on flip_off(m) where m != x
}
"""

X = Var("x", "node")


def toggle():
    return lower(parse(TOGGLE))


def test_compile_entry_binds_view_and_locals():
    low = toggle()
    e = compile_entry(low.ts, (X,), EdgeLabel("flip_on", ("m",), Not(Rel("lit", (Var("m", "node"),)))))
    (p,) = e.params
    assert p.name == "_n"
    assert X not in e.match.free_vars and p in e.match.free_vars


@pytest.mark.parametrize(
    "label, message",
    [
        (EdgeLabel("nope", ()), "unknown action"),
        (EdgeLabel("flip_on", (None, None)), "argument"),
        (EdgeLabel("flip_on", ("m",), Rel("lit", (Var("z", "node"),))), "outside view"),
    ],
)
def test_compile_entry_errors(label, message):
    with pytest.raises(AutomatonError) as e:
        compile_entry(toggle().ts, (X,), label)
    assert message in str(e.value)


def test_structure_queries():
    s = toggle().structure
    assert s.edges() == [("Off", "Off"), ("Off", "On"), ("On", "Off"), ("On", "On")]
    assert s.label("Off", "Off") != FALSE
    assert s.outgoing("Off") == ["Off", "On"] and s.incoming("Off") == ["Off", "On"]
    assert s.disabled_actions("Off") == []
    assert "Off -> On on flip_on(x)" in s.describe()


def test_absent_edge_label_is_false_and_disabled_actions_are_listed():
    low = toggle()
    s = low.structure
    s2 = s.with_entries([e for e in s.entries if e[2].action != "flip_off" or e[0] != "On"])
    assert s2.label("On", "Off") == FALSE
    assert s2.disabled_actions("On") == ["flip_off"]


def test_automaton_validates_characterizations():
    s = toggle().structure
    with pytest.raises(AutomatonError):
        PhaseAutomaton(s, {"Off": TRUE})
    with pytest.raises(AutomatonError):
        PhaseAutomaton(s, {"Off": TRUE, "On": Rel("lit", (Var("y", "node"),))})
    with pytest.raises(AutomatonError):
        PhaseAutomaton(s, {"Off": TRUE, "On": Rel("lit", (X,), True)})


def _toggle_states(low, n: int, length: int, seed: int):
    inits = initial_states(low.ts, {"node": n})
    rng = random.Random(seed)
    states = [rng.choice(inits)]
    for _ in range(length):
        sigma = states[-1]
        succ = [
            t
            for a in low.ts.actions
            for e in sigma.domain["node"]
            for t in step(low.ts, sigma, a.name, (e,))
        ]
        states.append(rng.choice(succ))
    return states


def test_trace_member_accepts_real_traces_with_the_matching_phase_sequence():
    low = toggle()
    a = low.automaton()
    for seed in range(10):
        states = _toggle_states(low, 2, 6, seed)
        for e in states[0].domain["node"]:
            ok, phases = trace_member(a, states, {X: e})
            assert ok
            assert phases == ["On" if (e,) in s.rels["lit"] else "Off" for s in states]


def test_trace_member_rejects_non_traces():
    low = toggle()
    a = low.automaton()
    states = _toggle_states(low, 2, 1, 0)
    e = next(iter(states[1].domain["node"]))
    # Jump that flips two nodes at once follows no single edge.
    jump = states[0].replace(rels={"lit": [(x,) for x in states[0].domain["node"]]})
    assert trace_member(a, [states[0], jump], {X: e}) == (False, None)
    # A state violating the initial characterization is rejected immediately.
    assert trace_member(a, [jump], {X: e}) == (False, None)


def test_flatten_is_view_quantified_disjunction():
    a = toggle().automaton()
    f = flatten(a)
    assert isinstance(f, Forall) and f.vars == (X,)
    low = toggle()
    for s in _toggle_states(low, 2, 5, 3):
        assert evaluate(s, {}, f)


def test_wrap_invariant_covers_every_action():
    low = toggle()
    inv = TRUE
    a = wrap_invariant(inv, low.ts)
    assert a.structure.phases == ("inv",)
    assert {e.label.action for _, e in a.structure.out_entries("inv")} == {"flip_on", "flip_off"}
    with pytest.raises(AutomatonError):
        wrap_invariant(Rel("lit", (X,)), low.ts)


def test_determinize_adds_priority_exclusions():
    low = toggle()
    a = low.automaton()
    d = determinize(a, ["On", "Off"])
    s = d.structure
    assert s.excluded("Off", "On") == ()
    assert len(s.excluded("Off", "Off")) == 1
    with pytest.raises(AutomatonError):
        determinize(a, ["On"])
    # Determinized labels are pairwise disjoint on concrete transitions.
    states = _toggle_states(low, 2, 6, 5)
    for pre, post in zip(states, states[1:]):
        for e in pre.domain["node"]:
            for q in s.phases:
                hits = [p for p in s.outgoing(q) if evaluate_two_vocab(pre, post, {X: e}, s.label(q, p))]
                assert len(hits) <= 1


@requires_solver
def test_is_deterministic_detects_overlap(session_for):
    low = toggle()
    ts = low.ts
    s = low.structure
    sess = session_for(ts.vocab)
    assert is_deterministic(s, sess) == (True, None)
    overlap = PhaseStructure(
        ts, ("A", "B"), "A", (X,), [("A", "A", EdgeLabel("flip_on", (None,))), ("A", "B", EdgeLabel("flip_on", ("x",)))]
    )
    ok, wit = is_deterministic(overlap, sess)
    assert not ok and wit[:3] == ("A", "A", "B")
    d = determinize(PhaseAutomaton(overlap, {"A": TRUE, "B": TRUE}))
    assert is_deterministic(d.structure, sess)[0]


@requires_solver
def test_random_kvr_traces_are_members(session_for):
    low = model("kvr")
    a = low.automaton()
    sizes = {s: 2 for s in low.ts.vocab.sorts}
    tr = random_trace(low.ts, sizes, 6, seed=2, session=session_for(low.ts.vocab))
    for k in tr.states[0].domain["key"]:
        ok, _ = trace_member(a, tr.states, {Var("k", "key"): k})
        assert ok
