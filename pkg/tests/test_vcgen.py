from __future__ import annotations

import itertools
import re

import pytest

from conftest import corpus, model, requires_solver
from phaseforge.automaton import PhaseAutomaton, wrap_invariant
from phaseforge.frontend import lower, parse
from phaseforge.logic import TRUE, Structure, evaluate, evaluate_two_vocab, top_conjuncts
from phaseforge.system import enumerate_structures
from phaseforge.vcgen import check, countermodel_falsifies, emit_chc, gen_vcs
from test_automaton import TOGGLE


def expected_vc_count(s, n_actions: int, split: bool = True) -> int:
    """Initiation, one per edge, covering per phase (per action if split), safety per phase."""
    cover = len(s.phases) * (n_actions if split else 1)
    return 1 + len(s.edges()) + cover + len(s.phases)


@pytest.mark.parametrize("name", ["kvr", "lockserv_single", "kv_basic", "ring"])
def test_vc_counts(name):
    low = model(name)
    s = low.structure
    a = low.automaton() or PhaseAutomaton(s, {q: TRUE for q in s.phases})
    n = len(low.ts.actions)
    assert len(gen_vcs(low.ts, a, low.safety)) == expected_vc_count(s, n)
    assert len(gen_vcs(low.ts, a, low.safety, split_covering=False)) == expected_vc_count(s, n, False)


def test_kvr_unsplit_count_is_nine():
    low = model("kvr")
    vcs = gen_vcs(low.ts, low.automaton(), low.safety, split_covering=False)
    assert len(vcs) == 9
    assert [v.name for v in vcs][:5] == [
        "initiation(O)",
        "inductiveness(O,O)",
        "inductiveness(O,T)",
        "inductiveness(T,O)",
        "inductiveness(T,T)",
    ]


def _pairs(ts, n):
    states = list(enumerate_structures(ts.vocab, {"node": n}))
    return states, [(a, b) for a in states for b in states]


def _open_sat(sq, pre, post):
    vs = sorted(sq.formula.free_vars)
    for combo in itertools.product(*(pre.domain[v.sort] for v in vs)):
        env = dict(zip(vs, combo))
        if post is None:
            if evaluate(pre, env, sq.formula):
                return True
        elif evaluate_two_vocab(pre, post, env, sq.formula):
            return True
    return False


@pytest.mark.parametrize("mutate", [False, True])
def test_closed_vc_fails_exactly_when_a_subquery_is_satisfiable(mutate):
    """Dual route: evaluate each closed VC and its split sub-queries on every small state pair."""
    low = lower(parse(TOGGLE))
    a = low.automaton()
    if mutate:
        a = PhaseAutomaton(a.structure, {"Off": TRUE, "On": a.eta["On"]})
    states, pairs = _pairs(low.ts, 2)
    for vc in gen_vcs(low.ts, a, low.safety):
        two = vc.formula.has_primed or any(sq.formula.has_primed for sq in vc.queries)
        for pre, post in pairs if two else [(s, None) for s in states]:
            holds = evaluate_two_vocab(pre, post, {}, vc.formula) if post is not None else evaluate(pre, {}, vc.formula)
            some_sat = any(_open_sat(sq, pre, post) for sq in vc.queries)
            assert holds != some_sat, vc.name


@requires_solver
def test_kvr_automaton_is_valid():
    low = model("kvr")
    v = check(low.ts, low.automaton(), low.safety)
    assert v.valid and not v.failures and v.queries > 0


@requires_solver
def test_flat_invariant_is_valid():
    low = model("kvr_flat")
    v = check(low.ts, wrap_invariant(low.invariant, low.ts), low.safety)
    assert v.valid


@requires_solver
def test_deleted_characterization_line_is_reported_with_countermodel():
    text = corpus("kvr").read_text()
    lines = text.splitlines()
    # Drop the T-phase uniqueness of in-flight transfer messages.
    idx = next(i for i, l in enumerate(lines) if "transfer_msg(src1, dst1, k, v1, s1) & ~seqnum_recvd(dst1, src1, s1) & transfer_msg(src2" in l)
    mutated = "\n".join(lines[:idx] + lines[idx + 1 :]) + "\n"
    low = lower(parse(mutated))
    v = check(low.ts, low.automaton(), low.safety)
    assert v.status == "invalid"
    names = {f.vc.name for f in v.failures}
    assert any(n.startswith("inductiveness(") for n in names)
    for f in v.failures:
        assert f.countermodel is not None
        assert countermodel_falsifies(f.query, f.countermodel)


@requires_solver
def test_removed_edge_breaks_covering():
    text = corpus("kvr").read_text().replace("  T -> O on recv_transfer_msg(*, *, k, *, *)\n", "")
    low = lower(parse(text))
    v = check(low.ts, low.automaton(), low.safety)
    assert v.status == "invalid"
    assert "edge_covering(T,recv_transfer_msg)" in {f.vc.name for f in v.failures}


@requires_solver
def test_parallel_check_matches_sequential():
    low = model("kvr")
    a = low.automaton()
    seq = check(low.ts, a, low.safety)
    par = check(low.ts, a, low.safety, jobs=3)
    assert seq.status == par.status == "valid" and seq.queries == par.queries


def test_chc_export_structure_and_stability():
    low = model("kv_basic")
    chc = emit_chc(low.ts, low.structure, low.safety)
    assert chc.unknowns == ["O", "T"]
    assert [c.name for c in chc.clauses] == [
        "init",
        "ind_O_O",
        "ind_O_T",
        "ind_T_O",
        "ind_T_T",
        "query_cover_O",
        "query_cover_T",
        "query_safety_O",
        "query_safety_T",
    ]
    text = chc.text
    assert text.startswith("; Constrained Horn clauses")
    assert "(set-logic HORN)" in text and text.rstrip().endswith("(check-sat)")
    assert len(re.findall(r":named ", text)) == 9
    assert set(re.findall(r"\(declare-fun (\|I@[^|]*\|)", text)) == {"|I@O|", "|I@O'|", "|I@T|", "|I@T'|"}
    again = emit_chc(model("kv_basic").ts, model("kv_basic").structure, model("kv_basic").safety).text
    assert again == text


@requires_solver
def test_chc_text_is_well_formed_smtlib(tmp_path):
    """The solver parses the export; this exercises syntax only, not solving."""
    import subprocess

    from phaseforge.solver import find_solver

    low = model("kv_basic")
    path = tmp_path / "kv.smt2"
    path.write_text(emit_chc(low.ts, low.structure, low.safety).text)
    out = subprocess.run([find_solver(None), "-T:20", str(path)], capture_output=True, text=True)
    assert "error" not in out.stdout.lower(), out.stdout


def test_initiation_queries_split_per_conjunct():
    low = model("kvr")
    a = low.automaton()
    init = gen_vcs(low.ts, a, low.safety)[0]
    assert init.kind == "initiation"
    assert len(init.queries) == len(top_conjuncts(a.eta["O"]))


def test_structure_pair_helper_sanity():
    low = lower(parse(TOGGLE))
    states, pairs = _pairs(low.ts, 1)
    assert len(states) == 2 and len(pairs) == 4
    assert all(isinstance(s, Structure) for s in states)
