from __future__ import annotations

import pytest

from conftest import CORPUS, corpus
from phaseforge.frontend import LowerError, ParseError, load, lower, parse, parse_file, pretty, with_characterizations
from phaseforge.logic import TRUE, Forall, Rel, Var, top_conjuncts

ALL = sorted(p.stem for p in CORPUS.glob("*.pfz"))

MINI = """
sort node
relation p(node)
init forall n:node. ~p(n)
action set(n: node) {
  require ~p(n)
  p(n) := true
}
safety forall a:node, b:node. p(a) & p(b) -> a = b
automaton {
  init phase A { invariant forall n:node. ~p(n) }
  phase B
  A -> B on set(*)
  self B on set(m) where m != m
}
"""


@pytest.mark.parametrize("name", ALL)
def test_corpus_parses_and_pretty_printing_round_trips(name):
    m = parse_file(corpus(name))
    text = pretty(m)
    m2 = parse(text)
    assert m2 == m
    assert pretty(m2) == text


@pytest.mark.parametrize("name", ALL)
def test_corpus_lowers(name):
    low = load(corpus(name))
    assert low.ts.actions
    if low.structure is None:
        assert low.invariant is not None


def test_lowering_builds_structure_and_characterizations():
    low = lower(parse(MINI))
    s = low.structure
    assert s.phases == ("A", "B") and s.init_phase == "A"
    assert s.edges() == [("A", "B"), ("B", "B")]
    assert low.characterizations["B"] == TRUE
    assert low.automaton() is not None
    assert low.safety.view == ()


def test_phase_without_block_has_no_characterizations():
    text = MINI.replace("init phase A { invariant forall n:node. ~p(n) }", "init phase A")
    low = lower(parse(text))
    assert low.characterizations is None and low.automaton() is None


@pytest.mark.parametrize(
    "snippet, message",
    [
        ("sort node\nsort node\n", "duplicate declaration"),
        ("sort node\nrelation p(nod)\n", "nod"),
        ("sort node\nrelation p(node)\ninit p(x)\n", "unknown variable"),
        ("sort node\nrelation p(node)\naction a(n: node) {\n  q(n) := true\n}\n", "unknown relation"),
        ("sort node\nrelation p(node)\naction a(n: node) {\n  p(n) := true\n", "not closed"),
        ("sort node\nrelation p(node)\nsafety forall x:node. p(x) <-> p(x) <-> p(x)\n", "not associative"),
        ("sort node\nrelation p(node)\ninit forall x:node. p'(x)\n", "only allowed in edge guards"),
        (
            "sort node\nrelation p(node)\naction a(n: node) {\n}\nautomaton {\n  phase A\n}\n",
            "no initial phase",
        ),
        (
            "sort node\nrelation p(node)\naction a(n: node) {\n}\nautomaton {\n  init phase A\n  A -> C on a(*)\n}\n",
            "undeclared phase",
        ),
        (
            "sort node\nrelation p(node)\naction a(n: node) {\n}\nautomaton {\n  init phase A\n  self A on a(*, *)\n}\n",
            "argument",
        ),
        (
            "sort node\nrelation p(node)\naction a(n: node) {\n}\nautomaton {\n"
            "  init phase A\n  self A on a(m) where forall x:node. exists y:node. p(x) & p(y) & p(m)\n}\n",
            "alternation-free",
        ),
    ],
)
def test_parse_errors_carry_positions(snippet, message):
    with pytest.raises(ParseError) as e:
        parse(snippet)
    assert message in str(e.value)
    assert e.value.span.line >= 1


def test_edge_guards_may_mention_post_state():
    text = MINI.replace("self B on set(m) where m != m", "self B on set(m) where p'(m)")
    low = lower(parse(text))
    (entry,) = low.structure.entries_of("B", "B")
    assert entry.match.has_primed


def test_safety_view_must_match_automaton_view():
    text = """
sort node
relation p(node)
action a(n: node) {
  p(n) := true
}
safety [x: node] ~p(x)
automaton {
  view y: node
  init phase A
  self A on a(*)
}
"""
    with pytest.raises(LowerError):
        lower(parse(text))


def test_with_characterizations_replaces_phase_invariants():
    m = parse(MINI)
    n = Var("n", "node")
    eta = {"A": TRUE, "B": Forall((n,), Rel("p", (n,)))}
    low = lower(parse(pretty(with_characterizations(m, eta))))
    assert low.characterizations["A"] == TRUE
    assert top_conjuncts(low.characterizations["B"]) == [eta["B"]]
