from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import model, requires_solver
from oracles import initial_states, random_structure, reachable_by_phase, reachable_states, valuations
from phaseforge.logic import Eq, Structure, Var, evaluate, evaluate_two_vocab
from phaseforge.system import (
    SystemError_,
    TransitionSystem,
    action_tr,
    cardinality_formula,
    enabled,
    enumerate_structures,
    global_tr,
    initial_structure,
    instances,
    random_trace,
    step,
)


def _all_posts(ts: TransitionSystem, pre):
    """Every structure over the pre-state's domain (the brute-force post-state space)."""
    sizes = {s: len(pre.domain[s]) for s in ts.vocab.sorts}
    for cand in enumerate_structures(ts.vocab, sizes, limit=1 << 12):
        yield cand.rename(dict(zip(cand.elements(), pre.elements())))


@pytest.mark.parametrize("seed", range(6))
def test_step_agrees_with_compiled_action_formula(seed):
    """Operational step vs. the two-vocabulary formula, over all post-states."""
    ts = model("lockserv_single").ts
    rng = random.Random(seed)
    pre = random_structure(ts.vocab, {"node": 2}, rng)
    for a in ts.actions:
        ca = ts.compiled(a.name)
        for args in itertools.product(pre.domain["node"], repeat=len(a.params)):
            env = dict(zip(ca.params, args))
            expect = step(ts, pre, a.name, args)
            got = {post for post in _all_posts(ts, pre) if evaluate_two_vocab(pre, post, env, ca.open_formula)}
            assert got == expect, (a.name, args)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_step_with_wildcard_updates_matches_formula(seed):
    """Updates with wildcards and later-overrides-earlier ordering (put)."""
    ts = model("kv_basic").ts
    rng = random.Random(seed)
    pre = random_structure(ts.vocab, {"node": 2, "key": 1, "value": 2}, rng)
    ca = ts.compiled("put")
    for args in itertools.product(pre.domain["node"], pre.domain["key"], pre.domain["value"]):
        posts = step(ts, pre, "put", args)
        env = dict(zip(ca.params, args))
        for post in posts:
            assert evaluate_two_vocab(pre, post, env, ca.open_formula)
            n, k, v = args
            assert {t for t in post.rels["table"] if t[:2] == (n, k)} == {(n, k, v)}
        assert bool(posts) == enabled(pre, ts.action("put"), args)


def test_global_transition_relation_is_disjunction_of_actions():
    ts = model("lockserv_single").ts
    rng = random.Random(3)
    pre = random_structure(ts.vocab, {"node": 2}, rng)
    tr = global_tr(ts)
    succ = {t for a, args in instances(ts, pre) for t in step(ts, pre, a, args)}
    for post in _all_posts(ts, pre):
        assert evaluate_two_vocab(pre, post, {}, tr) == (post in succ)
        assert evaluate_two_vocab(pre, post, {}, action_tr(ts, "send_lock")) == any(
            post in step(ts, pre, "send_lock", (n,)) for n in pre.domain["node"]
        )


def test_step_rejects_ill_sorted_arguments():
    ts = model("kv_basic").ts
    pre = random_structure(ts.vocab, {"node": 1, "key": 1, "value": 1}, random.Random(0))
    with pytest.raises(SystemError_):
        step(ts, pre, "put", ("key0", "key0", "value0"))


def test_enumeration_limit_is_enforced():
    ts = model("kvr").ts
    with pytest.raises(SystemError_):
        list(enumerate_structures(ts.vocab, {s: 2 for s in ts.vocab.sorts}))


def test_cardinality_formula_fixes_domain_size():
    x = Var("x", "node")
    f = cardinality_formula("node", 2)
    ts = model("lockserv_single").ts
    for n in (1, 2, 3):
        s = random_structure(ts.vocab, {"node": n}, random.Random(n))
        assert evaluate(s, {}, f) == (n == 2)
    assert x not in f.free_vars and not isinstance(f, Eq)


def test_initial_structure_by_enumeration_satisfies_init():
    ts = model("lockserv_single").ts
    s = initial_structure(ts, {"node": 2}, random.Random(1))
    assert s is not None and evaluate(s, {}, ts.init)


@requires_solver
def test_initial_structure_by_solver_satisfies_init(session_for):
    ts = model("kvr").ts
    sess = session_for(ts.vocab)
    s = initial_structure(ts, {t: 2 for t in ts.vocab.sorts}, random.Random(4), sess)
    assert s is not None and evaluate(s, {}, ts.init)
    assert all(len(s.domain[t]) == 2 for t in ts.vocab.sorts)


@requires_solver
def test_random_trace_is_deterministic_and_follows_steps(session_for):
    ts = model("lockserv_multi").ts
    sizes = {s: 2 for s in ts.vocab.sorts}
    a = random_trace(ts, sizes, 8, seed=11, session=session_for(ts.vocab))
    b = random_trace(ts, sizes, 8, seed=11, session=session_for(ts.vocab))
    assert a is not None and b is not None
    assert a.states == b.states and a.actions == b.actions
    for i, (name, args) in enumerate(a.actions):
        assert a.states[i + 1] in step(ts, a.states[i], name, args)


def test_lock_service_safety_holds_on_small_reachable_states():
    """Sanity check of the corpus model itself by exhaustive exploration."""
    low = model("lockserv_single")
    inits = initial_states(low.ts, {"node": 2})
    for s in reachable_states(low.ts, inits, 8):
        assert evaluate(s, {}, low.safety.body)


@pytest.mark.parametrize("cores", [2, 3])
def test_cache_coherence_model_is_safe_and_its_structure_covers_reachable_states(cores):
    """Exhaustive exploration to a fixpoint; every reachable state has a phase for each view value."""
    low = model("cache_mesi")
    ts, s = low.ts, low.structure
    dom = {"core": tuple(f"core{i}" for i in range(cores))}
    init = Structure(ts.vocab, dom, {r: [] for r in ts.vocab.relations}, {})
    assert evaluate(init, {}, ts.init)
    reach = reachable_states(ts, [init], 16)
    assert reachable_states(ts, [init], 18) == reach
    for sigma in reach:
        for v in valuations(low.safety.view, sigma):
            assert evaluate(sigma, v, low.safety.body)
    for v in valuations(s.view, init):
        layers = reachable_by_phase(ts, s, [init], v, 16)
        assert {sigma for _, sigma in layers[-1]} == reach
