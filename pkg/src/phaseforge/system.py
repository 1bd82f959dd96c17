"""Relational transition systems: actions with guards and sequential updates."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .logic import (
    TRUE,
    Const,
    Eq,
    Exists,
    Forall,
    Formula,
    Iff,
    LogicError,
    Rel,
    Structure,
    Var,
    Vocabulary,
    all_tuples,
    check_formula,
    conj,
    disj,
    evaluate,
    neg,
    substitute,
)


class SystemError_(LogicError):
    """Ill-formed transition system."""


@dataclass(frozen=True)
class Update:
    """``relation(args) := value`` where each arg is a parameter or ``None`` (wildcard)."""

    relation: str
    args: tuple[Var | None, ...]
    value: bool

    def matches(self, tup: Sequence[str], env: dict[Var, str]) -> bool:
        return all(a is None or env[a] == e for a, e in zip(self.args, tup))


@dataclass(frozen=True)
class Action:
    name: str
    params: tuple[Var, ...]
    guard: Formula = TRUE
    updates: tuple[Update, ...] = ()

    def param_names(self) -> list[str]:
        return [p.name for p in self.params]


def internal_param(p: Var) -> Var:
    """Parameter renamed into the reserved namespace used inside compiled formulas."""
    return Var("_" + p.name, p.sort)


@dataclass(frozen=True)
class CompiledAction:
    action: Action
    params: tuple[Var, ...]  # internal names
    guard: Formula  # over internal params, unprimed
    body: Formula  # two-vocabulary effect including frame conditions

    @property
    def open_formula(self) -> Formula:
        return conj(self.guard, self.body)

    @property
    def formula(self) -> Formula:
        f = self.open_formula
        vs = tuple(p for p in self.params if p in f.free_vars)
        return Exists(vs, f) if vs else f


def _frame_vars(sorts: Sequence[str]) -> tuple[Var, ...]:
    return tuple(Var(f"_x{i}", s) for i, s in enumerate(sorts))


def compile_action(vocab: Vocabulary, action: Action) -> CompiledAction:
    ren = {p: internal_param(p) for p in action.params}
    guard = substitute(action.guard, ren)
    parts: list[Formula] = []
    for r, sorts in vocab.relation_decls:
        xs = _frame_vars(sorts)
        val: Formula = Rel(r, xs)
        for u in action.updates:
            if u.relation != r:
                continue
            match = conj(*(Eq(x, ren[a]) for x, a in zip(xs, u.args) if a is not None))
            val = disj(match, val) if u.value else conj(neg(match), val)
        eq = Iff(Rel(r, xs, True), val)
        parts.append(Forall(xs, eq) if xs else eq)
    for c, s in vocab.constant_decls:
        parts.append(Eq(Const(c, s, True), Const(c, s)))
    return CompiledAction(action, tuple(ren[p] for p in action.params), guard, conj(parts))


@dataclass(frozen=True)
class TransitionSystem:
    vocab: Vocabulary
    init: Formula
    actions: tuple[Action, ...]

    def __post_init__(self) -> None:
        if self.init.free_vars:
            raise SystemError_(f"init has free variables {sorted(v.name for v in self.init.free_vars)}")
        check_formula(self.init, self.vocab, allow_primed=False)
        names = [a.name for a in self.actions]
        if len(set(names)) != len(names):
            raise SystemError_("duplicate action names")
        rels = self.vocab.relations
        for a in self.actions:
            pnames = [p.name for p in a.params]
            if len(set(pnames)) != len(pnames):
                raise SystemError_(f"duplicate parameter in action {a.name!r}")
            extra = a.guard.free_vars - set(a.params)
            if extra:
                raise SystemError_(
                    f"guard of {a.name!r} mentions unknown variable(s) {sorted(v.name for v in extra)}"
                )
            check_formula(a.guard, self.vocab, allow_primed=False)
            for u in a.updates:
                if u.relation not in rels:
                    raise SystemError_(f"action {a.name!r} updates unknown relation {u.relation!r}")
                sorts = rels[u.relation]
                if len(sorts) != len(u.args):
                    raise SystemError_(f"update of {u.relation!r} in {a.name!r} has wrong arity")
                for arg, s in zip(u.args, sorts):
                    if arg is not None and (arg not in a.params or arg.sort != s):
                        raise SystemError_(
                            f"update of {u.relation!r} in {a.name!r} uses bad argument {arg}"
                        )
        object.__setattr__(self, "_compiled", {a.name: compile_action(self.vocab, a) for a in self.actions})

    def action(self, name: str) -> Action:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    def compiled(self, name: str) -> CompiledAction:
        return self._compiled[name]  # type: ignore[attr-defined]

    def action_names(self) -> list[str]:
        return [a.name for a in self.actions]


def action_tr(ts: TransitionSystem, name: str) -> Formula:
    """Closed two-vocabulary formula of one action (parameters existentially bound)."""
    return ts.compiled(name).formula


def global_tr(ts: TransitionSystem) -> Formula:
    if not ts.actions:
        raise SystemError_("transition system has no actions")
    return disj(*(action_tr(ts, a.name) for a in ts.actions))


# ---------------------------------------------------------------------------
# Concrete semantics


def enabled(sigma: Structure, action: Action, args: Sequence[str]) -> bool:
    if len(args) != len(action.params):
        raise SystemError_(f"{action.name} expects {len(action.params)} argument(s)")
    env = dict(zip(action.params, args))
    return evaluate(sigma, env, action.guard)


def step(ts: TransitionSystem, sigma: Structure, action: str, args: Sequence[str]) -> set[Structure]:
    """All successors of ``sigma`` under one action instance (empty if disabled).

    Updates are deterministic, so the result has at most one element.
    """
    a = ts.action(action)
    for p, e in zip(a.params, args):
        if sigma.sort_of(e) != p.sort:
            raise SystemError_(f"argument {e!r} for {p.name} is not of sort {p.sort}")
    if not enabled(sigma, a, args):
        return set()
    env = dict(zip(a.params, args))
    new_rels: dict[str, set[tuple[str, ...]]] = {}
    rels = ts.vocab.relations
    for u in a.updates:
        cur = new_rels.setdefault(u.relation, set(sigma.rels[u.relation]))
        fixed = [None if x is None else env[x] for x in u.args]
        choices = [
            [f] if f is not None else list(sigma.domain[s]) for f, s in zip(fixed, rels[u.relation])
        ]
        for t in itertools.product(*choices):
            if u.value:
                cur.add(t)
            else:
                cur.discard(t)
    return {sigma.replace(rels=new_rels)}


def instances(ts: TransitionSystem, sigma: Structure) -> list[tuple[str, tuple[str, ...]]]:
    """Enabled action instances, in action then lexicographic argument order."""
    out = []
    for a in ts.actions:
        for args in itertools.product(*(sigma.domain[p.sort] for p in a.params)):
            if enabled(sigma, a, args):
                out.append((a.name, tuple(args)))
    return out


def enumerate_structures(
    vocab: Vocabulary, sizes: dict[str, int], limit: int = 1 << 16
) -> Iterable[Structure]:
    """Every structure over fixed domains (guarded by a size limit)."""
    domain = {s: tuple(f"{s}{i}" for i in range(sizes[s])) for s in vocab.sorts}
    slots: list[tuple[str, tuple[str, ...]]] = []
    for r, sorts in vocab.relation_decls:
        for t in itertools.product(*(domain[s] for s in sorts)):
            slots.append((r, t))
    const_choices = [[(c, e) for e in domain[s]] for c, s in vocab.constant_decls]
    total = 2 ** len(slots)
    for ch in const_choices:
        total *= len(ch)
    if total > limit:
        raise SystemError_(f"{total} structures exceed the enumeration limit {limit}")
    for consts in itertools.product(*const_choices):
        for bits in itertools.product((False, True), repeat=len(slots)):
            rels: dict[str, list[tuple[str, ...]]] = {r: [] for r, _ in vocab.relation_decls}
            for (r, t), b in zip(slots, bits):
                if b:
                    rels[r].append(t)
            yield Structure(vocab, domain, rels, dict(consts))


def cardinality_formula(sort: str, n: int, tag: str = "_card") -> Formula:
    """Exactly ``n`` elements of ``sort``."""
    cs = tuple(Var(f"{tag}{i}", sort) for i in range(n))
    y = Var(f"{tag}_y", sort)
    distinct = [neg(Eq(a, b)) for a, b in itertools.combinations(cs, 2)]
    cover = Forall((y,), disj(*(Eq(y, c) for c in cs)))
    return Exists(cs, conj(*distinct, cover))


def initial_structure(
    ts: TransitionSystem,
    sizes: dict[str, int],
    rng: random.Random | None = None,
    session=None,
) -> Structure | None:
    """Some initial state with exact domain sizes, randomly perturbed by ``rng``.

    Uses the solver when a session is given; otherwise falls back to
    enumeration, which is only feasible for tiny vocabularies.
    """
    sigma: Structure | None = None
    if session is not None:
        f = conj(ts.init, *(cardinality_formula(s, sizes[s], f"_c{s}") for s in ts.vocab.sorts))
        res = session.check_sat(f)
        if res.status == "sat":
            sigma = res.model
    if sigma is None:
        for cand in enumerate_structures(ts.vocab, sizes):
            if evaluate(cand, {}, ts.init):
                sigma = cand
                break
    if sigma is None or rng is None:
        return sigma
    # Random walk over single-tuple flips that preserve the initial condition.
    slots = [
        (r, t)
        for r, sorts in ts.vocab.relation_decls
        for t in all_tuples(sigma, sorts)
    ]
    rng.shuffle(slots)
    for r, t in slots:
        if rng.random() < 0.5:
            continue
        ext = set(sigma.rels[r])
        ext.symmetric_difference_update({t})
        cand = sigma.replace(rels={r: ext})
        if evaluate(cand, {}, ts.init):
            sigma = cand
    return sigma


@dataclass
class RandomTrace:
    states: list[Structure]
    actions: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)
    deadlocked: bool = False


def random_trace(
    ts: TransitionSystem,
    sizes: dict[str, int],
    length: int,
    seed: int,
    session=None,
) -> RandomTrace | None:
    """A random execution of ``length`` transitions; None if no initial state exists.

    The trace stops early (flagged ``deadlocked``) when no action is enabled.
    """
    rng = random.Random(seed)
    sigma = initial_structure(ts, sizes, rng, session)
    if sigma is None:
        return None
    tr = RandomTrace([sigma])
    while len(tr.actions) < length:
        inst = instances(ts, tr.states[-1])
        if not inst:
            tr.deadlocked = True
            break
        name, args = inst[rng.randrange(len(inst))]
        (nxt,) = step(ts, tr.states[-1], name, args)
        tr.actions.append((name, args))
        tr.states.append(nxt)
    return tr
