"""Many-sorted first-order logic over relational vocabularies.

Formulas are immutable trees. Structures are finite and explicit, so
evaluation is plain enumeration with some pruning for the quantifier
shapes that show up everywhere (existential conjunctions and universal
clauses).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, fields
from typing import Iterable, Iterator, Mapping, Sequence, Union


class LogicError(Exception):
    """Malformed formula, structure or valuation."""


class SortError(LogicError):
    pass


class UnboundVariableError(LogicError):
    pass


# ---------------------------------------------------------------------------
# Vocabulary


@dataclass(frozen=True)
class Vocabulary:
    """Sorts, relation symbols (with argument sorts) and constant symbols.

    Relations and constants are stored as ordered tuples so that the
    vocabulary is hashable; use ``relations``/``constants`` for lookups.
    """

    sorts: tuple[str, ...]
    relation_decls: tuple[tuple[str, tuple[str, ...]], ...] = ()
    constant_decls: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if len(set(self.sorts)) != len(self.sorts):
            raise LogicError(f"duplicate sort in {self.sorts}")
        names: set[str] = set()
        for name, arg_sorts in self.relation_decls:
            if name in names:
                raise LogicError(f"duplicate symbol {name!r}")
            names.add(name)
            for s in arg_sorts:
                if s not in self.sorts:
                    raise SortError(f"relation {name!r} uses undeclared sort {s!r}")
        for name, s in self.constant_decls:
            if name in names:
                raise LogicError(f"duplicate symbol {name!r}")
            names.add(name)
            if s not in self.sorts:
                raise SortError(f"constant {name!r} uses undeclared sort {s!r}")

    @staticmethod
    def make(
        sorts: Iterable[str],
        relations: Mapping[str, Sequence[str]] | None = None,
        constants: Mapping[str, str] | None = None,
    ) -> "Vocabulary":
        return Vocabulary(
            tuple(sorts),
            tuple((n, tuple(s)) for n, s in (relations or {}).items()),
            tuple((constants or {}).items()),
        )

    @property
    def relations(self) -> dict[str, tuple[str, ...]]:
        return dict(self.relation_decls)

    @property
    def constants(self) -> dict[str, str]:
        return dict(self.constant_decls)

    def symbols(self) -> set[str]:
        return {n for n, _ in self.relation_decls} | {n for n, _ in self.constant_decls}


# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True, order=True)
class Var:
    name: str
    sort: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class Const:
    name: str
    sort: str
    primed: bool = False

    def __str__(self) -> str:
        return self.name + ("'" if self.primed else "")


Term = Union[Var, Const]


# ---------------------------------------------------------------------------
# Formulas


class Formula:
    """Base class. Subclasses are frozen dataclasses with structural equality."""

    __slots__ = ()

    def _key(self) -> tuple:
        k = self.__dict__.get("_k")
        if k is None:
            k = tuple(getattr(self, f.name) for f in fields(self))  # type: ignore[arg-type]
            object.__setattr__(self, "_k", k)
        return k

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if type(self) is not type(other):
            return False
        if hash(self) != hash(other):
            return False
        return self._key() == other._key()  # type: ignore[attr-defined]

    def __hash__(self) -> int:
        h = self.__dict__.get("_h")
        if h is None:
            h = hash((type(self).__name__, self._key()))
            object.__setattr__(self, "_h", h)
        return h

    # cached structural facts -------------------------------------------------

    @property
    def free_vars(self) -> frozenset[Var]:
        fv = self.__dict__.get("_fv")
        if fv is None:
            fv = self._free_vars()
            object.__setattr__(self, "_fv", fv)
        return fv

    @property
    def bound_names(self) -> frozenset[str]:
        b = self.__dict__.get("_bn")
        if b is None:
            b = self._bound_names()
            object.__setattr__(self, "_bn", b)
        return b

    @property
    def has_primed(self) -> bool:
        p = self.__dict__.get("_hp")
        if p is None:
            p = self._has_primed()
            object.__setattr__(self, "_hp", p)
        return p

    def children(self) -> tuple["Formula", ...]:
        return ()

    def _free_vars(self) -> frozenset[Var]:
        out: frozenset[Var] = frozenset()
        for c in self.children():
            out |= c.free_vars
        return out

    def _bound_names(self) -> frozenset[str]:
        out: frozenset[str] = frozenset()
        for c in self.children():
            out |= c.bound_names
        return out

    def _has_primed(self) -> bool:
        return any(c.has_primed for c in self.children())

    def __str__(self) -> str:
        return to_text(self)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {to_text(self)}>"

    # convenience operators
    def __and__(self, other: "Formula") -> "Formula":
        return And((self, other))

    def __or__(self, other: "Formula") -> "Formula":
        return Or((self, other))

    def __invert__(self) -> "Formula":
        return Not(self)


def _term_primed(t: Term) -> bool:
    return isinstance(t, Const) and t.primed


def _term_vars(t: Term) -> frozenset[Var]:
    return frozenset([t]) if isinstance(t, Var) else frozenset()


@dataclass(frozen=True, eq=False, repr=False)
class BoolConst(Formula):
    value: bool


TRUE = BoolConst(True)
FALSE = BoolConst(False)


@dataclass(frozen=True, eq=False, repr=False)
class Rel(Formula):
    name: str
    args: tuple[Term, ...] = ()
    primed: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    def _free_vars(self) -> frozenset[Var]:
        out: frozenset[Var] = frozenset()
        for a in self.args:
            out |= _term_vars(a)
        return out

    def _has_primed(self) -> bool:
        return self.primed or any(_term_primed(a) for a in self.args)


@dataclass(frozen=True, eq=False, repr=False)
class Eq(Formula):
    left: Term
    right: Term

    def __post_init__(self) -> None:
        if self.left.sort != self.right.sort:
            raise SortError(
                f"equality between sorts {self.left.sort} and {self.right.sort}"
            )

    def _free_vars(self) -> frozenset[Var]:
        return _term_vars(self.left) | _term_vars(self.right)

    def _has_primed(self) -> bool:
        return _term_primed(self.left) or _term_primed(self.right)


@dataclass(frozen=True, eq=False, repr=False)
class Not(Formula):
    body: Formula

    def children(self) -> tuple[Formula, ...]:
        return (self.body,)


@dataclass(frozen=True, eq=False, repr=False)
class And(Formula):
    args: tuple[Formula, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    def children(self) -> tuple[Formula, ...]:
        return self.args


@dataclass(frozen=True, eq=False, repr=False)
class Or(Formula):
    args: tuple[Formula, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    def children(self) -> tuple[Formula, ...]:
        return self.args


@dataclass(frozen=True, eq=False, repr=False)
class Implies(Formula):
    left: Formula
    right: Formula

    def children(self) -> tuple[Formula, ...]:
        return (self.left, self.right)


@dataclass(frozen=True, eq=False, repr=False)
class Iff(Formula):
    left: Formula
    right: Formula

    def children(self) -> tuple[Formula, ...]:
        return (self.left, self.right)


class _Quantifier(Formula):
    vars: tuple[Var, ...]
    body: Formula

    def _check_binders(self) -> None:
        if not isinstance(self.vars, tuple):
            object.__setattr__(self, "vars", tuple(self.vars))
        names = [v.name for v in self.vars]
        if len(set(names)) != len(names):
            raise LogicError(f"duplicate bound variable in {names}")
        shadowed = set(names) & self.body.bound_names
        if shadowed:
            raise LogicError(f"bound variable(s) {sorted(shadowed)} shadowed in nested quantifier")

    def children(self) -> tuple[Formula, ...]:
        return (self.body,)

    def _free_vars(self) -> frozenset[Var]:
        return self.body.free_vars - frozenset(self.vars)

    def _bound_names(self) -> frozenset[str]:
        return self.body.bound_names | {v.name for v in self.vars}


@dataclass(frozen=True, eq=False, repr=False)
class Forall(_Quantifier):
    vars: tuple[Var, ...]
    body: Formula

    def __post_init__(self) -> None:
        self._check_binders()


@dataclass(frozen=True, eq=False, repr=False)
class Exists(_Quantifier):
    vars: tuple[Var, ...]
    body: Formula

    def __post_init__(self) -> None:
        self._check_binders()


# ---------------------------------------------------------------------------
# Smart constructors (these simplify; the raw classes never do)


def conj(*parts: Formula | Iterable[Formula]) -> Formula:
    items: list[Formula] = []
    for p in parts:
        seq = [p] if isinstance(p, Formula) else list(p)
        for f in seq:
            if isinstance(f, And):
                items.extend(f.args)
            elif f == TRUE:
                continue
            elif f == FALSE:
                return FALSE
            else:
                items.append(f)
    if not items:
        return TRUE
    if len(items) == 1:
        return items[0]
    return And(tuple(items))


def disj(*parts: Formula | Iterable[Formula]) -> Formula:
    items: list[Formula] = []
    for p in parts:
        seq = [p] if isinstance(p, Formula) else list(p)
        for f in seq:
            if isinstance(f, Or):
                items.extend(f.args)
            elif f == FALSE:
                continue
            elif f == TRUE:
                return TRUE
            else:
                items.append(f)
    if not items:
        return FALSE
    if len(items) == 1:
        return items[0]
    return Or(tuple(items))


def neg(f: Formula) -> Formula:
    if isinstance(f, Not):
        return f.body
    if isinstance(f, BoolConst):
        return BoolConst(not f.value)
    return Not(f)


def forall(vs: Sequence[Var], body: Formula) -> Formula:
    vs = tuple(v for v in vs if v in body.free_vars)
    return Forall(vs, body) if vs else body


def exists(vs: Sequence[Var], body: Formula) -> Formula:
    vs = tuple(v for v in vs if v in body.free_vars)
    return Exists(vs, body) if vs else body


def top_conjuncts(f: Formula) -> list[Formula]:
    if isinstance(f, And):
        out: list[Formula] = []
        for a in f.args:
            out.extend(top_conjuncts(a))
        return out
    if f == TRUE:
        return []
    return [f]


# ---------------------------------------------------------------------------
# Traversals


def walk(f: Formula) -> Iterator[Formula]:
    stack = [f]
    while stack:
        g = stack.pop()
        yield g
        stack.extend(reversed(g.children()))


def symbols_of(f: Formula) -> set[tuple[str, bool]]:
    """(name, primed) pairs of relation and constant symbols occurring in ``f``."""
    out: set[tuple[str, bool]] = set()
    for g in walk(f):
        terms: tuple[Term, ...] = ()
        if isinstance(g, Rel):
            out.add((g.name, g.primed))
            terms = g.args
        elif isinstance(g, Eq):
            terms = (g.left, g.right)
        for t in terms:
            if isinstance(t, Const):
                out.add((t.name, t.primed))
    return out


def map_atoms(f: Formula, fn) -> Formula:
    """Rebuild ``f`` applying ``fn`` to every Rel/Eq/BoolConst leaf."""
    if isinstance(f, (Rel, Eq, BoolConst)):
        return fn(f)
    if isinstance(f, Not):
        return Not(map_atoms(f.body, fn))
    if isinstance(f, And):
        return And(tuple(map_atoms(a, fn) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(map_atoms(a, fn) for a in f.args))
    if isinstance(f, Implies):
        return Implies(map_atoms(f.left, fn), map_atoms(f.right, fn))
    if isinstance(f, Iff):
        return Iff(map_atoms(f.left, fn), map_atoms(f.right, fn))
    if isinstance(f, Forall):
        return Forall(f.vars, map_atoms(f.body, fn))
    if isinstance(f, Exists):
        return Exists(f.vars, map_atoms(f.body, fn))
    raise LogicError(f"unknown formula node {type(f).__name__}")


def _set_prime(f: Formula, primed: bool) -> Formula:
    def term(t: Term) -> Term:
        return Const(t.name, t.sort, primed) if isinstance(t, Const) else t

    def atom(a: Formula) -> Formula:
        if isinstance(a, Rel):
            return Rel(a.name, tuple(term(t) for t in a.args), primed)
        if isinstance(a, Eq):
            return Eq(term(a.left), term(a.right))
        return a

    return map_atoms(f, atom)


def prime(f: Formula) -> Formula:
    """Move a single-vocabulary formula to the post-state vocabulary."""
    if f.has_primed:
        raise LogicError("prime() applied to a formula that already mentions primed symbols")
    return _set_prime(f, True)


def unprime(f: Formula) -> Formula:
    for name, primed in symbols_of(f):
        if not primed:
            raise LogicError(f"unprime() applied to a formula mentioning unprimed {name!r}")
    return _set_prime(f, False)


def rename_symbols(f: Formula, mapping: Mapping[tuple[str, bool], str]) -> Formula:
    """Rename (name, primed) symbols to new unprimed names; others are kept."""

    def term(t: Term) -> Term:
        if isinstance(t, Const) and (t.name, t.primed) in mapping:
            return Const(mapping[(t.name, t.primed)], t.sort, False)
        return t

    def atom(a: Formula) -> Formula:
        if isinstance(a, Rel):
            args = tuple(term(t) for t in a.args)
            key = (a.name, a.primed)
            if key in mapping:
                return Rel(mapping[key], args, False)
            return Rel(a.name, args, a.primed)
        if isinstance(a, Eq):
            return Eq(term(a.left), term(a.right))
        return a

    return map_atoms(f, atom)


def fresh_name(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    i = 1
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"


def substitute(f: Formula, sub: Mapping[Var, Term]) -> Formula:
    """Capture-avoiding substitution of free variables."""
    if not sub:
        return f
    sub = {k: v for k, v in sub.items() if k in f.free_vars}
    if not sub:
        return f
    incoming = {t.name for t in sub.values() if isinstance(t, Var)}

    def term(t: Term) -> Term:
        return sub.get(t, t) if isinstance(t, Var) else t

    if isinstance(f, Rel):
        return Rel(f.name, tuple(term(a) for a in f.args), f.primed)
    if isinstance(f, Eq):
        return Eq(term(f.left), term(f.right))
    if isinstance(f, BoolConst):
        return f
    if isinstance(f, Not):
        return Not(substitute(f.body, sub))
    if isinstance(f, And):
        return And(tuple(substitute(a, sub) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(substitute(a, sub) for a in f.args))
    if isinstance(f, Implies):
        return Implies(substitute(f.left, sub), substitute(f.right, sub))
    if isinstance(f, Iff):
        return Iff(substitute(f.left, sub), substitute(f.right, sub))
    if isinstance(f, (Forall, Exists)):
        inner = dict(sub)
        new_vars = []
        taken = incoming | f.bound_names | {v.name for v in f.free_vars}
        for v in f.vars:
            if v.name in incoming:
                nv = Var(fresh_name(v.name, taken), v.sort)
                taken.add(nv.name)
                inner[v] = nv
                new_vars.append(nv)
            else:
                inner.pop(v, None)
                new_vars.append(v)
        body = _substitute_renaming(f.body, inner)
        return type(f)(tuple(new_vars), body)
    raise LogicError(f"unknown formula node {type(f).__name__}")


def _substitute_renaming(f: Formula, sub: Mapping[Var, Term]) -> Formula:
    # Renamed binders may collide with names bound deeper in the body; rename
    # those deeper binders too so that shadowing never arises.
    try:
        return substitute(f, sub)
    except LogicError:
        taken = {t.name for t in sub.values() if isinstance(t, Var)}
        return substitute(rename_bound(f, taken), sub)


def rename_bound(f: Formula, avoid: set[str]) -> Formula:
    """Rename every bound variable whose name is in ``avoid``."""
    if isinstance(f, (Rel, Eq, BoolConst)):
        return f
    if isinstance(f, (Forall, Exists)):
        taken = set(avoid) | f.bound_names | {v.name for v in f.free_vars}
        ren: dict[Var, Term] = {}
        nvs = []
        for v in f.vars:
            if v.name in avoid:
                nv = Var(fresh_name(v.name, taken), v.sort)
                taken.add(nv.name)
                ren[v] = nv
                nvs.append(nv)
            else:
                nvs.append(v)
        body = rename_bound(f.body, avoid | {v.name for v in nvs})
        return type(f)(tuple(nvs), substitute(body, ren))
    if isinstance(f, Not):
        return Not(rename_bound(f.body, avoid))
    if isinstance(f, And):
        return And(tuple(rename_bound(a, avoid) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(rename_bound(a, avoid) for a in f.args))
    if isinstance(f, Implies):
        return Implies(rename_bound(f.left, avoid), rename_bound(f.right, avoid))
    if isinstance(f, Iff):
        return Iff(rename_bound(f.left, avoid), rename_bound(f.right, avoid))
    raise LogicError(f"unknown formula node {type(f).__name__}")


# ---------------------------------------------------------------------------
# Sort checking


def check_formula(f: Formula, vocab: Vocabulary, allow_primed: bool = True) -> None:
    """Raise SortError if ``f`` is not well-sorted over ``vocab``."""
    rels = vocab.relations
    consts = vocab.constants

    def term(t: Term) -> None:
        if isinstance(t, Const):
            if t.name not in consts:
                raise SortError(f"unknown constant {t.name!r}")
            if consts[t.name] != t.sort:
                raise SortError(f"constant {t.name!r} has sort {consts[t.name]}, not {t.sort}")
            if t.primed and not allow_primed:
                raise SortError(f"primed constant {t.name}' not allowed here")
        elif t.sort not in vocab.sorts:
            raise SortError(f"variable {t.name!r} has undeclared sort {t.sort!r}")

    for g in walk(f):
        if isinstance(g, Rel):
            if g.name not in rels:
                raise SortError(f"unknown relation {g.name!r}")
            want = rels[g.name]
            if len(want) != len(g.args):
                raise SortError(
                    f"relation {g.name!r} expects {len(want)} argument(s), got {len(g.args)}"
                )
            for i, (a, s) in enumerate(zip(g.args, want)):
                term(a)
                if a.sort != s:
                    raise SortError(
                        f"argument {i + 1} of {g.name!r} has sort {a.sort}, expected {s}"
                    )
            if g.primed and not allow_primed:
                raise SortError(f"primed relation {g.name}' not allowed here")
        elif isinstance(g, Eq):
            term(g.left)
            term(g.right)
        elif isinstance(g, (Forall, Exists)):
            for v in g.vars:
                if v.sort not in vocab.sorts:
                    raise SortError(f"variable {v.name!r} has undeclared sort {v.sort!r}")


# ---------------------------------------------------------------------------
# Normal forms and quantifier classes


class QuantifierClass(enum.Enum):
    UNIVERSAL = "universal"
    EXISTENTIAL = "existential"
    ALTERNATION_FREE = "alternation-free"
    UNRESTRICTED = "unrestricted"


def nnf(f: Formula, positive: bool = True) -> Formula:
    """Negation normal form using only And/Or/Not-atom/quantifiers."""
    if isinstance(f, BoolConst):
        return BoolConst(f.value == positive)
    if isinstance(f, (Rel, Eq)):
        return f if positive else Not(f)
    if isinstance(f, Not):
        return nnf(f.body, not positive)
    if isinstance(f, And):
        parts = tuple(nnf(a, positive) for a in f.args)
        return And(parts) if positive else Or(parts)
    if isinstance(f, Or):
        parts = tuple(nnf(a, positive) for a in f.args)
        return Or(parts) if positive else And(parts)
    if isinstance(f, Implies):
        return nnf(Or((Not(f.left), f.right)), positive)
    if isinstance(f, Iff):
        a, b = f.left, f.right
        if positive:
            return And((nnf(a, False) | nnf(b, True), nnf(a, True) | nnf(b, False)))
        return Or((And((nnf(a, True), nnf(b, False))), And((nnf(a, False), nnf(b, True)))))
    if isinstance(f, Forall):
        return (Forall if positive else Exists)(f.vars, nnf(f.body, positive))
    if isinstance(f, Exists):
        return (Exists if positive else Forall)(f.vars, nnf(f.body, positive))
    raise LogicError(f"unknown formula node {type(f).__name__}")


def alternation_witness(f: Formula) -> Formula | None:
    """A quantified subformula (in NNF) whose scope contains an opposite quantifier."""
    g = nnf(f)

    def inner_kinds(h: Formula) -> set[type]:
        return {type(x) for x in walk(h) if isinstance(x, (Forall, Exists))}

    for h in walk(g):
        if isinstance(h, Forall) and Exists in inner_kinds(h.body):
            return h
        if isinstance(h, Exists) and Forall in inner_kinds(h.body):
            return h
    return None


def classify(f: Formula) -> QuantifierClass:
    """Quantifier class after NNF. Quantifier-free formulas count as universal."""
    g = nnf(f)
    kinds = {type(x) for x in walk(g) if isinstance(x, (Forall, Exists))}
    if kinds <= {Forall}:
        return QuantifierClass.UNIVERSAL
    if kinds == {Exists}:
        return QuantifierClass.EXISTENTIAL
    if alternation_witness(g) is None:
        return QuantifierClass.ALTERNATION_FREE
    return QuantifierClass.UNRESTRICTED


# ---------------------------------------------------------------------------
# Text rendering (the surface syntax understood by the frontend)


def _term_text(t: Term) -> str:
    return str(t)


def _is_atomic_text(f: Formula) -> bool:
    return isinstance(f, (Rel, BoolConst)) or (isinstance(f, Eq))


def to_text(f: Formula) -> str:
    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, Rel):
        head = f.name + ("'" if f.primed else "")
        if not f.args:
            return head
        return f"{head}({', '.join(_term_text(a) for a in f.args)})"
    if isinstance(f, Eq):
        return f"{_term_text(f.left)} = {_term_text(f.right)}"
    if isinstance(f, Not):
        if isinstance(f.body, Eq):
            return f"{_term_text(f.body.left)} != {_term_text(f.body.right)}"
        return "~" + _wrap(f.body, negated=True)
    if isinstance(f, And):
        if not f.args:
            return _empty_junction(True)
        return " & ".join(_wrap(a) for a in f.args)
    if isinstance(f, Or):
        if not f.args:
            return _empty_junction(False)
        return " | ".join(_wrap(a) for a in f.args)
    if isinstance(f, Implies):
        return f"{_wrap(f.left)} -> {_wrap(f.right)}"
    if isinstance(f, Iff):
        return f"{_wrap(f.left)} <-> {_wrap(f.right)}"
    if isinstance(f, (Forall, Exists)):
        q = "forall" if isinstance(f, Forall) else "exists"
        binders = ", ".join(f"{v.name}:{v.sort}" for v in f.vars)
        return f"{q} {binders}. {to_text(f.body)}"
    raise LogicError(f"unknown formula node {type(f).__name__}")


def _empty_junction(is_and: bool) -> str:
    # Empty junctions only arise from raw constructors; render them as the
    # unit so that text stays parseable (the round trip is then not exact).
    return "true" if is_and else "false"


def _wrap(f: Formula, negated: bool = False) -> str:
    if isinstance(f, (Rel, BoolConst)):
        return to_text(f)
    if isinstance(f, Eq) and not negated:
        return to_text(f)
    if isinstance(f, Not) and not isinstance(f.body, Eq):
        return to_text(f)
    return f"({to_text(f)})"


# ---------------------------------------------------------------------------
# Structures


Valuation = Mapping[Var, str]


class Structure:
    """A finite structure: per-sort domains, relation extensions, constants.

    Element names are strings unique across all sorts of one structure.
    """

    __slots__ = ("vocab", "domain", "rels", "consts", "_sort_of", "_hash")

    def __init__(
        self,
        vocab: Vocabulary,
        domain: Mapping[str, Sequence[str]],
        rels: Mapping[str, Iterable[Sequence[str]]] | None = None,
        consts: Mapping[str, str] | None = None,
    ) -> None:
        self.vocab = vocab
        self.domain: dict[str, tuple[str, ...]] = {}
        sort_of: dict[str, str] = {}
        for s in vocab.sorts:
            elems = tuple(domain.get(s, ()))
            if not elems:
                raise LogicError(f"sort {s!r} has an empty domain")
            for e in elems:
                if e in sort_of:
                    raise LogicError(f"element {e!r} appears twice")
                sort_of[e] = s
            self.domain[s] = elems
        extra = set(domain) - set(vocab.sorts)
        if extra:
            raise LogicError(f"domain given for undeclared sorts {sorted(extra)}")
        self._sort_of = sort_of
        rels = rels or {}
        unknown = set(rels) - set(vocab.relations)
        if unknown:
            raise LogicError(f"extension given for unknown relations {sorted(unknown)}")
        self.rels: dict[str, frozenset[tuple[str, ...]]] = {}
        for name, arg_sorts in vocab.relation_decls:
            tuples = frozenset(tuple(t) for t in rels.get(name, ()))
            for t in tuples:
                if len(t) != len(arg_sorts) or any(
                    sort_of.get(e) != s for e, s in zip(t, arg_sorts)
                ):
                    raise SortError(f"ill-sorted tuple {t} for relation {name!r}")
            self.rels[name] = tuples
        consts = consts or {}
        self.consts: dict[str, str] = {}
        for name, s in vocab.constant_decls:
            if name not in consts:
                raise LogicError(f"constant {name!r} is not interpreted")
            if sort_of.get(consts[name]) != s:
                raise SortError(f"constant {name!r} interpreted outside sort {s}")
            self.consts[name] = consts[name]
        self._hash: int | None = None

    def sort_of(self, elem: str) -> str:
        return self._sort_of[elem]

    def elements(self) -> list[str]:
        return [e for s in self.vocab.sorts for e in self.domain[s]]

    def size(self) -> int:
        return len(self._sort_of)

    def _canon(self) -> tuple:
        return (
            self.vocab,
            tuple((s, self.domain[s]) for s in self.vocab.sorts),
            tuple((r, tuple(sorted(self.rels[r]))) for r in self.rels),
            tuple(sorted(self.consts.items())),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Structure):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and {s: set(d) for s, d in self.domain.items()}
            == {s: set(d) for s, d in other.domain.items()}
            and self.rels == other.rels
            and self.consts == other.consts
        )

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(
                (
                    self.vocab,
                    frozenset((s, frozenset(d)) for s, d in self.domain.items()),
                    frozenset(self.rels.items()),
                    frozenset(self.consts.items()),
                )
            )
        return self._hash

    def holds(self, rel: str, args: Sequence[str]) -> bool:
        return tuple(args) in self.rels[rel]

    def replace(
        self,
        rels: Mapping[str, Iterable[Sequence[str]]] | None = None,
        consts: Mapping[str, str] | None = None,
    ) -> "Structure":
        new_rels = dict(self.rels)
        new_rels.update({k: frozenset(tuple(t) for t in v) for k, v in (rels or {}).items()})
        new_consts = dict(self.consts)
        new_consts.update(consts or {})
        return Structure(self.vocab, self.domain, new_rels, new_consts)

    def rename(self, mapping: Mapping[str, str]) -> "Structure":
        """Rename elements (mapping must be injective on the domain)."""
        m = lambda e: mapping.get(e, e)  # noqa: E731
        return Structure(
            self.vocab,
            {s: tuple(m(e) for e in d) for s, d in self.domain.items()},
            {r: {tuple(m(e) for e in t) for t in ts} for r, ts in self.rels.items()},
            {c: m(e) for c, e in self.consts.items()},
        )

    def to_json(self) -> dict:
        return {
            "domain": {s: list(self.domain[s]) for s in self.vocab.sorts},
            "relations": {r: sorted(list(t) for t in ts) for r, ts in self.rels.items()},
            "constants": dict(sorted(self.consts.items())),
        }

    @staticmethod
    def from_json(vocab: Vocabulary, data: Mapping) -> "Structure":
        return Structure(
            vocab,
            data["domain"],
            {r: [tuple(t) for t in ts] for r, ts in data.get("relations", {}).items()},
            data.get("constants", {}),
        )

    def describe(self) -> str:
        lines = []
        for s in self.vocab.sorts:
            lines.append(f"  {s}: {{{', '.join(self.domain[s])}}}")
        for c, e in self.consts.items():
            lines.append(f"  {c} = {e}")
        for r, ts in self.rels.items():
            if not ts:
                continue
            for t in sorted(ts):
                lines.append(f"  {r}({', '.join(t)})")
        return "\n".join(lines)

    def __repr__(self) -> str:
        return f"Structure(\n{self.describe()}\n)"


def all_tuples(struct: Structure, sorts: Sequence[str]) -> Iterator[tuple[str, ...]]:
    return itertools.product(*(struct.domain[s] for s in sorts))


def check_valuation(struct: Structure, v: Valuation) -> None:
    for var, e in v.items():
        if e not in struct._sort_of:
            raise LogicError(f"variable {var.name!r} mapped to unknown element {e!r}")
        if struct.sort_of(e) != var.sort:
            raise SortError(f"variable {var.name!r}:{var.sort} mapped to element of sort {struct.sort_of(e)}")


def canonical_names(
    struct: Structure, v: Valuation | None = None, first: Sequence[Var] = ()
) -> dict[str, str]:
    """Element renaming to ``<sort><i>``, numbering images of ``first`` first."""
    mapping: dict[str, str] = {}
    counters: dict[str, int] = {}
    order: list[str] = []
    for var in first:
        if v is not None and var in v:
            order.append(v[var])
    for s in struct.vocab.sorts:
        order.extend(struct.domain[s])
    for e in order:
        if e in mapping:
            continue
        s = struct.sort_of(e)
        i = counters.get(s, 0)
        counters[s] = i + 1
        mapping[e] = f"{s}{i}"
    return mapping


# ---------------------------------------------------------------------------
# Evaluation


class _Evaluator:
    def __init__(self, pre: Structure, post: Structure | None) -> None:
        self.pre = pre
        self.post = post

    def _struct(self, primed: bool) -> Structure:
        if not primed:
            return self.pre
        if self.post is None:
            raise LogicError("primed symbol in a single-vocabulary evaluation")
        return self.post

    def term(self, t: Term, env: Mapping[Var, str]) -> str:
        if isinstance(t, Var):
            try:
                return env[t]
            except KeyError:
                raise UnboundVariableError(f"free variable {t.name!r} has no value") from None
        st = self._struct(t.primed)
        try:
            return st.consts[t.name]
        except KeyError:
            raise LogicError(f"unknown constant {t.name!r}") from None

    def ev(self, f: Formula, env: dict[Var, str]) -> bool:
        if isinstance(f, Rel):
            st = self._struct(f.primed)
            try:
                ext = st.rels[f.name]
            except KeyError:
                raise LogicError(f"unknown relation {f.name!r}") from None
            return tuple(self.term(a, env) for a in f.args) in ext
        if isinstance(f, Eq):
            return self.term(f.left, env) == self.term(f.right, env)
        if isinstance(f, Not):
            return not self.ev(f.body, env)
        if isinstance(f, And):
            return all(self.ev(a, env) for a in f.args)
        if isinstance(f, Or):
            return any(self.ev(a, env) for a in f.args)
        if isinstance(f, Implies):
            return (not self.ev(f.left, env)) or self.ev(f.right, env)
        if isinstance(f, Iff):
            return self.ev(f.left, env) == self.ev(f.right, env)
        if isinstance(f, BoolConst):
            return f.value
        if isinstance(f, Exists):
            vs, items = _flatten_search(f.vars, f.body, True)
            return self.search(vs, items, env) is not None
        if isinstance(f, Forall):
            vs, items = _flatten_search(f.vars, f.body, False)
            return self.search(vs, items, env) is None
        raise LogicError(f"unknown formula node {type(f).__name__}")

    def search(
        self, vs: Sequence[Var], items: Sequence[tuple[Formula, bool]], env: dict[Var, str]
    ) -> dict[Var, str] | None:
        """Find values for ``vs`` making every (formula, polarity) item hold."""
        pos = {v: i for i, v in enumerate(vs)}
        buckets: list[list[tuple[Formula, bool]]] = [[] for _ in range(len(vs) + 1)]
        for g, pol in items:
            deps = [pos[v] for v in g.free_vars if v in pos]
            buckets[(max(deps) + 1) if deps else 0].append((g, pol))
        for g, pol in buckets[0]:
            if self.ev(g, env) != pol:
                return None
        st = self.pre
        for v in vs:
            if v.sort not in st.domain:
                raise SortError(f"variable {v.name!r} has unknown sort {v.sort!r}")
        local = dict(env)
        n = len(vs)

        def go(i: int) -> bool:
            if i == n:
                return True
            v = vs[i]
            for e in st.domain[v.sort]:
                local[v] = e
                if all(self.ev(g, local) == pol for g, pol in buckets[i + 1]) and go(i + 1):
                    return True
            del local[v]
            return False

        if go(0):
            return {v: local[v] for v in vs}
        return None


def _flatten_search(
    vs: tuple[Var, ...], body: Formula, positive: bool
) -> tuple[list[Var], list[tuple[Formula, bool]]]:
    """Split a quantifier body into items that must all hold (with polarity).

    ``positive`` means we look for an assignment making ``body`` true
    (existential); otherwise one making it false (counterexample to forall).
    """
    out_vars = list(vs)
    items: list[tuple[Formula, bool]] = []

    def add(g: Formula, pol: bool) -> None:
        if pol and isinstance(g, And):
            for a in g.args:
                add(a, True)
        elif not pol and isinstance(g, Or):
            for a in g.args:
                add(a, False)
        elif not pol and isinstance(g, Implies):
            add(g.left, True)
            add(g.right, False)
        elif isinstance(g, Not):
            add(g.body, not pol)
        elif pol and isinstance(g, Exists):
            out_vars.extend(g.vars)
            add(g.body, True)
        elif not pol and isinstance(g, Forall):
            out_vars.extend(g.vars)
            add(g.body, False)
        else:
            items.append((g, pol))

    add(body, positive)
    return out_vars, items


def _check_env(st: Structure, f: Formula, v: Valuation) -> dict[Var, str]:
    missing = [x.name for x in f.free_vars if x not in v]
    if missing:
        raise UnboundVariableError(f"free variable(s) {sorted(missing)} not in valuation")
    check_valuation(st, {x: v[x] for x in f.free_vars})
    return dict(v)


def evaluate(struct: Structure, v: Valuation, f: Formula) -> bool:
    """Tarskian truth of ``f`` in ``struct`` under valuation ``v``."""
    env = _check_env(struct, f, v)
    return _Evaluator(struct, None).ev(f, env)


def evaluate_two_vocab(pre: Structure, post: Structure, v: Valuation, f: Formula) -> bool:
    """Truth of a transition formula: unprimed symbols in ``pre``, primed in ``post``."""
    if pre.vocab != post.vocab:
        raise LogicError("pre and post structures have different vocabularies")
    if {s: set(d) for s, d in pre.domain.items()} != {s: set(d) for s, d in post.domain.items()}:
        raise LogicError("pre and post structures must share one domain")
    env = _check_env(pre, f, v)
    return _Evaluator(pre, post).ev(f, env)


# ``eval`` is the conventional name in this codebase's API; keep an alias that
# does not shadow the builtin at import sites using ``from logic import *``.
eval_formula = evaluate
eval_two_vocab = evaluate_two_vocab


def find_witness(struct: Structure, v: Valuation, f: Exists) -> dict[Var, str] | None:
    """Witness assignment for an existential formula, or None."""
    env = _check_env(struct, f, v)
    vs, items = _flatten_search(f.vars, f.body, True)
    return _Evaluator(struct, None).search(vs, items, env)


# ---------------------------------------------------------------------------
# Diagrams


@dataclass(frozen=True)
class Diagram:
    """Existential conjunction describing a structure up to embedding.

    ``elements[i]`` is the element named by ``vars[i]``.
    """

    vars: tuple[Var, ...]
    elements: tuple[str, ...]
    view: tuple[Var, ...]
    literals: tuple[Formula, ...]

    @property
    def formula(self) -> Formula:
        body = And(self.literals) if len(self.literals) != 1 else self.literals[0]
        if not self.literals:
            body = TRUE
        return Exists(self.vars, body) if self.vars else body

    def sub(self, literals: Sequence[Formula]) -> "Diagram":
        used = set()
        for lit in literals:
            used |= lit.free_vars
        keep = [(x, e) for x, e in zip(self.vars, self.elements) if x in used]
        return Diagram(
            tuple(x for x, _ in keep), tuple(e for _, e in keep), self.view, tuple(literals)
        )

    def negation(self) -> Formula:
        """The universal clause excluding every structure this diagram embeds into."""
        clause = disj(*(neg(lit) for lit in self.literals))
        return Forall(self.vars, clause) if self.vars and self.literals else clause


def _var_prefix(sort: str) -> str:
    return sort[:1].upper() + sort[1:]


def diagram(struct: Structure, v: Valuation, view: Sequence[Var] = ()) -> Diagram:
    """Diagram of ``struct`` relative to view variables ``view`` (valued by ``v``)."""
    view = tuple(view)
    check_valuation(struct, {x: v[x] for x in view})
    taken = struct.vocab.symbols() | {x.name for x in view} | set(struct.vocab.sorts)
    evars: dict[str, Var] = {}
    order: list[str] = []
    for s in struct.vocab.sorts:
        for i, e in enumerate(struct.domain[s]):
            name = fresh_name(f"{_var_prefix(s)}{i}", taken)
            taken.add(name)
            evars[e] = Var(name, s)
            order.append(e)
    lits: list[Formula] = []
    for s in struct.vocab.sorts:
        d = struct.domain[s]
        for i in range(len(d)):
            for j in range(i + 1, len(d)):
                lits.append(Not(Eq(evars[d[i]], evars[d[j]])))
    for c, s in struct.vocab.constant_decls:
        lits.append(Eq(evars[struct.consts[c]], Const(c, s)))
    for x in view:
        lits.append(Eq(evars[v[x]], x))
    for r, arg_sorts in struct.vocab.relation_decls:
        ext = struct.rels[r]
        for t in all_tuples(struct, arg_sorts):
            atom = Rel(r, tuple(evars[e] for e in t))
            lits.append(atom if t in ext else Not(atom))
    return Diagram(tuple(evars[e] for e in order), tuple(order), view, tuple(lits))


def is_substructure(small: Structure, big: Structure, v: Valuation) -> bool:
    """Whether ``small`` embeds into ``big`` fixing constants and the view valuation."""
    view = tuple(sorted(v))
    d = diagram(small, v, view)
    return evaluate(big, {x: v[x] for x in view}, d.formula)


def embedding(small: Structure, big: Structure, v: Valuation) -> dict[str, str] | None:
    """An embedding witnessing ``is_substructure``, as an element map."""
    view = tuple(sorted(v))
    d = diagram(small, v, view)
    f = d.formula
    env = {x: v[x] for x in view}
    if not isinstance(f, Exists):
        return {} if evaluate(big, env, f) else None
    w = find_witness(big, env, f)
    if w is None:
        return None
    return {e: w[x] for x, e in zip(d.vars, d.elements)}
