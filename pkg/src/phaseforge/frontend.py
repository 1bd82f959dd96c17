"""Parser and pretty-printer for ``.pfz`` protocol models.

A model declares sorts, relations, constants, ``init`` clauses, actions,
an optional flat ``invariant`` list, a ``safety`` property, and optionally
an ``automaton`` block giving the phase structure (and, for checking,
per-phase invariants). The grammar is in docs/grammar.ebnf.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .logic import (
    FALSE,
    TRUE,
    And,
    Const,
    Eq,
    Exists,
    Forall,
    Formula,
    Iff,
    Implies,
    Not,
    Or,
    Rel,
    Var,
    Vocabulary,
    alternation_witness,
    conj,
    to_text,
)
from .system import Action, TransitionSystem, Update

KEYWORDS = {
    "sort",
    "relation",
    "constant",
    "init",
    "action",
    "require",
    "safety",
    "invariant",
    "automaton",
    "phase",
    "view",
    "on",
    "where",
    "self",
    "forall",
    "exists",
    "true",
    "false",
}


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


class ParseError(Exception):
    """Lexical, syntactic or resolution error with a source position."""

    def __init__(self, message: str, span: Span, expected: Iterable[str] = ()) -> None:
        self.message = message
        self.span = span
        self.expected = frozenset(expected)
        text = f"{span}: {message}"
        if self.expected:
            text += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(text)


# ---------------------------------------------------------------------------
# Model file AST


@dataclass(frozen=True)
class RelationDecl:
    name: str
    sorts: tuple[str, ...]
    span: Span | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ConstantDecl:
    name: str
    sort: str
    span: Span | None = field(default=None, compare=False)


@dataclass(frozen=True)
class UpdateDecl:
    relation: str
    args: tuple[str | None, ...]  # parameter names or None for '*'
    value: bool


@dataclass(frozen=True)
class ActionDecl:
    name: str
    params: tuple[Var, ...]
    requires: tuple[Formula, ...]
    updates: tuple[UpdateDecl, ...]
    span: Span | None = field(default=None, compare=False)


@dataclass(frozen=True)
class SafetyDecl:
    view: tuple[Var, ...]
    body: Formula
    span: Span | None = field(default=None, compare=False)


@dataclass(frozen=True)
class PhaseDecl:
    name: str
    invariants: tuple[Formula, ...] = ()
    has_block: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class EdgeDecl:
    src: str
    dst: str
    action: str
    args: tuple[str | None, ...]
    guard: Formula | None = None
    span: Span | None = field(default=None, compare=False)


@dataclass(frozen=True)
class AutomatonDecl:
    view: tuple[Var, ...]
    init_phase: str
    phases: tuple[PhaseDecl, ...]
    edges: tuple[EdgeDecl, ...]
    span: Span | None = field(default=None, compare=False)

    def phase_names(self) -> list[str]:
        return [p.name for p in self.phases]


@dataclass(frozen=True)
class ModelFile:
    sorts: tuple[str, ...] = ()
    relations: tuple[RelationDecl, ...] = ()
    constants: tuple[ConstantDecl, ...] = ()
    inits: tuple[Formula, ...] = ()
    actions: tuple[ActionDecl, ...] = ()
    invariants: tuple[Formula, ...] = ()
    safety: SafetyDecl | None = None
    automaton: AutomatonDecl | None = None

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(
            self.sorts,
            tuple((r.name, r.sorts) for r in self.relations),
            tuple((c.name, c.sort) for c in self.constants),
        )


# ---------------------------------------------------------------------------
# Lexer


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<op><->|->|:=|!=|[(){}\[\],:.*=~!&|])
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*'?)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "kw", "op", "eof"
    text: str
    span: Span


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    pos = 0
    line, col = 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            ch = text[pos]
            hint = " (identifiers must start with a letter)" if ch == "_" else ""
            raise ParseError(f"unexpected character {ch!r}{hint}", Span(line, col))
        kind = m.lastgroup
        s = m.group(0)
        if kind == "ident":
            base = s.rstrip("'")
            toks.append(Token("kw" if base in KEYWORDS and not s.endswith("'") else "ident", s, Span(line, col)))
        elif kind == "op":
            toks.append(Token("op", s, Span(line, col)))
        if kind == "nl":
            line += 1
            col = 1
        else:
            col += len(s)
        pos = m.end()
    toks.append(Token("eof", "", Span(line, col)))
    return toks


# ---------------------------------------------------------------------------
# Parser


class _Scope:
    """Variables visible while parsing a formula (innermost last)."""

    def __init__(self, vars_: Sequence[Var] = ()) -> None:
        self.frames: list[dict[str, Var]] = [{v.name: v for v in vars_}]

    def lookup(self, name: str) -> Var | None:
        for fr in reversed(self.frames):
            if name in fr:
                return fr[name]
        return None

    def names(self) -> set[str]:
        out: set[str] = set()
        for fr in self.frames:
            out |= set(fr)
        return out


class Parser:
    def __init__(self, text: str) -> None:
        self.toks = tokenize(text)
        self.i = 0
        self.sorts: list[str] = []
        self.relations: dict[str, tuple[str, ...]] = {}
        self.constants: dict[str, str] = {}
        self.action_sigs: dict[str, tuple[Var, ...]] = {}

    # token helpers -----------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "kw") and t.text == text

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}", [text])
        return self.advance()

    def fail(self, msg: str, expected: Iterable[str] = (), tok: Token | None = None):
        t = tok or self.tok
        got = "end of input" if t.kind == "eof" else repr(t.text)
        raise ParseError(f"{msg}, got {got}", t.span, expected)

    def ident(self, what: str = "identifier") -> Token:
        t = self.tok
        if t.kind != "ident":
            self.fail(f"expected {what}", [what])
        if t.text.endswith("'"):
            self.fail(f"primed name not allowed for {what}")
        return self.advance()

    def sort_name(self) -> str:
        t = self.ident("sort name")
        if t.text not in self.sorts:
            raise ParseError(f"unknown sort {t.text!r}", t.span)
        return t.text

    def typed_var(self) -> Var:
        t = self.ident("variable")
        self.expect(":")
        return Var(t.text, self.sort_name())

    def check_fresh_var(self, t: Token, scope: _Scope | None = None) -> None:
        if t.text in self.relations or t.text in self.constants:
            raise ParseError(f"variable {t.text!r} clashes with a declared symbol", t.span)
        if scope is not None and scope.lookup(t.text) is not None:
            raise ParseError(f"variable {t.text!r} shadows an enclosing binding", t.span)

    # declarations --------------------------------------------------------------

    def parse_file(self) -> ModelFile:
        sorts: list[str] = []
        rels: list[RelationDecl] = []
        consts: list[ConstantDecl] = []
        inits: list[Formula] = []
        actions: list[ActionDecl] = []
        invs: list[Formula] = []
        safety: SafetyDecl | None = None
        automaton: AutomatonDecl | None = None
        top = ["sort", "relation", "constant", "init", "action", "invariant", "safety", "automaton"]
        while self.tok.kind != "eof":
            t = self.tok
            if self.at("sort"):
                self.advance()
                n = self.ident("sort name")
                self.declare_name(n)
                self.sorts.append(n.text)
                sorts.append(n.text)
            elif self.at("relation"):
                self.advance()
                n = self.ident("relation name")
                self.declare_name(n)
                arg_sorts: list[str] = []
                if self.at("("):
                    self.advance()
                    if not self.at(")"):
                        arg_sorts.append(self.sort_name())
                        while self.at(","):
                            self.advance()
                            arg_sorts.append(self.sort_name())
                    self.expect(")")
                self.relations[n.text] = tuple(arg_sorts)
                rels.append(RelationDecl(n.text, tuple(arg_sorts), n.span))
            elif self.at("constant"):
                self.advance()
                n = self.ident("constant name")
                self.declare_name(n)
                self.expect(":")
                s = self.sort_name()
                self.constants[n.text] = s
                consts.append(ConstantDecl(n.text, s, n.span))
            elif self.at("init"):
                self.advance()
                inits.append(self.closed_formula("init"))
            elif self.at("action"):
                actions.append(self.action_decl())
            elif self.at("invariant"):
                self.advance()
                invs.append(self.closed_formula("invariant"))
            elif self.at("safety"):
                if safety is not None:
                    self.fail("duplicate safety declaration")
                safety = self.safety_decl()
            elif self.at("automaton"):
                if automaton is not None:
                    self.fail("duplicate automaton declaration")
                automaton = self.automaton_decl()
            else:
                self.fail("expected a declaration", top, t)
        return ModelFile(
            tuple(sorts),
            tuple(rels),
            tuple(consts),
            tuple(inits),
            tuple(actions),
            tuple(invs),
            safety,
            automaton,
        )

    def declare_name(self, t: Token) -> None:
        if t.text in self.sorts or t.text in self.relations or t.text in self.constants or t.text in self.action_sigs:
            raise ParseError(f"duplicate declaration of {t.text!r}", t.span)

    def closed_formula(self, what: str) -> Formula:
        start = self.tok
        f = self.formula(_Scope(), allow_primed=False)
        if f.free_vars:
            raise ParseError(f"{what} formula has free variables", start.span)
        return f

    def action_decl(self) -> ActionDecl:
        open_tok = self.expect("action")
        n = self.ident("action name")
        if n.text in self.action_sigs:
            raise ParseError(f"duplicate action {n.text!r}", n.span)
        self.expect("(")
        params: list[Var] = []
        if not self.at(")"):
            while True:
                pt = self.tok
                p = self.typed_var()
                self.check_fresh_var(pt)
                if any(q.name == p.name for q in params):
                    raise ParseError(f"duplicate parameter {p.name!r}", pt.span)
                params.append(p)
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        self.action_sigs[n.text] = tuple(params)
        if not self.at("{"):
            self.fail("expected '{' to open the action body", ["{"])
        self.advance()
        scope = _Scope(params)
        requires: list[Formula] = []
        updates: list[UpdateDecl] = []
        pmap = {p.name: p for p in params}
        while not self.at("}"):
            if self.tok.kind == "eof" or self.at("action") or self.at("automaton") or self.at("safety"):
                raise ParseError(
                    f"action block opened at line {open_tok.span.line} is not closed",
                    self.tok.span,
                    ["}"],
                )
            if self.at("require"):
                self.advance()
                requires.append(self.formula(scope, allow_primed=False))
            elif self.tok.kind == "ident":
                updates.append(self.update_stmt(pmap))
            else:
                self.fail("expected 'require', an update, or '}'", ["require", "}", "identifier"])
        self.advance()
        return ActionDecl(n.text, tuple(params), tuple(requires), tuple(updates), n.span)

    def update_stmt(self, pmap: dict[str, Var]) -> UpdateDecl:
        rt = self.ident("relation name")
        if rt.text not in self.relations:
            raise ParseError(f"unknown relation {rt.text!r}", rt.span)
        sorts = self.relations[rt.text]
        args: list[str | None] = []
        if self.at("("):
            self.advance()
            if not self.at(")"):
                while True:
                    args.append(self.pattern_arg())
                    if not self.at(","):
                        break
                    self.advance()
            self.expect(")")
        if len(args) != len(sorts):
            raise ParseError(
                f"relation {rt.text!r} expects {len(sorts)} argument(s), got {len(args)}", rt.span
            )
        for a, s, k in zip(args, sorts, range(len(args))):
            if a is None:
                continue
            if a not in pmap:
                raise ParseError(f"update argument {a!r} is not an action parameter", rt.span)
            if pmap[a].sort != s:
                raise ParseError(
                    f"argument {k + 1} of {rt.text!r} has sort {pmap[a].sort}, expected {s}", rt.span
                )
        self.expect(":=")
        if self.at("true"):
            val = True
        elif self.at("false"):
            val = False
        else:
            self.fail("expected 'true' or 'false'", ["true", "false"])
        self.advance()
        return UpdateDecl(rt.text, tuple(args), val)

    def pattern_arg(self) -> str | None:
        if self.at("*"):
            self.advance()
            return None
        return self.ident("argument").text

    def safety_decl(self) -> SafetyDecl:
        st = self.expect("safety")
        view: list[Var] = []
        if self.at("["):
            self.advance()
            if not self.at("]"):
                while True:
                    pt = self.tok
                    v = self.typed_var()
                    self.check_fresh_var(pt)
                    view.append(v)
                    if not self.at(","):
                        break
                    self.advance()
            self.expect("]")
        start = self.tok
        body = self.formula(_Scope(view), allow_primed=False)
        extra = body.free_vars - set(view)
        if extra:
            raise ParseError("safety formula has free variables outside its view", start.span)
        return SafetyDecl(tuple(view), body, st.span)

    def automaton_decl(self) -> AutomatonDecl:
        st = self.expect("automaton")
        self.expect("{")
        view: list[Var] = []
        phases: list[PhaseDecl] = []
        edges: list[EdgeDecl] = []
        init_phase: str | None = None
        items = ["view", "init", "phase", "self", "identifier", "}"]
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise ParseError(
                    f"automaton block opened at line {st.span.line} is not closed", self.tok.span, ["}"]
                )
            if self.at("view"):
                self.advance()
                if phases or edges:
                    self.fail("view must be declared before phases and edges")
                while True:
                    pt = self.tok
                    v = self.typed_var()
                    self.check_fresh_var(pt)
                    if any(w.name == v.name for w in view):
                        raise ParseError(f"duplicate view variable {v.name!r}", pt.span)
                    view.append(v)
                    if not self.at(","):
                        break
                    self.advance()
            elif self.at("init") or self.at("phase"):
                is_init = self.at("init")
                if is_init:
                    self.advance()
                self.expect("phase")
                n = self.ident("phase name")
                if any(p.name == n.text for p in phases):
                    raise ParseError(f"duplicate phase {n.text!r}", n.span)
                if is_init:
                    if init_phase is not None:
                        raise ParseError("more than one initial phase", n.span)
                    init_phase = n.text
                invs: list[Formula] = []
                has_block = False
                if self.at("{"):
                    has_block = True
                    ob = self.advance()
                    while not self.at("}"):
                        if self.tok.kind == "eof":
                            raise ParseError(
                                f"phase block opened at line {ob.span.line} is not closed",
                                self.tok.span,
                                ["}"],
                            )
                        self.expect("invariant")
                        invs.append(self.formula(_Scope(view), allow_primed=False))
                    self.advance()
                phases.append(PhaseDecl(n.text, tuple(invs), has_block))
            elif self.at("self") or self.tok.kind == "ident":
                edges.append(self.edge_decl(view))
            else:
                self.fail("expected an automaton item", items)
        self.advance()
        if init_phase is None:
            raise ParseError("automaton declares no initial phase ('init phase')", st.span)
        names = {p.name for p in phases}
        for e in edges:
            for ph in (e.src, e.dst):
                if ph not in names:
                    raise ParseError(f"edge refers to undeclared phase {ph!r}", e.span or st.span)
        return AutomatonDecl(tuple(view), init_phase, tuple(phases), tuple(edges), st.span)

    def edge_decl(self, view: list[Var]) -> EdgeDecl:
        if self.at("self"):
            self.advance()
            src_t = self.ident("phase name")
            dst_t = src_t
        else:
            src_t = self.ident("phase name")
            self.expect("->")
            dst_t = self.ident("phase name")
        self.expect("on")
        at = self.ident("action name")
        if at.text not in self.action_sigs:
            raise ParseError(f"edge uses unknown action {at.text!r}", at.span)
        params = self.action_sigs[at.text]
        self.expect("(")
        args: list[str | None] = []
        if not self.at(")"):
            while True:
                args.append(self.pattern_arg())
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        if len(args) != len(params):
            raise ParseError(
                f"action {at.text!r} takes {len(params)} argument(s), edge gives {len(args)}", at.span
            )
        vmap = {v.name: v for v in view}
        locals_: dict[str, Var] = {}
        for a, p in zip(args, params):
            if a is None:
                continue
            if a in vmap:
                if vmap[a].sort != p.sort:
                    raise ParseError(
                        f"view variable {a!r} has sort {vmap[a].sort}, parameter {p.name!r} of "
                        f"{at.text!r} has sort {p.sort}",
                        at.span,
                    )
            else:
                if a in self.relations or a in self.constants:
                    raise ParseError(f"edge argument {a!r} clashes with a declared symbol", at.span)
                if a in locals_ and locals_[a].sort != p.sort:
                    raise ParseError(f"edge argument {a!r} used at two different sorts", at.span)
                locals_[a] = Var(a, p.sort)
        guard: Formula | None = None
        if self.at("where"):
            self.advance()
            gt = self.tok
            guard = self.formula(_Scope([*view, *locals_.values()]), allow_primed=True)
            w = alternation_witness(guard)
            if w is not None:
                raise ParseError(f"edge guard is not alternation-free: {to_text(w)}", gt.span)
        return EdgeDecl(src_t.text, dst_t.text, at.text, tuple(args), guard, src_t.span)

    # formulas ------------------------------------------------------------------

    def formula(self, scope: _Scope, allow_primed: bool) -> Formula:
        return self.f_iff(scope, allow_primed)

    def f_iff(self, scope: _Scope, ap: bool) -> Formula:
        left = self.f_imp(scope, ap)
        if self.at("<->"):
            self.advance()
            right = self.f_imp(scope, ap)
            if self.at("<->"):
                self.fail("'<->' is not associative; add parentheses")
            return Iff(left, right)
        return left

    def f_imp(self, scope: _Scope, ap: bool) -> Formula:
        left = self.f_or(scope, ap)
        if self.at("->"):
            self.advance()
            right = self.f_imp(scope, ap)
            return Implies(left, right)
        return left

    def f_or(self, scope: _Scope, ap: bool) -> Formula:
        parts = [self.f_and(scope, ap)]
        while self.at("|"):
            self.advance()
            parts.append(self.f_and(scope, ap))
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def f_and(self, scope: _Scope, ap: bool) -> Formula:
        parts = [self.f_unary(scope, ap)]
        while self.at("&"):
            self.advance()
            parts.append(self.f_unary(scope, ap))
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def f_unary(self, scope: _Scope, ap: bool) -> Formula:
        if self.at("~") or self.at("!"):
            self.advance()
            return Not(self.f_unary(scope, ap))
        if self.at("forall") or self.at("exists"):
            return self.f_quant(scope, ap)
        return self.f_atom(scope, ap)

    def f_quant(self, scope: _Scope, ap: bool) -> Formula:
        kind = self.advance().text
        vs: list[Var] = []
        while True:
            pt = self.tok
            v = self.typed_var()
            self.check_fresh_var(pt, scope)
            if any(w.name == v.name for w in vs):
                raise ParseError(f"duplicate bound variable {v.name!r}", pt.span)
            vs.append(v)
            if not self.at(","):
                break
            self.advance()
        self.expect(".")
        scope.frames.append({v.name: v for v in vs})
        try:
            body = self.formula(scope, ap)
        finally:
            scope.frames.pop()
        return (Forall if kind == "forall" else Exists)(tuple(vs), body)

    def f_atom(self, scope: _Scope, ap: bool) -> Formula:
        t = self.tok
        if self.at("("):
            self.advance()
            f = self.formula(scope, ap)
            self.expect(")")
            return f
        if self.at("true"):
            self.advance()
            return TRUE
        if self.at("false"):
            self.advance()
            return FALSE
        if t.kind != "ident":
            self.fail("expected a formula", ["(", "~", "forall", "exists", "true", "false", "identifier"])
        name = t.text
        primed = name.endswith("'")
        base = name.rstrip("'")
        if primed and not ap:
            raise ParseError(f"primed symbol {name!r} is only allowed in edge guards", t.span)
        if base in self.relations and scope.lookup(base) is None:
            self.advance()
            sorts = self.relations[base]
            args: list = []
            if self.at("("):
                self.advance()
                if not self.at(")"):
                    while True:
                        args.append(self.term(scope, ap))
                        if not self.at(","):
                            break
                        self.advance()
                self.expect(")")
            if len(args) != len(sorts):
                raise ParseError(
                    f"relation {base!r} expects {len(sorts)} argument(s), got {len(args)}", t.span
                )
            for k, (a, s) in enumerate(zip(args, sorts)):
                if a.sort != s:
                    raise ParseError(
                        f"argument {k + 1} of {base!r} has sort {a.sort}, expected {s}", t.span
                    )
            return Rel(base, tuple(args), primed)
        left = self.term(scope, ap)
        if self.at("="):
            op = self.advance()
            right = self.term(scope, ap)
            if left.sort != right.sort:
                raise ParseError(f"equality between sorts {left.sort} and {right.sort}", op.span)
            return Eq(left, right)
        if self.at("!="):
            op = self.advance()
            right = self.term(scope, ap)
            if left.sort != right.sort:
                raise ParseError(f"equality between sorts {left.sort} and {right.sort}", op.span)
            return Not(Eq(left, right))
        self.fail("expected '=' or '!=' after a term", ["=", "!="])
        raise AssertionError  # unreachable

    def term(self, scope: _Scope, ap: bool):
        t = self.tok
        if t.kind != "ident":
            self.fail("expected a term", ["identifier"])
        self.advance()
        primed = t.text.endswith("'")
        base = t.text.rstrip("'")
        if not primed:
            v = scope.lookup(base)
            if v is not None:
                return v
        if base in self.constants:
            if primed and not ap:
                raise ParseError(f"primed symbol {t.text!r} is only allowed in edge guards", t.span)
            return Const(base, self.constants[base], primed)
        if primed:
            raise ParseError(f"unknown constant {base!r}", t.span)
        raise ParseError(f"unknown variable or constant {base!r}", t.span)


def parse(text: str) -> ModelFile:
    return Parser(text).parse_file()


def parse_file(path: str | Path) -> ModelFile:
    return parse(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Pretty printer


def _params(vs: Sequence[Var]) -> str:
    return ", ".join(f"{v.name}: {v.sort}" for v in vs)


def _pattern(args: Sequence[str | None]) -> str:
    return ", ".join("*" if a is None else a for a in args)


def pretty(m: ModelFile, header: Sequence[str] = ()) -> str:
    out: list[str] = [f"# {h}" for h in header]
    if header:
        out.append("")
    for s in m.sorts:
        out.append(f"sort {s}")
    if m.relations:
        out.append("")
    for r in m.relations:
        out.append(f"relation {r.name}({', '.join(r.sorts)})" if r.sorts else f"relation {r.name}")
    for c in m.constants:
        out.append(f"constant {c.name}: {c.sort}")
    if m.inits:
        out.append("")
    for f in m.inits:
        out.append(f"init {to_text(f)}")
    for a in m.actions:
        out.append("")
        out.append(f"action {a.name}({_params(a.params)}) {{")
        for f in a.requires:
            out.append(f"  require {to_text(f)}")
        for u in a.updates:
            lhs = f"{u.relation}({_pattern(u.args)})" if u.args else u.relation
            out.append(f"  {lhs} := {'true' if u.value else 'false'}")
        out.append("}")
    if m.invariants:
        out.append("")
    for f in m.invariants:
        out.append(f"invariant {to_text(f)}")
    if m.safety is not None:
        out.append("")
        view = f"[{_params(m.safety.view)}] " if m.safety.view else ""
        out.append(f"safety {view}{to_text(m.safety.body)}")
    if m.automaton is not None:
        a = m.automaton
        out.append("")
        out.append("automaton {")
        if a.view:
            out.append(f"  view {_params(a.view)}")
        for p in a.phases:
            prefix = "init phase" if p.name == a.init_phase else "phase"
            if p.invariants:
                out.append(f"  {prefix} {p.name} {{")
                for f in p.invariants:
                    out.append(f"    invariant {to_text(f)}")
                out.append("  }")
            elif p.has_block:
                out.append(f"  {prefix} {p.name} {{ }}")
            else:
                out.append(f"  {prefix} {p.name}")
        for e in a.edges:
            head = f"self {e.src}" if e.src == e.dst else f"{e.src} -> {e.dst}"
            line = f"  {head} on {e.action}({_pattern(e.args)})"
            if e.guard is not None:
                line += f" where {to_text(e.guard)}"
            out.append(line)
        out.append("}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Lowering


class LowerError(Exception):
    pass


@dataclass(frozen=True)
class SafetyProperty:
    """``forall view. body``."""

    view: tuple[Var, ...]
    body: Formula

    @property
    def formula(self) -> Formula:
        return Forall(self.view, self.body) if self.view and self.body.free_vars else self.body


@dataclass
class Lowered:
    ts: TransitionSystem
    structure: object | None  # automaton.PhaseStructure
    safety: SafetyProperty
    characterizations: dict[str, Formula] | None
    invariant: Formula | None

    def automaton(self):
        """The phase automaton with the file's per-phase invariants as characterizations."""
        from .automaton import PhaseAutomaton

        if self.structure is None or self.characterizations is None:
            return None
        return PhaseAutomaton(self.structure, self.characterizations)


def lower_actions(m: ModelFile) -> TransitionSystem:
    vocab = m.vocab
    actions = []
    for a in m.actions:
        pmap = {p.name: p for p in a.params}
        ups = tuple(
            Update(u.relation, tuple(None if x is None else pmap[x] for x in u.args), u.value)
            for u in a.updates
        )
        actions.append(Action(a.name, a.params, conj(a.requires), ups))
    return TransitionSystem(vocab, conj(m.inits), tuple(actions))


def lower(m: ModelFile) -> Lowered:
    from .automaton import EdgeLabel, PhaseStructure

    ts = lower_actions(m)
    structure = None
    chars = None
    aut = m.automaton
    view: tuple[Var, ...] = aut.view if aut is not None else ()
    if m.safety is None:
        safety = SafetyProperty(view, TRUE)
    else:
        if aut is not None and m.safety.view and m.safety.view != aut.view:
            raise LowerError(
                f"safety view [{_params(m.safety.view)}] does not match automaton view "
                f"[{_params(aut.view)}]"
                + (f" (safety at line {m.safety.span.line})" if m.safety.span else "")
            )
        safety = SafetyProperty(view or m.safety.view, m.safety.body)
    if aut is not None:
        entries = []
        for e in aut.edges:
            entries.append((e.src, e.dst, EdgeLabel(e.action, e.args, e.guard if e.guard is not None else TRUE)))
        structure = PhaseStructure.build(ts, aut.phase_names(), aut.init_phase, aut.view, entries)
        if any(p.has_block or p.invariants for p in aut.phases):
            chars = {p.name: conj(p.invariants) for p in aut.phases}
    inv = conj(m.invariants) if m.invariants else None
    return Lowered(ts, structure, safety, chars, inv)


def load(path: str | Path) -> Lowered:
    return lower(parse_file(path))


def with_characterizations(m: ModelFile, eta: dict[str, Formula]) -> ModelFile:
    """Copy of ``m`` whose phases carry the given characterizations (split into conjuncts)."""
    from .logic import top_conjuncts

    assert m.automaton is not None
    phases = tuple(
        PhaseDecl(p.name, tuple(top_conjuncts(eta[p.name])) or ((FALSE,) if eta[p.name] == FALSE else ()), True)
        for p in m.automaton.phases
    )
    aut = AutomatonDecl(m.automaton.view, m.automaton.init_phase, phases, m.automaton.edges, m.automaton.span)
    return ModelFile(m.sorts, m.relations, m.constants, m.inits, m.actions, m.invariants, m.safety, aut)
