"""Verification conditions for phase automata and their CHC export.

Four families: initiation, inductiveness per edge, edge covering per phase
(split per action), and safety per phase. Each VC carries closed formula
``formula`` (valid iff the condition holds) and a list of open sub-queries
whose joint unsatisfiability is equivalent to that validity; view
variables and action parameters stay free and are treated as Skolem
constants by the solver.
"""

from __future__ import annotations

import concurrent.futures
import time
from dataclasses import dataclass, field
from typing import Sequence

from .automaton import PhaseAutomaton, PhaseStructure
from .frontend import SafetyProperty
from .logic import (
    TRUE,
    Forall,
    Formula,
    Implies,
    Structure,
    Var,
    conj,
    disj,
    evaluate,
    evaluate_two_vocab,
    neg,
    prime,
    rename_bound,
    to_text,
    top_conjuncts,
)
from .solver import SessionPool, SolverSession, declarations, q, to_smt
from .system import TransitionSystem, global_tr


@dataclass(frozen=True)
class SubQuery:
    formula: Formula
    note: str = ""


@dataclass
class VC:
    kind: str  # initiation | inductiveness | edge_covering | safety
    formula: Formula
    queries: list[SubQuery]
    phase: str | None = None
    target: str | None = None
    action: str | None = None

    @property
    def name(self) -> str:
        if self.kind == "initiation":
            return f"initiation({self.phase})"
        if self.kind == "inductiveness":
            return f"inductiveness({self.phase},{self.target})"
        if self.kind == "edge_covering":
            return f"edge_covering({self.phase}{',' + self.action if self.action else ''})"
        return f"safety({self.phase})"


def _close(vs: Sequence[Var], f: Formula) -> Formula:
    vs = tuple(sorted(v for v in set(vs) if v in f.free_vars))
    if not vs:
        return f
    names = {v.name for v in vs}
    if names & f.bound_names:
        f = rename_bound(f, names)
    return Forall(vs, f)


def _edge_cover_queries(ts: TransitionSystem, a: PhaseAutomaton, q: str, action: str) -> tuple[Formula, list[SubQuery]]:
    s = a.structure
    ca = ts.compiled(action)
    matches = [e.match for _, e in s.out_entries(q) if e.label.action == action]
    cover = disj(*matches)
    # The effect only matters when a guard mentions the post-state; the
    # action's update is total, so dropping it is otherwise equivalent.
    needs_body = cover.has_primed
    pre = conj(a.eta[q], ca.guard, ca.body if needs_body else TRUE)
    formula = _close([*s.view, *ca.params], Implies(pre, cover))
    return formula, [SubQuery(conj(pre, neg(cover)), f"{action} at {q}")]


def edge_cover_vcs(ts: TransitionSystem, a: PhaseAutomaton, q: str) -> list[VC]:
    out = []
    for act in ts.action_names():
        formula, qs = _edge_cover_queries(ts, a, q, act)
        out.append(VC("edge_covering", formula, qs, phase=q, action=act))
    return out


def gen_vcs(
    ts: TransitionSystem,
    a: PhaseAutomaton,
    safety: SafetyProperty,
    split_covering: bool = True,
) -> list[VC]:
    s = a.structure
    view = s.view
    vcs: list[VC] = []
    eta = a.eta
    iota = s.init_phase
    vcs.append(
        VC(
            "initiation",
            Implies(ts.init, _close(view, eta[iota])),
            [SubQuery(conj(ts.init, neg(c)), f"init => {to_text(c)}") for c in top_conjuncts(eta[iota])]
            if eta[iota] != TRUE
            else [],
            phase=iota,
        )
    )
    for q_, p in s.edges():
        subs = []
        post_parts = top_conjuncts(eta[p])
        for e in s.entries_of(q_, p):
            for c in post_parts:
                subs.append(
                    SubQuery(
                        conj(eta[q_], e.formula, *s.excluded(q_, p), neg(prime(c))),
                        f"{e.label} preserves {to_text(c)}",
                    )
                )
        formula = _close(view, Implies(conj(eta[q_], s.label(q_, p)), prime(eta[p])))
        vcs.append(VC("inductiveness", formula, subs, phase=q_, target=p))
    for q_ in s.phases:
        per_action = edge_cover_vcs(ts, a, q_)
        if split_covering:
            vcs.extend(per_action)
        else:
            vcs.append(
                VC(
                    "edge_covering",
                    conj(v.formula for v in per_action),
                    [sq for v in per_action for sq in v.queries],
                    phase=q_,
                )
            )
    for q_ in s.phases:
        vcs.append(
            VC(
                "safety",
                _close([*view, *safety.view], Implies(eta[q_], safety.body)),
                [SubQuery(conj(eta[q_], neg(safety.body)), "safety")] if safety.body != TRUE else [],
                phase=q_,
            )
        )
    return vcs


# ---------------------------------------------------------------------------
# Checking


@dataclass
class Countermodel:
    pre: Structure
    post: Structure | None
    valuation: dict[Var, str]

    def to_json(self) -> dict:
        d = {
            "pre": self.pre.to_json(),
            "valuation": {v.name: e for v, e in sorted(self.valuation.items())},
        }
        if self.post is not None:
            d["post"] = self.post.to_json()
        return d


@dataclass
class Failure:
    vc: VC
    query: SubQuery
    status: str  # "invalid" | "unknown"
    countermodel: Countermodel | None = None
    reason: str = ""


@dataclass
class Verdict:
    status: str  # valid | invalid | inconclusive
    failures: list[Failure] = field(default_factory=list)
    vcs: list[VC] = field(default_factory=list)
    queries: int = 0
    seconds: float = 0.0

    @property
    def valid(self) -> bool:
        return self.status == "valid"


def countermodel_falsifies(query: SubQuery, cm: Countermodel) -> bool:
    """Independent re-evaluation: the countermodel satisfies the negated VC."""
    if cm.post is not None:
        return evaluate_two_vocab(cm.pre, cm.post, cm.valuation, query.formula)
    return evaluate(cm.pre, cm.valuation, query.formula)


def check(
    ts: TransitionSystem,
    a: PhaseAutomaton,
    safety: SafetyProperty,
    session: SolverSession | None = None,
    *,
    jobs: int = 1,
    stop_at_first: bool = False,
    solver_options: dict | None = None,
) -> Verdict:
    """Validate a candidate automaton: every sub-query must be unsatisfiable."""
    t0 = time.monotonic()
    vcs = gen_vcs(ts, a, safety)
    work = [(vc, sq) for vc in vcs for sq in vc.queries]
    opts = dict(solver_options or {})
    opts.setdefault("minimize", True)
    results: list[tuple[VC, SubQuery, object]] = []
    own: list = []
    if session is not None and jobs <= 1:
        for vc, sq in work:
            results.append((vc, sq, session.check_sat(sq.formula, minimize=True)))
            if stop_at_first and not results[-1][2].unsat:
                break
        nq = len(results)
    else:
        pool = SessionPool(ts.vocab, size=max(1, jobs), **opts)
        own.append(pool)
        try:
            def run(item):
                vc, sq = item
                with pool.session() as s:
                    return vc, sq, s.check_sat(sq.formula)

            if jobs <= 1:
                for item in work:
                    results.append(run(item))
                    if stop_at_first and not results[-1][2].unsat:
                        break
            else:
                with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as ex:
                    results = list(ex.map(run, work))
        finally:
            pool.close()
        nq = len(results)
    failures: list[Failure] = []
    for vc, sq, res in results:
        if res.unsat:
            continue
        if res.sat:
            cm = Countermodel(res.model, res.post, res.valuation)
            failures.append(Failure(vc, sq, "invalid", cm))
        else:
            failures.append(Failure(vc, sq, "unknown", reason=res.reason))
    if any(f.status == "invalid" for f in failures):
        status = "invalid"
    elif failures:
        status = "inconclusive"
    else:
        status = "valid"
    return Verdict(status, failures, vcs, nq, time.monotonic() - t0)


# ---------------------------------------------------------------------------
# CHC export


@dataclass(frozen=True)
class Clause:
    name: str
    kind: str
    body_unknown: str | None  # phase whose unknown appears (unprimed) in the body
    constraint: Formula
    head_unknown: str | None  # phase whose unknown is the head (primed for inductiveness)
    head_primed: bool = False
    head_formula: Formula | None = None


@dataclass
class CHCSystem:
    view: tuple[Var, ...]
    unknowns: list[str]
    clauses: list[Clause]
    text: str = ""


def _unknown_sym(phase: str, primed: bool = False) -> str:
    return q(f"I@{phase}" + ("'" if primed else ""))


def emit_chc(ts: TransitionSystem, s: PhaseStructure, safety: SafetyProperty) -> CHCSystem:
    view = s.view
    tr = global_tr(ts)
    clauses = [Clause("init", "initiation", None, ts.init, s.init_phase)]
    for q_, p in s.edges():
        clauses.append(Clause(f"ind_{q_}_{p}", "inductiveness", q_, s.label(q_, p), p, True))
    for q_ in s.phases:
        cover = disj(*(s.label(q_, p) for p in s.outgoing(q_)))
        clauses.append(Clause(f"query_cover_{q_}", "edge_covering", q_, tr, None, head_formula=cover))
    for q_ in s.phases:
        clauses.append(
            Clause(f"query_safety_{q_}", "safety", q_, TRUE, None, head_formula=safety.body)
        )
    chc = CHCSystem(view, list(s.phases), clauses)
    chc.text = serialize_chc(ts, chc, safety)
    return chc


def serialize_chc(ts: TransitionSystem, chc: CHCSystem, safety: SafetyProperty) -> str:
    bound_vars = tuple(chc.view) + tuple(v for v in safety.view if v not in chc.view)
    bound = frozenset(bound_vars)
    lines = [
        "; Constrained Horn clauses for a phase structure.",
        "; Unknown I@q ranges over the view and the current-state vocabulary;",
        "; I@q' denotes the same unknown evaluated in the post-state vocabulary.",
        "; Clauses named query_* have no unknown in the head.",
        "(set-logic HORN)",
        *declarations(ts.vocab),
    ]
    view_sorts = " ".join(q(v.sort) for v in chc.view)
    for ph in chc.unknowns:
        lines.append(f"(declare-fun {_unknown_sym(ph)} ({view_sorts}) Bool)")
        lines.append(f"(declare-fun {_unknown_sym(ph, True)} ({view_sorts}) Bool)")

    def app(ph: str, primed: bool) -> str:
        sym = _unknown_sym(ph, primed)
        if not chc.view:
            return sym
        return f"({sym} {' '.join(q('%' + v.name) for v in chc.view)})"

    for c in chc.clauses:
        body_parts = []
        if c.body_unknown is not None:
            body_parts.append(app(c.body_unknown, False))
        if c.constraint != TRUE:
            body_parts.append(to_smt(c.constraint, bound))
        if not body_parts:
            body = "true"
        elif len(body_parts) == 1:
            body = body_parts[0]
        else:
            body = f"(and {' '.join(body_parts)})"
        if c.head_unknown is not None:
            head = app(c.head_unknown, c.head_primed)
        else:
            head = to_smt(c.head_formula if c.head_formula is not None else TRUE, bound)
        used = [v for v in bound_vars if v in chc.view or v in (c.head_formula.free_vars if c.head_formula is not None else set())]
        imp = f"(=> {body} {head})"
        if used:
            binders = " ".join(f"({q('%' + v.name)} {q(v.sort)})" for v in used)
            imp = f"(forall ({binders}) {imp})"
        lines.append(f"(assert (! {imp} :named {c.name}))")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"
