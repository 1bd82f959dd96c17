"""Phase-aware PDR over universally quantified characterizations.

Frames map each phase to a set of universal clauses. A lemma carries the
highest frame index at which it is known to hold, so frame ``i`` at phase
``q`` is the set of lemmas at ``q`` with level >= ``i`` (frames shrink as
``i`` grows, which makes monotonicity structural). Frame 0 is the initial
condition at the initial phase and false elsewhere.

Proof obligations are diagrams of concrete states. Blocking asks, for each
incoming edge, whether the previous frame of the source phase can reach the
diagram; a predecessor model becomes a new obligation, and an obligation
that cannot be reached is generalized by greedy literal dropping into a
lemma. Reaching frame 0 yields an abstract counterexample trace.
"""

from __future__ import annotations

import heapq
import itertools
import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .automaton import PhaseAutomaton, PhaseStructure
from .frontend import SafetyProperty
from .logic import (
    FALSE,
    TRUE,
    Const,
    Diagram,
    Eq,
    Formula,
    Not,
    Rel,
    Structure,
    Var,
    Vocabulary,
    canonical_names,
    conj,
    diagram,
    disj,
    evaluate,
    evaluate_two_vocab,
    exists,
    is_substructure,
    neg,
    prime,
    rename_symbols,
    substitute,
    symbols_of,
    to_text,
    top_conjuncts,
)
from .solver import SatResult, SolverSession
from .system import TransitionSystem
from .vcgen import check


class InferError(Exception):
    pass


class InferInternalError(InferError):
    """A result failed independent re-verification (an implementation bug)."""


class _Inconclusive(Exception):
    def __init__(self, what: str, reason: str) -> None:
        super().__init__(f"{what}: {reason}")
        self.what = what
        self.reason = reason


class _OutOfBudget(Exception):
    pass


@dataclass
class InferConfig:
    timeout_ms: int = 60_000
    budget_s: float = 600.0
    seed: int = 0
    max_frames: int = 100
    solver: str | None = None
    transcript: str | None = None
    # Init conjuncts over never-updated symbols hold in every reachable
    # state; seeding them into every frame saves rediscovering them.
    seed_rigid: bool = True
    minimize_models: bool = True
    on_event: Callable[[dict], None] | None = None


@dataclass
class InferStats:
    frames: int = 0
    obligations: int = 0
    lemmas: int = 0
    pushed: int = 0
    queries: int = 0
    seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "frames": self.frames,
            "obligations": self.obligations,
            "lemmas": self.lemmas,
            "pushed": self.pushed,
            "queries": self.queries,
            "seconds": round(self.seconds, 3),
        }


@dataclass
class Lemma:
    ident: int
    phase: str
    clause: Formula
    level: int


@dataclass
class Step:
    """An action instance from an obligation's state to ``post``."""

    action: str
    args: dict[str, str]
    post: Structure


@dataclass
class Violation:
    kind: str  # "safety" | "edge_cover"
    phase: str
    action: str | None = None
    args: dict[str, str] = field(default_factory=dict)
    post: Structure | None = None


@dataclass
class Obligation:
    seq: int
    diagram: Diagram
    struct: Structure
    valuation: dict[Var, str]
    phase: str
    frame: int
    parent: "Obligation | None" = None
    link: Step | None = None
    violation: Violation | None = None

    def __lt__(self, other: "Obligation") -> bool:
        return (self.frame, self.seq) < (other.frame, other.seq)


# ---------------------------------------------------------------------------
# Abstract counterexample traces


@dataclass
class TraceStep:
    phase: str
    concrete: Structure
    abstract: Structure
    action: str | None = None
    args: dict[str, str] = field(default_factory=dict)


@dataclass
class AbstractTrace:
    """Concrete states interleaved with substructure abstractions.

    ``steps[i].abstract`` embeds into ``steps[i].concrete``; the transition
    from ``steps[i].abstract`` to ``steps[i+1].concrete`` is labelled by the
    edge between their phases. The violation is witnessed at the last
    abstract state.
    """

    view: tuple[Var, ...]
    valuation: dict[Var, str]
    steps: list[TraceStep]
    violation: Violation

    @property
    def phases(self) -> list[str]:
        return [s.phase for s in self.steps]

    @property
    def is_concrete(self) -> bool:
        return all(s.abstract == s.concrete for s in self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def to_json(self) -> dict:
        viol: dict[str, Any] = {"kind": self.violation.kind, "phase": self.violation.phase}
        if self.violation.action is not None:
            viol["action"] = self.violation.action
        if self.violation.args:
            viol["args"] = dict(self.violation.args)
        if self.violation.post is not None:
            viol["post"] = self.violation.post.to_json()
        return {
            "format": "phaseforge-trace",
            "version": 1,
            "view": [{"name": v.name, "sort": v.sort} for v in self.view],
            "valuation": {v.name: self.valuation[v] for v in self.view},
            "steps": [
                {
                    "phase": s.phase,
                    "concrete": s.concrete.to_json(),
                    "abstract": s.abstract.to_json(),
                    **({"action": s.action, "args": dict(s.args)} if s.action else {}),
                }
                for s in self.steps
            ],
            "violation": viol,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n"

    @staticmethod
    def from_json(vocab: Vocabulary, data: Mapping) -> "AbstractTrace":
        if data.get("format") != "phaseforge-trace":
            raise InferError("not a trace document")
        view = tuple(Var(d["name"], d["sort"]) for d in data["view"])
        val = {v: data["valuation"][v.name] for v in view}
        steps = [
            TraceStep(
                s["phase"],
                Structure.from_json(vocab, s["concrete"]),
                Structure.from_json(vocab, s["abstract"]),
                s.get("action"),
                dict(s.get("args", {})),
            )
            for s in data["steps"]
        ]
        if not steps:
            raise InferError("trace has no states")
        v = data["violation"]
        post = Structure.from_json(vocab, v["post"]) if "post" in v else None
        viol = Violation(v["kind"], v["phase"], v.get("action"), dict(v.get("args", {})), post)
        return AbstractTrace(view, val, steps, viol)


def _cover(s: PhaseStructure, q: str, action: str) -> Formula:
    return disj(*(e.match for _, e in s.out_entries(q) if e.label.action == action))


def _violation_formula(ts: TransitionSystem, s: PhaseStructure, safety: SafetyProperty, viol: Violation) -> Formula:
    if viol.kind == "safety":
        return neg(safety.body)
    ca = ts.compiled(viol.action)  # type: ignore[arg-type]
    return conj(ca.guard, ca.body, neg(_cover(s, viol.phase, viol.action)))  # type: ignore[arg-type]


def _param_env(ts: TransitionSystem, action: str, args: Mapping[str, str]) -> dict[Var, str]:
    """Map arguments keyed by declared parameter names onto the internal parameters."""
    ca = ts.compiled(action)
    missing = [pub.name for pub in ca.action.params if pub.name not in args]
    if missing:
        raise InferError(f"{action} instance lacks argument(s) {missing}")
    return {p: args[pub.name] for pub, p in zip(ca.action.params, ca.params)}


def _public_args(ts: TransitionSystem, action: str, val: Mapping[Var, str], sigma: Structure) -> dict[str, str]:
    """Arguments keyed by declared parameter names; unconstrained ones get any element."""
    ca = ts.compiled(action)
    return {
        pub.name: val[p] if p in val else sigma.domain[p.sort][0] for pub, p in zip(ca.action.params, ca.params)
    }


def _safety_env(safety: SafetyProperty, view: Sequence[Var], args: Mapping[str, str]) -> dict[Var, str]:
    return {x: args[x.name] for x in safety.view if x not in view and x.name in args}


def validate_trace(
    t: AbstractTrace, ts: TransitionSystem, s: PhaseStructure, safety: SafetyProperty
) -> list[str]:
    """Re-check every trace invariant by finite evaluation; returns the problems found."""
    problems: list[str] = []
    v = t.valuation
    if not t.steps:
        return ["empty trace"]
    if t.steps[0].phase != s.init_phase:
        problems.append("trace does not start in the initial phase")
    if not evaluate(t.steps[0].concrete, {}, ts.init):
        problems.append("first state is not initial")
    for i, st in enumerate(t.steps):
        if st.phase not in s.phases:
            problems.append(f"step {i}: unknown phase {st.phase}")
            continue
        if not is_substructure(st.abstract, st.concrete, v):
            problems.append(f"step {i}: abstract state does not embed into the concrete state")
        if i + 1 < len(t.steps):
            nxt = t.steps[i + 1]
            if st.abstract.domain != nxt.concrete.domain:
                problems.append(f"step {i}: transition changes the domain")
                continue
            if not evaluate_two_vocab(st.abstract, nxt.concrete, v, s.label(st.phase, nxt.phase)):
                problems.append(f"step {i}: transition violates the edge label {st.phase} -> {nxt.phase}")
            if st.action is not None:
                try:
                    ca = ts.compiled(st.action)
                    env = {**v, **_param_env(ts, st.action, st.args)}
                    ok = evaluate_two_vocab(st.abstract, nxt.concrete, env, conj(ca.guard, ca.body))
                except (KeyError, InferError) as e:
                    problems.append(f"step {i}: malformed action instance: {e}")
                    continue
                if not ok:
                    problems.append(f"step {i}: recorded action instance does not produce the next state")
    last = t.steps[-1]
    viol = t.violation
    if viol.phase != last.phase:
        problems.append("violation phase differs from the last phase")
    try:
        f = _violation_formula(ts, s, safety, viol)
        if viol.kind == "safety":
            env = {**v, **_safety_env(safety, s.view, viol.args)}
            ok = evaluate(last.abstract, env, exists(sorted(f.free_vars - set(env)), f))
        else:
            if viol.post is None:
                return problems + ["edge-cover violation without a post-state"]
            env = {**v, **_param_env(ts, viol.action, viol.args)}  # type: ignore[arg-type]
            ok = evaluate_two_vocab(last.abstract, viol.post, env, f)
        if not ok:
            problems.append(f"{viol.kind} violation is not witnessed at the last state")
    except Exception as e:  # malformed trace documents
        problems.append(f"violation cannot be evaluated: {e}")
    return problems


# ---------------------------------------------------------------------------
# Results


@dataclass
class InferResult:
    status: str  # success | counterexample | timeout | inconclusive
    automaton: PhaseAutomaton | None = None
    trace: AbstractTrace | None = None
    stats: InferStats = field(default_factory=InferStats)
    frames: dict = field(default_factory=dict)
    reason: str = ""
    lemmas: list[Lemma] = field(default_factory=list)


def rigid_facts(ts: TransitionSystem) -> list[Formula]:
    """Init conjuncts mentioning only relations no action updates."""
    updated = {u.relation for a in ts.actions for u in a.updates}
    out = []
    for c in top_conjuncts(ts.init):
        if c.free_vars:
            continue
        if all(name not in updated for name, _ in symbols_of(c)):
            out.append(c)
    return out


def _literal_key(lit: Formula, index: Mapping[Var, int]) -> tuple:
    atom = lit.body if isinstance(lit, Not) else lit
    if isinstance(atom, Rel):
        return (0, atom.name, tuple(index.get(a, -1) for a in atom.args if isinstance(a, Var)))
    if isinstance(atom, Eq):
        terms = (atom.left, atom.right)
        return (1, 0 if isinstance(lit, Not) else 1, tuple(index.get(t, -1) for t in terms if isinstance(t, Var)), str(atom))
    return (2, str(lit))


def _normalize(d: Diagram) -> Diagram:
    """Fold identities with view variables or constants into the other
    literals, then rename the remaining variables by sort in order of use."""
    sub: dict[Var, Any] = {}
    rest: list[Formula] = []
    for lit in d.literals:
        if (
            isinstance(lit, Eq)
            and isinstance(lit.left, Var)
            and lit.left in d.vars
            and lit.left not in sub
            and (isinstance(lit.right, Const) or lit.right in d.view)
        ):
            sub[lit.left] = lit.right
        else:
            rest.append(lit)
    if sub:
        lits = []
        for lit in rest:
            lit = substitute(lit, sub)
            if isinstance(lit, Not) and isinstance(lit.body, Eq) and lit.body.left == lit.body.right:
                return d  # contradictory identities: keep the plain diagram
            lits.append(lit)
        d = d.sub(lits)
    counters: dict[str, int] = {}
    ren: dict[Var, Var] = {}
    for lit in d.literals:
        for x in sorted(lit.free_vars - set(d.view), key=d.vars.index):
            if x not in ren:
                k = counters.get(x.sort, 0)
                counters[x.sort] = k + 1
                ren[x] = Var(f"{x.sort[:1].upper()}{x.sort[1:]}{k}", x.sort)
    taken = {x.name for x in d.view}
    if any(y.name in taken for y in ren.values()):
        return d
    lits = tuple(substitute(lit, ren) for lit in d.literals)
    order = sorted(ren, key=d.vars.index)
    return Diagram(tuple(ren[x] for x in order), tuple(d.elements[d.vars.index(x)] for x in order), d.view, lits)


class PhasePDR:
    """One inference run; see ``infer`` for the entry point."""

    def __init__(
        self,
        ts: TransitionSystem,
        structure: PhaseStructure,
        safety: SafetyProperty,
        config: InferConfig | None = None,
        session: SolverSession | None = None,
    ) -> None:
        self.ts = ts
        self.s = structure
        self.safety = safety
        self.cfg = config or InferConfig()
        self.view = structure.view
        self._own_session = session is None
        self.session = session or SolverSession(
            ts.vocab,
            binary=self.cfg.solver,
            timeout_ms=self.cfg.timeout_ms,
            seed=self.cfg.seed,
            transcript=self.cfg.transcript,
        )
        self.rigid = rigid_facts(ts) if self.cfg.seed_rigid else []
        self.lemmas: list[Lemma] = []
        self.N = 0
        self.stats = InferStats()
        self._seq = itertools.count()
        self._t0 = time.monotonic()
        self._q0 = self.session.stats.queries
        self._labels = {e: structure.label(*e) for e in structure.edges()}

    # bookkeeping ---------------------------------------------------------------

    def _event(self, event: str, **data: Any) -> None:
        if self.cfg.on_event is not None:
            self.cfg.on_event({"event": event, "t": round(time.monotonic() - self._t0, 3), **data})

    def _check_budget(self) -> None:
        if time.monotonic() - self._t0 > self.cfg.budget_s:
            raise _OutOfBudget()

    def _query(self, f: Formula, what: str, model: bool = False) -> SatResult:
        self._check_budget()
        res = self.session.check_sat(f, minimize=model and self.cfg.minimize_models)
        if res.unknown:
            raise _Inconclusive(what, res.reason)
        return res

    def frame(self, q: str, i: int) -> Formula:
        if i == 0:
            return self.ts.init if q == self.s.init_phase else FALSE
        return conj(*self.rigid, *(l.clause for l in self.lemmas if l.phase == q and l.level >= i))

    def frames(self) -> dict[int, dict[str, list[Formula]]]:
        """Lemma sets per frame and phase (frame 0 omitted)."""
        return {
            i: {q: [l.clause for l in self.lemmas if l.phase == q and l.level >= i] for q in self.s.phases}
            for i in range(1, self.N + 1)
        }

    def frame_dump(self) -> dict:
        return {
            "frontier": self.N,
            "lemmas": [
                {"phase": l.phase, "level": l.level, "clause": to_text(l.clause)} for l in self.lemmas
            ],
        }

    def _canon(self, res: SatResult) -> tuple[Structure, Structure | None, dict[Var, str]]:
        ren = canonical_names(res.model, res.valuation, self.view)  # type: ignore[arg-type]
        pre = res.model.rename(ren)  # type: ignore[union-attr]
        post = res.post.rename(ren) if res.post is not None else None
        val = {k: ren[e] for k, e in res.valuation.items()}
        # View variables absent from the query are unconstrained; any element will do.
        for x in self.view:
            val.setdefault(x, pre.domain[x.sort][0])
        return pre, post, val

    def _view_val(self, val: Mapping[Var, str]) -> dict[Var, str]:
        return {x: val[x] for x in self.view}

    # violations at the frontier -----------------------------------------------

    def _find_violation(self, i: int) -> Obligation | None:
        phases = [self.s.init_phase] if i == 0 else list(self.s.phases)
        for q in phases:
            fr = self.frame(q, i)
            if fr == FALSE:
                continue
            if self.safety.body != TRUE:
                res = self._query(conj(fr, neg(self.safety.body)), f"safety at {q}", model=True)
                if res.sat:
                    pre, _, val = self._canon(res)
                    extra = {x.name: val[x] for x in self.safety.view if x not in self.view and x in val}
                    return self._root(pre, val, q, i, Violation("safety", q, None, extra))
            for act in self.ts.action_names():
                ca = self.ts.compiled(act)
                f = conj(fr, ca.guard, ca.body, neg(_cover(self.s, q, act)))
                res = self._query(f, f"edge covering of {act} at {q}", model=True)
                if res.sat:
                    pre, post, val = self._canon(res)
                    args = _public_args(self.ts, act, val, pre)
                    return self._root(pre, val, q, i, Violation("edge_cover", q, act, args, post))
        return None

    def _root(self, pre: Structure, val: dict[Var, str], q: str, i: int, viol: Violation) -> Obligation:
        v = self._view_val(val)
        ob = Obligation(next(self._seq), diagram(pre, v, self.view), pre, v, q, i, violation=viol)
        self._event("violation", kind=viol.kind, phase=q, action=viol.action, frame=i)
        return ob

    # blocking -------------------------------------------------------------------

    def _blocked(self, ob: Obligation) -> bool:
        """Some lemma at the obligation's frame already excludes its state."""
        v = ob.valuation
        for l in self.lemmas:
            if l.phase == ob.phase and l.level >= ob.frame and not evaluate(ob.struct, v, l.clause):
                return True
        return False

    def _pred_query(self, qsrc: str, q: str, i: int, d: Formula, self_clause: Formula | None) -> Formula:
        fr = self.frame(qsrc, i)
        parts = [fr, self._labels[(qsrc, q)], prime(d)]
        if self_clause is not None and qsrc == q:
            parts.insert(1, self_clause)
        return conj(*parts)

    def _recover_step(self, qsrc: str, q: str, pre: Structure, post: Structure, v: dict[Var, str]) -> Step:
        return _recover(self.ts, self.s, qsrc, q, pre, post, v)

    def _block(self, root: Obligation) -> AbstractTrace | None:
        heap: list[Obligation] = [root]
        while heap:
            self._check_budget()
            ob = heapq.heappop(heap)
            self.stats.obligations += 1
            if self._blocked(ob):
                continue
            d = ob.diagram.formula
            q = ob.phase
            if q == self.s.init_phase:
                res = self._query(conj(self.ts.init, d), f"initial overlap at {q}", model=True)
                if res.sat:
                    s0, _, _ = self._canon(res)
                    return self._trace(ob, s0, None)
            found = None
            for qsrc in self.s.incoming(q):
                if self.frame(qsrc, ob.frame - 1) == FALSE:
                    continue
                f = self._pred_query(qsrc, q, ob.frame - 1, d, ob.diagram.negation())
                res = self._query(f, f"predecessor of obligation at {q} via {qsrc}", model=True)
                if res.sat:
                    found = (qsrc, res)
                    break
            if found is not None:
                qsrc, res = found
                pre, post, val = self._canon(res)
                v = self._view_val(val)
                step = self._recover_step(qsrc, q, pre, post, v)  # type: ignore[arg-type]
                if ob.frame - 1 == 0:
                    return self._trace(ob, pre, step)
                child = Obligation(
                    next(self._seq), diagram(pre, v, self.view), pre, v, qsrc, ob.frame - 1, ob, step
                )
                self._event("obligation", phase=qsrc, frame=child.frame, size=pre.size())
                heapq.heappush(heap, ob)
                heapq.heappush(heap, child)
                continue
            self._generalize(ob)
            if ob.frame < self.N:
                heapq.heappush(
                    heap,
                    Obligation(
                        next(self._seq), ob.diagram, ob.struct, ob.valuation, q, ob.frame + 1,
                        ob.parent, ob.link, ob.violation,
                    ),
                )
        return None

    def _blockable(self, dd: Diagram, q: str, i: int) -> bool:
        f = dd.formula
        if q == self.s.init_phase:
            if self._query(conj(self.ts.init, f), "initiation of a candidate lemma").sat:
                return False
        neg_clause = dd.negation()
        for qsrc in self.s.incoming(q):
            if self.frame(qsrc, i - 1) == FALSE:
                continue
            res = self._query(self._pred_query(qsrc, q, i - 1, f, neg_clause), "relative inductiveness of a candidate lemma")
            if res.sat:
                return False
        return True

    def _generalize(self, ob: Obligation) -> Lemma:
        d = ob.diagram
        index = {x: k for k, x in enumerate(d.vars)}
        order = sorted(range(len(d.literals)), key=lambda k: (_literal_key(d.literals[k], index), k))
        keep = list(range(len(d.literals)))
        for k in order:
            cand = [j for j in keep if j != k]
            dd = d.sub([d.literals[j] for j in cand])
            if self._blockable(dd, ob.phase, ob.frame):
                keep = cand
        final = _normalize(d.sub([d.literals[j] for j in keep]))
        clause = final.negation()
        for l in self.lemmas:
            if l.phase == ob.phase and l.clause == clause:
                l.level = max(l.level, ob.frame)
                return l
        lemma = Lemma(len(self.lemmas), ob.phase, clause, ob.frame)
        self.lemmas.append(lemma)
        self.stats.lemmas += 1
        self._event("lemma", phase=ob.phase, level=ob.frame, clause=to_text(clause))
        return lemma

    # frames ---------------------------------------------------------------------

    def _push(self) -> None:
        for i in range(1, self.N):
            for l in list(self.lemmas):
                if l.level != i:
                    continue
                ok = True
                for qsrc in self.s.incoming(l.phase):
                    fr = self.frame(qsrc, i)
                    if fr == FALSE:
                        continue
                    f = conj(fr, self._labels[(qsrc, l.phase)], neg(prime(l.clause)))
                    if self._query(f, f"pushing a lemma at {l.phase}").sat:
                        ok = False
                        break
                if ok:
                    l.level = i + 1
                    self.stats.pushed += 1

    def _converged(self) -> int | None:
        levels = {l.level for l in self.lemmas}
        for i in range(1, self.N):
            if i not in levels:
                return i
        return None

    def _trace(self, top: Obligation, s0: Structure, first: Step | None) -> AbstractTrace:
        chain: list[Obligation] = []
        o: Obligation | None = top
        while o is not None:
            chain.append(o)
            o = o.parent
        steps: list[TraceStep] = []
        if first is not None:
            steps.append(TraceStep(self.s.init_phase, s0, s0, first.action, first.args))
            prev = first.post
        else:
            prev = s0
        for ob in chain:
            link = ob.link
            steps.append(
                TraceStep(ob.phase, prev, ob.struct, link.action if link else None, link.args if link else {})
            )
            if link is not None:
                prev = link.post
        root = chain[-1]
        assert root.violation is not None
        t = AbstractTrace(self.view, dict(root.valuation), steps, root.violation)
        problems = validate_trace(t, self.ts, self.s, self.safety)
        if problems:
            raise InferInternalError("extracted trace failed validation: " + "; ".join(problems))
        return t

    # main loop ------------------------------------------------------------------

    def run(self) -> InferResult:
        try:
            return self._run()
        except _OutOfBudget:
            return self._finish("timeout", reason=f"budget of {self.cfg.budget_s} s exhausted")
        except _Inconclusive as e:
            return self._finish("inconclusive", reason=str(e))
        finally:
            if self._own_session:
                self.session.close()

    def _finish(self, status: str, **kw: Any) -> InferResult:
        self.stats.frames = self.N
        self.stats.queries = self.session.stats.queries - self._q0
        self.stats.seconds = time.monotonic() - self._t0
        self._event("done", status=status, **self.stats.to_json())
        return InferResult(status, stats=self.stats, frames=self.frame_dump(), lemmas=list(self.lemmas), **kw)

    def _run(self) -> InferResult:
        self._event("start", phases=list(self.s.phases), rigid=len(self.rigid))
        while True:
            ob = self._find_violation(self.N)
            if ob is not None:
                trace = self._block_root(ob)
                if trace is not None:
                    self._event("counterexample", length=len(trace))
                    return self._finish("counterexample", trace=trace)
                continue
            self.N += 1
            self._event("frame", frontier=self.N, lemmas=len(self.lemmas))
            if self.N == 1:
                continue
            self._push()
            i = self._converged()
            if i is not None:
                eta = {q: self.frame(q, i) for q in self.s.phases}
                a = PhaseAutomaton(self.s, eta)
                verdict = check(self.ts, a, self.safety, self.session)
                if not verdict.valid:
                    names = ", ".join(f.vc.name for f in verdict.failures)
                    raise InferInternalError(f"converged frame {i} fails verification: {names}")
                self._event("converged", frame=i)
                return self._finish("success", automaton=a)
            if self.N > self.cfg.max_frames:
                return self._finish("timeout", reason=f"no convergence within {self.cfg.max_frames} frames")

    def _block_root(self, root: Obligation) -> AbstractTrace | None:
        if root.frame == 0:
            return self._trace(root, root.struct, None)
        return self._block(root)


def infer(
    ts: TransitionSystem,
    structure: PhaseStructure,
    safety: SafetyProperty,
    config: InferConfig | None = None,
    session: SolverSession | None = None,
) -> InferResult:
    """Infer universal characterizations for ``structure`` or return an abstract trace."""
    return PhasePDR(ts, structure, safety, config, session).run()


# ---------------------------------------------------------------------------
# Bounded model checking along an abstract trace


@dataclass
class Diagnosis:
    status: str  # concrete-counterexample | artifact-within-bound | inconclusive
    bound: int
    trace_length: int
    valuation: dict[Var, str] = field(default_factory=dict)
    states: list[Structure] = field(default_factory=list)
    actions: list[tuple[str, dict[str, str]]] = field(default_factory=list)
    violation: Violation | None = None
    reason: str = ""

    @property
    def concrete(self) -> bool:
        return self.status == "concrete-counterexample"

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "format": "phaseforge-diagnosis",
            "version": 1,
            "status": self.status,
            "bound": self.bound,
            "trace_length": self.trace_length,
        }
        if self.reason:
            out["reason"] = self.reason
        if self.concrete:
            viol: dict[str, Any] = {}
            if self.violation is not None:
                viol = {"kind": self.violation.kind, "phase": self.violation.phase}
                if self.violation.action is not None:
                    viol["action"] = self.violation.action
                if self.violation.args:
                    viol["args"] = dict(self.violation.args)
                if self.violation.post is not None:
                    viol["post"] = self.violation.post.to_json()
            out["witness"] = {
                "valuation": {v.name: e for v, e in sorted(self.valuation.items())},
                "states": [s.to_json() for s in self.states],
                "actions": [{"action": a, "args": dict(args)} for a, args in self.actions],
                "violation": viol,
            }
        return out


def _copy_name(name: str, j: int) -> str:
    return f"{name}@{j}"


def _unrolled_vocab(vocab: Vocabulary, copies: int) -> Vocabulary:
    return Vocabulary(
        vocab.sorts,
        tuple((_copy_name(r, j), a) for j in range(copies) for r, a in vocab.relation_decls),
        tuple((_copy_name(c, j), s) for j in range(copies) for c, s in vocab.constant_decls),
    )


def _at(f: Formula, vocab: Vocabulary, j: int) -> Formula:
    """Rename unprimed symbols to copy j and primed symbols to copy j+1."""
    mapping: dict[tuple[str, bool], str] = {}
    for name in vocab.symbols():
        mapping[(name, False)] = _copy_name(name, j)
        mapping[(name, True)] = _copy_name(name, j + 1)
    return rename_symbols(f, mapping)


def _project(big: Structure, vocab: Vocabulary, j: int) -> Structure:
    return Structure(
        vocab,
        big.domain,
        {r: big.rels[_copy_name(r, j)] for r in vocab.relations},
        {c: big.consts[_copy_name(c, j)] for c in vocab.constants},
    )


def check_trace_matches(t: AbstractTrace, ts: TransitionSystem, s: PhaseStructure) -> None:
    """Reject traces that were not produced for this model and structure."""
    if tuple(t.view) != tuple(s.view):
        raise InferError("trace view variables differ from the phase structure's view")
    for i, st in enumerate(t.steps):
        if st.phase not in s.phases:
            raise InferError(f"trace step {i} uses unknown phase {st.phase!r}")
        if st.concrete.vocab != ts.vocab or st.abstract.vocab != ts.vocab:
            raise InferError(f"trace step {i} is over a different vocabulary")
        if i + 1 < len(t.steps) and (st.phase, t.steps[i + 1].phase) not in s.edges():
            raise InferError(f"trace step {i} follows a missing edge {st.phase} -> {t.steps[i + 1].phase}")
    v = t.violation
    if v.kind not in ("safety", "edge_cover"):
        raise InferError(f"unknown violation kind {v.kind!r}")
    if v.kind == "edge_cover" and (v.action is None or v.action not in ts.action_names()):
        raise InferError("edge-cover violation names an unknown action")


def diagnose(
    t: AbstractTrace,
    ts: TransitionSystem,
    s: PhaseStructure,
    safety: SafetyProperty,
    bound: int,
    *,
    session_factory: Callable[[Vocabulary], SolverSession] | None = None,
    solver: str | None = None,
    timeout_ms: int = 60_000,
    seed: int = 0,
) -> Diagnosis:
    """Search for a concrete execution that follows the trace's phase skeleton.

    The unrolling has exactly one state per trace state (plus the post-state
    of an uncovered transition); ``bound`` caps the number of states and must
    cover the trace.
    """
    n = len(t.steps)
    if bound < 1:
        raise InferError("BMC bound must be positive")
    if bound < n:
        raise InferError(f"BMC bound {bound} is shorter than the trace ({n} states)")
    check_trace_matches(t, ts, s)
    if t.is_concrete and not validate_trace(t, ts, s, safety):
        return Diagnosis(
            "concrete-counterexample",
            bound,
            n,
            dict(t.valuation),
            [st.concrete for st in t.steps],
            [(st.action, dict(st.args)) for st in t.steps[:-1] if st.action is not None],
            t.violation,
        )
    edge_cover = t.violation.kind == "edge_cover"
    copies = n + (1 if edge_cover else 0)
    vocab = ts.vocab
    big = _unrolled_vocab(vocab, copies)
    parts = [_at(ts.init, vocab, 0)]
    for j in range(n - 1):
        parts.append(_at(s.label(t.steps[j].phase, t.steps[j + 1].phase), vocab, j))
    last = t.steps[-1].phase
    viol = t.violation
    if edge_cover:
        ca = ts.compiled(viol.action)  # type: ignore[arg-type]
        parts.append(_at(conj(ca.guard, ca.body, neg(_cover(s, last, viol.action))), vocab, n - 1))  # type: ignore[arg-type]
    else:
        parts.append(_at(neg(safety.body), vocab, n - 1))
    f = conj(*parts)
    sess = (
        session_factory(big)
        if session_factory is not None
        else SolverSession(big, binary=solver, timeout_ms=timeout_ms, seed=seed)
    )
    try:
        res = sess.check_sat(f, minimize=True)
    finally:
        if session_factory is None:
            sess.close()
    if res.unknown:
        return Diagnosis("inconclusive", bound, n, reason=res.reason)
    if res.unsat:
        return Diagnosis("artifact-within-bound", bound, n)
    ren = canonical_names(res.model, res.valuation, s.view)  # type: ignore[arg-type]
    model = res.model.rename(ren)  # type: ignore[union-attr]
    val = {k: ren[e] for k, e in res.valuation.items()}
    states = [_project(model, vocab, j) for j in range(n)]
    v = {x: val[x] for x in s.view if x in val}
    for x in s.view:
        v.setdefault(x, states[0].domain[x.sort][0])
    actions: list[tuple[str, dict[str, str]]] = []
    for j in range(n - 1):
        step = _recover(ts, s, t.steps[j].phase, t.steps[j + 1].phase, states[j], states[j + 1], v)
        actions.append((step.action, step.args))
    if edge_cover:
        ca = ts.compiled(viol.action)  # type: ignore[arg-type]
        args = _public_args(ts, viol.action, val, states[-1])  # type: ignore[arg-type]
        out_viol = Violation("edge_cover", last, viol.action, args, _project(model, vocab, n))
    else:
        extra = {x.name: val[x] for x in safety.view if x not in s.view and x in val}
        out_viol = Violation("safety", last, None, extra)
    d = Diagnosis("concrete-counterexample", bound, n, v, states, actions, out_viol)
    problems = validate_witness(d, ts, s, safety, [st.phase for st in t.steps])
    if problems:
        raise InferInternalError("BMC witness failed validation: " + "; ".join(problems))
    return d


def _recover(
    ts: TransitionSystem, s: PhaseStructure, q: str, p: str, pre: Structure, post: Structure, v: dict[Var, str]
) -> Step:
    excl = s.excluded(q, p)
    for e in s.entries_of(q, p):
        f = conj(e.formula, *excl)
        for combo in itertools.product(*(pre.domain[x.sort] for x in e.params)):
            env = {**v, **dict(zip(e.params, combo))}
            if evaluate_two_vocab(pre, post, env, f):
                return Step(e.label.action, _public_args(ts, e.label.action, dict(zip(e.params, combo)), pre), post)
    raise InferInternalError(f"no edge entry of {q} -> {p} explains the transition")


def validate_witness(
    d: Diagnosis, ts: TransitionSystem, s: PhaseStructure, safety: SafetyProperty, phases: Sequence[str]
) -> list[str]:
    """Re-check a concrete witness by finite evaluation."""
    problems = []
    if not d.states or not evaluate(d.states[0], {}, ts.init):
        problems.append("first state is not initial")
    for j, (act, args) in enumerate(d.actions):
        pre, post = d.states[j], d.states[j + 1]
        if not evaluate_two_vocab(pre, post, d.valuation, s.label(phases[j], phases[j + 1])):
            problems.append(f"step {j} violates the edge label")
        ca = ts.compiled(act)
        env = {**d.valuation, **_param_env(ts, act, args)}
        if not evaluate_two_vocab(pre, post, env, conj(ca.guard, ca.body)):
            problems.append(f"step {j} is not an instance of {act}")
    viol = d.violation
    if viol is not None and d.states:
        f = _violation_formula(ts, s, safety, viol)
        if viol.kind == "safety":
            env = {**d.valuation, **_safety_env(safety, s.view, viol.args)}
            ok = evaluate(d.states[-1], env, exists(sorted(f.free_vars - set(env)), f))
        else:
            env = {**d.valuation, **_param_env(ts, viol.action, viol.args)}  # type: ignore[arg-type]
            ok = viol.post is not None and evaluate_two_vocab(d.states[-1], viol.post, env, f)
        if not ok:
            problems.append("violation does not hold at the last state")
    return problems
