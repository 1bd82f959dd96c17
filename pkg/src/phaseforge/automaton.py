"""Phase structures and phase automata.

A phase structure is the user's guidance: phases, an initial phase, view
variables, and edges labelled by action patterns with optional guards.
Adding a characterization per phase makes it a phase automaton.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .logic import (
    FALSE,
    TRUE,
    Eq,
    Exists,
    Forall,
    Formula,
    LogicError,
    Or,
    Structure,
    Valuation,
    Var,
    alternation_witness,
    check_formula,
    conj,
    disj,
    evaluate,
    evaluate_two_vocab,
    neg,
    substitute,
    to_text,
)
from .system import TransitionSystem, global_tr


class AutomatonError(LogicError):
    pass


@dataclass(frozen=True)
class EdgeLabel:
    """An action pattern: each argument is a view variable, a local name, or None (``*``)."""

    action: str
    args: tuple[str | None, ...]
    guard: Formula = TRUE

    def __str__(self) -> str:
        pat = ", ".join("*" if a is None else a for a in self.args)
        g = "" if self.guard == TRUE else f" where {to_text(self.guard)}"
        return f"{self.action}({pat}){g}"


@dataclass(frozen=True)
class CompiledEntry:
    """One edge entry with the action parameters left free.

    ``match`` is the pattern and guard over view variables and the action's
    (internal) parameters; ``formula`` adds the action's own guard and effect.
    """

    label: EdgeLabel
    params: tuple[Var, ...]
    match: Formula
    formula: Formula

    @property
    def closed(self) -> Formula:
        vs = tuple(p for p in self.params if p in self.formula.free_vars)
        return Exists(vs, self.formula) if vs else self.formula


def compile_entry(ts: TransitionSystem, view: Sequence[Var], label: EdgeLabel) -> CompiledEntry:
    try:
        ca = ts.compiled(label.action)
    except KeyError:
        raise AutomatonError(f"edge uses unknown action {label.action!r}") from None
    if len(label.args) != len(ca.params):
        raise AutomatonError(
            f"action {label.action!r} takes {len(ca.params)} argument(s), edge gives {len(label.args)}"
        )
    vmap = {v.name: v for v in view}
    eqs: list[Formula] = []
    sub: dict[Var, Var] = {}
    for a, p in zip(label.args, ca.params):
        if a is None:
            continue
        if a in vmap:
            if vmap[a].sort != p.sort:
                raise AutomatonError(f"view variable {a!r} bound to parameter of sort {p.sort}")
            eqs.append(Eq(p, vmap[a]))
            continue
        local = Var(a, p.sort)
        if local in sub:
            eqs.append(Eq(p, sub[local]))
        else:
            sub[local] = p
    allowed = set(view) | set(sub)
    extra = label.guard.free_vars - allowed
    if extra:
        raise AutomatonError(
            f"guard of {label} mentions variable(s) outside view and pattern: "
            f"{sorted(v.name for v in extra)}"
        )
    w = alternation_witness(label.guard)
    if w is not None:
        raise AutomatonError(f"guard of {label} is not alternation-free: {to_text(w)}")
    check_formula(label.guard, ts.vocab)
    match = conj(*eqs, substitute(label.guard, sub))
    return CompiledEntry(label, ca.params, match, conj(match, ca.guard, ca.body))


class PhaseStructure:
    """Phases, initial phase, view, and labelled edges (absent label = false)."""

    def __init__(
        self,
        ts: TransitionSystem,
        phases: Sequence[str],
        init_phase: str,
        view: Sequence[Var],
        entries: Sequence[tuple[str, str, EdgeLabel]],
        exclusions: Mapping[tuple[str, str], Sequence[Formula]] | None = None,
    ) -> None:
        self.ts = ts
        self.phases = tuple(phases)
        if len(set(self.phases)) != len(self.phases):
            raise AutomatonError("duplicate phase names")
        if init_phase not in self.phases:
            raise AutomatonError(f"initial phase {init_phase!r} is not declared")
        self.init_phase = init_phase
        self.view = tuple(view)
        names = [v.name for v in self.view]
        if len(set(names)) != len(names):
            raise AutomatonError("duplicate view variables")
        clash = set(names) & ts.vocab.symbols()
        if clash:
            raise AutomatonError(f"view variable(s) {sorted(clash)} clash with vocabulary symbols")
        self.entries = tuple(entries)
        self._compiled: dict[tuple[str, str], list[CompiledEntry]] = {}
        for q, p, lab in self.entries:
            if q not in self.phases or p not in self.phases:
                raise AutomatonError(f"edge {q} -> {p} mentions an undeclared phase")
            self._compiled.setdefault((q, p), []).append(compile_entry(ts, self.view, lab))
        self.exclusions = {k: tuple(v) for k, v in (exclusions or {}).items() if v}
        self._index = {q: i for i, q in enumerate(self.phases)}

    @staticmethod
    def build(ts, phases, init_phase, view, entries) -> "PhaseStructure":
        return PhaseStructure(ts, phases, init_phase, view, entries)

    # queries -----------------------------------------------------------------

    def edges(self) -> list[tuple[str, str]]:
        """Edges with a non-empty label, ordered by (source, target) declaration order."""
        return sorted(self._compiled, key=lambda e: (self._index[e[0]], self._index[e[1]]))

    def entries_of(self, q: str, p: str) -> list[CompiledEntry]:
        return list(self._compiled.get((q, p), []))

    def excluded(self, q: str, p: str) -> tuple[Formula, ...]:
        return self.exclusions.get((q, p), ())

    def label(self, q: str, p: str) -> Formula:
        base = disj(*(e.closed for e in self._compiled.get((q, p), [])))
        if base == FALSE:
            return FALSE
        return conj(base, *self.excluded(q, p))

    def outgoing(self, q: str) -> list[str]:
        return [p for (a, p) in self.edges() if a == q]

    def incoming(self, p: str) -> list[str]:
        return [q for (q, b) in self.edges() if b == p]

    def out_entries(self, q: str) -> list[tuple[str, CompiledEntry]]:
        return [(p, e) for p in self.outgoing(q) for e in self._compiled[(q, p)]]

    def disabled_actions(self, q: str) -> list[str]:
        used = {e.label.action for _, e in self.out_entries(q)}
        return [a for a in self.ts.action_names() if a not in used]

    def with_entries(self, entries: Sequence[tuple[str, str, EdgeLabel]]) -> "PhaseStructure":
        return PhaseStructure(self.ts, self.phases, self.init_phase, self.view, entries)

    def describe(self) -> str:
        lines = [f"phases: {', '.join(self.phases)} (initial {self.init_phase})"]
        if self.view:
            lines.append("view: " + ", ".join(f"{v.name}: {v.sort}" for v in self.view))
        for q, p, lab in self.entries:
            lines.append(f"  {q} -> {p} on {lab}")
        for q in self.phases:
            dis = self.disabled_actions(q)
            if dis:
                lines.append(f"  disabled at {q}: {', '.join(dis)}")
        return "\n".join(lines)


@dataclass
class PhaseAutomaton:
    structure: PhaseStructure
    eta: dict[str, Formula] = field(default_factory=dict)

    def __post_init__(self) -> None:
        s = self.structure
        if set(self.eta) != set(s.phases):
            raise AutomatonError("characterizations must be given for exactly the declared phases")
        for q, f in self.eta.items():
            if f.has_primed:
                raise AutomatonError(f"characterization of {q} mentions primed symbols")
            extra = f.free_vars - set(s.view)
            if extra:
                raise AutomatonError(
                    f"characterization of {q} has free variables outside the view: "
                    f"{sorted(v.name for v in extra)}"
                )
            check_formula(f, s.ts.vocab, allow_primed=False)


# ---------------------------------------------------------------------------
# Operations


def edges(s: PhaseStructure) -> set[tuple[str, str]]:
    return set(s.edges())


def is_deterministic(s: PhaseStructure, session) -> tuple[bool, tuple | None]:
    """Whether every pair of distinct outgoing labels is jointly unsatisfiable.

    Returns (False, (q, p1, p2, sat_result)) with a witnessing transition otherwise.
    """
    for q in s.phases:
        outs = s.outgoing(q)
        for i, p1 in enumerate(outs):
            for p2 in outs[i + 1 :]:
                res = session.check_sat(conj(s.label(q, p1), s.label(q, p2)))
                if res.status == "unknown":
                    raise AutomatonError(f"solver could not decide determinism at {q}: {res.reason}")
                if res.sat:
                    return False, (q, p1, p2, res)
    return True, None


def determinize(a: PhaseAutomaton, order: Sequence[str] | None = None) -> PhaseAutomaton:
    """Give each edge priority over later targets: d'(q,p) = d(q,p) & ~d(q,p') for p' < p."""
    s = a.structure
    order = list(order) if order is not None else list(s.phases)
    if sorted(order) != sorted(s.phases):
        raise AutomatonError("determinization order must list every phase exactly once")
    rank = {q: i for i, q in enumerate(order)}
    excl: dict[tuple[str, str], list[Formula]] = {}
    for q in s.phases:
        outs = sorted(s.outgoing(q), key=rank.__getitem__)
        for j, p in enumerate(outs):
            excl[(q, p)] = [neg(s.label(q, earlier)) for earlier in outs[:j]]
    ns = PhaseStructure(s.ts, s.phases, s.init_phase, s.view, s.entries, excl)
    return PhaseAutomaton(ns, dict(a.eta))


def trace_member(
    a: PhaseAutomaton, states: Sequence[Structure], v: Valuation
) -> tuple[bool, list[str] | None]:
    """Forward subset search for a phase trace accepting ``states`` under ``v``."""
    s = a.structure
    if not states:
        raise AutomatonError("empty state sequence")
    env = {x: v[x] for x in s.view}
    if not evaluate(states[0], env, a.eta[s.init_phase]):
        return False, None
    layers: list[dict[str, str | None]] = [{s.init_phase: None}]
    edge_labels = {e: s.label(*e) for e in s.edges()}
    eta_cache: dict[tuple[int, str], bool] = {}
    for i in range(1, len(states)):
        pre, post = states[i - 1], states[i]
        nxt: dict[str, str | None] = {}
        for q in layers[-1]:
            for p in s.outgoing(q):
                if p in nxt:
                    continue
                key = (i, p)
                if key not in eta_cache:
                    eta_cache[key] = evaluate(post, env, a.eta[p])
                if not eta_cache[key]:
                    continue
                if evaluate_two_vocab(pre, post, env, edge_labels[(q, p)]):
                    nxt[p] = q
        if not nxt:
            return False, None
        layers.append(nxt)
    # Reconstruct one phase trace backwards.
    q = next(iter(layers[-1]))
    path = [q]
    for i in range(len(layers) - 1, 0, -1):
        q = layers[i][q]  # type: ignore[assignment]
        path.append(q)
    return True, list(reversed(path))


def flatten(a: PhaseAutomaton) -> Formula:
    """forall V. disjunction of the characterizations (kept syntactically)."""
    s = a.structure
    parts = tuple(a.eta[q] for q in s.phases)
    body = parts[0] if len(parts) == 1 else Or(parts)
    return Forall(s.view, body) if s.view and body.free_vars else body


def wrap_invariant(inv: Formula, ts: TransitionSystem, phase: str = "inv") -> PhaseAutomaton:
    """Single-phase automaton whose self-loop is the whole transition relation."""
    if inv.free_vars:
        raise AutomatonError("invariant must be closed")
    global_tr(ts)  # rejects systems without actions
    entries = [
        (phase, phase, EdgeLabel(act.name, tuple(None for _ in act.params)))
        for act in ts.actions
    ]
    st = PhaseStructure(ts, [phase], phase, (), entries)
    return PhaseAutomaton(st, {phase: inv})
