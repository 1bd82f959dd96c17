"""SMT-LIB 2 backend talking to an external solver process over stdin/stdout.

Formulas are printed with symbols quoted: relations and constants as
``|r|`` / ``|r'|``, free variables as Skolem constants ``|$name:sort|``
and bound variables as ``|%name|``. Each request block is followed by
``(echo "@@end")`` so responses can be delimited without parsing them.
"""

from __future__ import annotations

import itertools
import logging
import os
import re
import select
import shutil
import subprocess
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .logic import (
    And,
    BoolConst,
    Eq,
    Exists,
    Forall,
    Formula,
    Iff,
    Implies,
    LogicError,
    Not,
    Or,
    Rel,
    Structure,
    Var,
    Vocabulary,
    canonical_names,
    conj,
    evaluate,
    evaluate_two_vocab,
    nnf,
)

log = logging.getLogger(__name__)

ENV_VAR = "PHASEFORGE_SOLVER"
MARKER = "@@end"


class SolverError(Exception):
    pass


class SolverNotFound(SolverError):
    pass


class SolverProtocolError(SolverError):
    pass


def find_solver(binary: str | None = None) -> str:
    """Resolve the solver binary from an explicit path, the environment, or PATH."""
    cand = binary or os.environ.get(ENV_VAR) or "z3"
    path = shutil.which(cand) if os.sep not in cand else (cand if os.access(cand, os.X_OK) else None)
    if not path:
        raise SolverNotFound(f"solver binary {cand!r} not found (use --solver or ${ENV_VAR})")
    return path


# ---------------------------------------------------------------------------
# Printing


def q(sym: str) -> str:
    return f"|{sym}|"


def sym_rel(name: str, primed: bool) -> str:
    return q(name + ("'" if primed else ""))


def sym_free(v: Var) -> str:
    return q(f"${v.name}:{v.sort}")


def sym_bound(v: Var) -> str:
    return q(f"%{v.name}")


def to_smt(f: Formula, bound: frozenset[Var] = frozenset()) -> str:
    """SMT-LIB rendering. Variables not in ``bound`` are printed as Skolem constants."""
    parts: list[str] = []
    _emit(f, bound, parts)
    return "".join(parts)


def _term(t, bound: frozenset[Var]) -> str:
    if isinstance(t, Var):
        return sym_bound(t) if t in bound else sym_free(t)
    return sym_rel(t.name, t.primed)


def _emit(f: Formula, bound: frozenset[Var], out: list[str]) -> None:
    if isinstance(f, BoolConst):
        out.append("true" if f.value else "false")
    elif isinstance(f, Rel):
        if f.args:
            out.append(f"({sym_rel(f.name, f.primed)} {' '.join(_term(a, bound) for a in f.args)})")
        else:
            out.append(sym_rel(f.name, f.primed))
    elif isinstance(f, Eq):
        out.append(f"(= {_term(f.left, bound)} {_term(f.right, bound)})")
    elif isinstance(f, Not):
        out.append("(not ")
        _emit(f.body, bound, out)
        out.append(")")
    elif isinstance(f, (And, Or)):
        if not f.args:
            out.append("true" if isinstance(f, And) else "false")
            return
        if len(f.args) == 1:
            _emit(f.args[0], bound, out)
            return
        out.append("(and" if isinstance(f, And) else "(or")
        for a in f.args:
            out.append(" ")
            _emit(a, bound, out)
        out.append(")")
    elif isinstance(f, (Implies, Iff)):
        out.append("(=> " if isinstance(f, Implies) else "(= ")
        _emit(f.left, bound, out)
        out.append(" ")
        _emit(f.right, bound, out)
        out.append(")")
    elif isinstance(f, (Forall, Exists)):
        kw = "forall" if isinstance(f, Forall) else "exists"
        binders = " ".join(f"({sym_bound(v)} {q(v.sort)})" for v in f.vars)
        out.append(f"({kw} ({binders}) ")
        _emit(f.body, bound | frozenset(f.vars), out)
        out.append(")")
    else:
        raise LogicError(f"cannot print {type(f).__name__}")


def declarations(vocab: Vocabulary, primed: bool = True) -> list[str]:
    out = [f"(declare-sort {q(s)} 0)" for s in vocab.sorts]
    for p in ([False, True] if primed else [False]):
        for r, sorts in vocab.relation_decls:
            out.append(f"(declare-fun {sym_rel(r, p)} ({' '.join(q(s) for s in sorts)}) Bool)")
        for c, s in vocab.constant_decls:
            out.append(f"(declare-fun {sym_rel(c, p)} () {q(s)})")
    return out


def free_var_decls(vs: Sequence[Var]) -> list[str]:
    return [f"(declare-fun {sym_free(v)} () {q(v.sort)})" for v in sorted(vs)]


def has_epr_alternation(f: Formula) -> bool:
    """True if some existential sits under a universal after NNF."""
    return bool(quantifier_sort_edges(f))


def quantifier_sort_edges(f: Formula) -> set[tuple[str, str]]:
    """Sort pairs (s, t) with an existential of sort t under a universal of sort s, after NNF."""
    edges: set[tuple[str, str]] = set()

    def go(h: Formula, outer: frozenset[str]) -> None:
        if isinstance(h, Forall):
            go(h.body, outer | {v.sort for v in h.vars})
            return
        if isinstance(h, Exists):
            edges.update((s, v.sort) for s in outer for v in h.vars)
        for c in h.children():
            go(c, outer)

    go(nnf(f), frozenset())
    return edges


def is_stratified(edges: set[tuple[str, str]]) -> bool:
    """Whether the sort graph is acyclic, which keeps Skolemized queries in EPR."""
    graph: dict[str, set[str]] = {}
    for a, b in edges:
        graph.setdefault(a, set()).add(b)
    state: dict[str, int] = {}

    def cyclic(n: str) -> bool:
        state[n] = 1
        for m in graph.get(n, ()):
            if state.get(m) == 1 or (m not in state and cyclic(m)):
                return True
        state[n] = 2
        return False

    return not any(n not in state and cyclic(n) for n in list(graph))


# ---------------------------------------------------------------------------
# S-expressions and model extraction


_TOKEN = re.compile(r'\s+|;[^\n]*|\(|\)|\|[^|]*\||"(?:[^"]|"")*"|[^\s()|";]+')


def parse_sexprs(text: str) -> list:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise SolverProtocolError(f"bad solver output near {text[pos:pos + 40]!r}")
        tok = m.group(0)
        pos = m.end()
        if tok[0].isspace() or tok[0] == ";":
            continue
        toks.append(tok)
    stack: list[list] = [[]]
    for tok in toks:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise SolverProtocolError("unbalanced ')' in solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            if tok.startswith("|"):
                tok = tok[1:-1]
            stack[-1].append(tok)
    if len(stack) != 1:
        raise SolverProtocolError("unbalanced '(' in solver output (truncated model?)")
    return stack[0]


@dataclass
class _Fun:
    params: list[str]
    body: object


class _ModelEval:
    def __init__(self, funs: dict[str, _Fun], elements: set[str]) -> None:
        self.funs = funs
        self.elements = elements

    def ev(self, e, env: dict[str, object]):
        if isinstance(e, str):
            if e in env:
                return env[e]
            if e == "true":
                return True
            if e == "false":
                return False
            if e in self.elements:
                return e
            if e in self.funs and not self.funs[e].params:
                return self.ev(self.funs[e].body, {})
            raise SolverProtocolError(f"unknown symbol {e!r} in model")
        head, *args = e
        if isinstance(head, list):
            raise SolverProtocolError(f"unsupported model expression {e!r}")
        if head == "and":
            return all(self.ev(a, env) for a in args)
        if head == "or":
            return any(self.ev(a, env) for a in args)
        if head == "not":
            return not self.ev(args[0], env)
        if head == "=>":
            return (not self.ev(args[0], env)) or self.ev(args[1], env)
        if head == "xor":
            return self.ev(args[0], env) != self.ev(args[1], env)
        if head == "=":
            vals = [self.ev(a, env) for a in args]
            return all(v == vals[0] for v in vals)
        if head == "distinct":
            vals = [self.ev(a, env) for a in args]
            return len(set(vals)) == len(vals)
        if head == "ite":
            return self.ev(args[1], env) if self.ev(args[0], env) else self.ev(args[2], env)
        if head == "let":
            inner = dict(env)
            for name, val in args[0]:
                inner[name] = self.ev(val, env)
            return self.ev(args[1], inner)
        if head in self.funs:
            fn = self.funs[head]
            vals = [self.ev(a, env) for a in args]
            return self.ev(fn.body, dict(zip(fn.params, vals)))
        raise SolverProtocolError(f"unsupported model operator {head!r}")


def _elem_index(name: str) -> tuple:
    m = re.search(r"!(\d+)$", name)
    return (int(m.group(1)) if m else 0, name)


def extract_model(
    text: str,
    vocab: Vocabulary,
    free: Sequence[Var] = (),
    two_vocab: bool = False,
) -> tuple[Structure, Structure | None, dict[Var, str]]:
    """Turn ``(get-model)`` output into (pre, post-or-None, valuation of ``free``)."""
    items = parse_sexprs(text)
    if len(items) == 1 and isinstance(items[0], list):
        body = items[0]
        if body and body[0] == "model":
            body = body[1:]
    else:
        raise SolverProtocolError("model text is not a single s-expression")
    universe: dict[str, list[str]] = {s: [] for s in vocab.sorts}
    funs: dict[str, _Fun] = {}
    for entry in body:
        if not isinstance(entry, list) or not entry:
            raise SolverProtocolError(f"unexpected model entry {entry!r}")
        kind = entry[0]
        if kind == "declare-fun" and entry[2] == [] and isinstance(entry[3], str):
            if entry[3] in universe:
                universe[entry[3]].append(entry[1])
        elif kind == "define-fun":
            name, params, fbody = entry[1], entry[2], entry[4]
            funs[name] = _Fun([p[0] for p in params], fbody)
        elif kind in ("forall", "declare-sort", "define-sort"):
            continue
    elements: set[str] = set()
    for s in vocab.sorts:
        if not universe[s]:
            universe[s] = [f"{s}!val!0"]
        universe[s].sort(key=_elem_index)
        elements.update(universe[s])
    ev = _ModelEval(funs, elements)

    def build(primed: bool) -> Structure:
        rels: dict[str, set[tuple[str, ...]]] = {}
        for r, sorts in vocab.relation_decls:
            name = r + ("'" if primed else "")
            fn = funs.get(name)
            ext: set[tuple[str, ...]] = set()
            if fn is not None:
                if len(fn.params) != len(sorts):
                    raise SolverProtocolError(f"model arity mismatch for {name}")
                for t in itertools.product(*(universe[s] for s in sorts)):
                    if ev.ev(fn.body, dict(zip(fn.params, t))) is True:
                        ext.add(t)
            rels[r] = ext
        consts: dict[str, str] = {}
        for c, s in vocab.constant_decls:
            name = c + ("'" if primed else "")
            consts[c] = ev.ev(funs[name].body, {}) if name in funs else universe[s][0]
        return Structure(vocab, universe, rels, consts)

    pre = build(False)
    post = build(True) if two_vocab else None
    val: dict[Var, str] = {}
    for v in free:
        name = f"${v.name}:{v.sort}"
        val[v] = ev.ev(funs[name].body, {}) if name in funs else universe[v.sort][0]
    # Canonical element names make results independent of the solver's naming.
    ren = canonical_names(pre)
    pre = pre.rename(ren)
    if post is not None:
        post = post.rename(ren)
    val = {k: ren[e] for k, e in val.items()}
    return pre, post, val


# ---------------------------------------------------------------------------
# Sessions


@dataclass
class SatResult:
    status: str  # "sat" | "unsat" | "unknown"
    model: Structure | None = None
    post: Structure | None = None
    valuation: dict[Var, str] = field(default_factory=dict)
    reason: str = ""

    @property
    def sat(self) -> bool:
        return self.status == "sat"

    @property
    def unsat(self) -> bool:
        return self.status == "unsat"

    @property
    def unknown(self) -> bool:
        return self.status == "unknown"


@dataclass
class SolverStats:
    queries: int = 0
    sat: int = 0
    unsat: int = 0
    unknown: int = 0
    restarts: int = 0
    recycles: int = 0
    seconds: float = 0.0


class SolverSession:
    """One solver process with the vocabulary (and its primed copy) declared once.

    Not thread-safe; use one session per worker.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        binary: str | None = None,
        timeout_ms: int = 60_000,
        seed: int = 0,
        transcript: str | os.PathLike | None = None,
        minimize: bool = False,
        validate: bool = True,
        recycle_after: int | None = 2000,
    ) -> None:
        """``recycle_after``: start a fresh process after this many queries on one
        process, to bound the memory a long incremental session accumulates.
        Only the preamble persists across queries, so recycling is transparent."""
        self.vocab = vocab
        self.binary = find_solver(binary)
        self.timeout_ms = timeout_ms
        self.seed = seed
        self.minimize = minimize
        self.validate = validate
        self.recycle_after = recycle_after
        self._since_start = 0
        self.stats = SolverStats()
        self.transcript: list[str] = []
        self.history: list[tuple[str, str]] = []
        self._transcript_file = open(transcript, "w") if transcript else None
        self._proc: subprocess.Popen | None = None
        self._buf = b""
        self.depth = 0
        self._warned_alternation = False
        self._start()

    # process management ------------------------------------------------------

    def _preamble(self) -> list[str]:
        return [
            "(set-option :print-success false)",
            "(set-option :produce-models true)",
            f"(set-option :smt.random_seed {self.seed % (1 << 32)})",
            f"(set-option :sat.random_seed {self.seed % (1 << 32)})",
            f"(set-option :timeout {int(self.timeout_ms)})",
            "(set-option :smt.mbqi true)",
            "(set-logic UF)",
            *declarations(self.vocab),
        ]

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            [self.binary, "-in", "-smt2"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        self._buf = b""
        self.depth = 0
        self._since_start = 0
        self._send(self._preamble(), expect_output=False)

    def restart(self) -> None:
        self._kill()
        self.stats.restarts += 1
        self._start()

    def _kill(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except Exception:  # pragma: no cover - best effort
                pass
            for s in (self._proc.stdin, self._proc.stdout):
                try:
                    s.close()  # type: ignore[union-attr]
                except Exception:
                    pass
            self._proc = None

    def close(self) -> None:
        self._kill()
        if self._transcript_file:
            self._transcript_file.close()
            self._transcript_file = None

    def __enter__(self) -> "SolverSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self) -> None:  # pragma: no cover
        try:
            self._kill()
        except Exception:
            pass

    # wire protocol -------------------------------------------------------------

    def _log(self, cmds: Sequence[str]) -> None:
        self.transcript.extend(cmds)
        if self._transcript_file:
            self._transcript_file.write("\n".join(cmds) + "\n")
            self._transcript_file.flush()

    def _send(self, cmds: Sequence[str], expect_output: bool = True, deadline: float | None = None) -> str:
        assert self._proc is not None and self._proc.stdin is not None
        self._log(cmds)
        payload = "\n".join(cmds) + f'\n(echo "{MARKER}")\n'
        try:
            self._proc.stdin.write(payload.encode())
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise SolverProtocolError(f"solver process died: {e}") from None
        out = self._read(deadline)
        if not expect_output and out.strip():
            raise SolverProtocolError(f"unexpected solver output: {out.strip()[:300]}")
        return out

    def _read(self, deadline: float | None) -> str:
        assert self._proc is not None and self._proc.stdout is not None
        fd = self._proc.stdout.fileno()
        marker = (MARKER + "\n").encode()
        while True:
            idx = self._buf.find(marker)
            if idx >= 0 and (idx == 0 or self._buf[idx - 1 : idx] == b"\n"):
                out = self._buf[:idx]
                self._buf = self._buf[idx + len(marker) :]
                return out.decode()
            wait = None if deadline is None else max(0.0, deadline - time.monotonic())
            ready, _, _ = select.select([fd], [], [], wait)
            if not ready:
                raise TimeoutError("solver did not answer before the deadline")
            chunk = os.read(fd, 1 << 16)
            if not chunk:
                raise SolverProtocolError("solver process closed its output")
            self._buf += chunk

    def _deadline(self) -> float:
        return time.monotonic() + self.timeout_ms / 1000.0 + 10.0

    # queries -------------------------------------------------------------------

    def check_sat(self, formula: Formula, minimize: bool | None = None) -> SatResult:
        """Satisfiability of ``formula``; free variables act as Skolem constants."""
        return self.with_assumptions([], formula, minimize=minimize)

    def with_assumptions(
        self, base: Sequence[Formula], probe: Formula, minimize: bool | None = None
    ) -> SatResult:
        parts = [*base, probe]
        free: set[Var] = set()
        for p in parts:
            free |= p.free_vars
        free_sorted = sorted(free)
        two_vocab = any(p.has_primed for p in parts)
        if not self._warned_alternation:
            edges: set[tuple[str, str]] = set()
            for p in parts:
                edges |= quantifier_sort_edges(p)
            if not is_stratified(edges):
                self._warned_alternation = True
                log.warning("query outside the EPR fragment (cyclic quantifier alternation); solver may diverge")
        cmds = ["(push 1)", *free_var_decls(free_sorted)]
        cmds += [f"(assert {to_smt(p)})" for p in parts]
        cmds.append("(check-sat)")
        minimize = self.minimize if minimize is None else minimize
        if self.recycle_after and self._since_start >= self.recycle_after and self.depth == 0:
            self._kill()
            self.stats.recycles += 1
            self._start()
        t0 = time.monotonic()
        self.stats.queries += 1
        self._since_start += 1
        try:
            res = self._run(cmds, free_sorted, two_vocab, minimize)
        finally:
            self.stats.seconds += time.monotonic() - t0
        setattr(self.stats, res.status, getattr(self.stats, res.status) + 1)
        self.history.append(("\n".join(cmds), res.status))
        if res.sat and self.validate:
            whole = conj(parts)
            ok = (
                evaluate_two_vocab(res.model, res.post, res.valuation, whole)
                if two_vocab
                else evaluate(res.model, res.valuation, whole)
            )
            if not ok:
                raise SolverProtocolError("solver model does not satisfy the asserted formula")
        return res

    def _run(
        self, cmds: list[str], free: list[Var], two_vocab: bool, minimize: bool, retry: bool = True
    ) -> SatResult:
        try:
            out = self._send(cmds, deadline=self._deadline()).strip()
            self.depth += 1
            if out == "unsat":
                self._pop(1)
                return SatResult("unsat")
            if out == "unknown":
                reason = self._send(["(get-info :reason-unknown)"], deadline=self._deadline()).strip()
                self._pop(1)
                return SatResult("unknown", reason=reason or "unknown")
            if out != "sat":
                raise SolverProtocolError(f"unexpected check-sat answer: {out[:300]}")
            extra = self._minimize(free) if minimize else 0
            text = self._send(["(get-model)"], deadline=self._deadline())
            self._pop(1 + extra)
            pre, post, val = extract_model(text, self.vocab, free, two_vocab)
            return SatResult("sat", pre, post, val)
        except TimeoutError:
            self.restart()
            return SatResult("unknown", reason="timeout")
        except SolverProtocolError as e:
            if self._proc is not None and self._proc.poll() is not None:
                # A crash (e.g. the process was killed for memory) loses only
                # the preamble, so the query is retried once on a fresh process.
                self.restart()
                if retry:
                    return self._run(cmds, free, two_vocab, minimize, retry=False)
                return SatResult("unknown", reason=f"process death: {e}")
            raise

    def _pop(self, n: int) -> None:
        if n > self.depth:
            raise SolverProtocolError("pop below the base assertion level")
        self._send([f"(pop {n})"], expect_output=False, deadline=self._deadline())
        self.depth -= n

    def _minimize(self, free: list[Var]) -> int:
        """Shrink sort cardinalities one sort at a time; returns pushes left open."""
        text = self._send(["(get-model)"], deadline=self._deadline())
        pre, _, _ = extract_model(text, self.vocab, free, False)
        pushed = 0
        last_sat = True
        for s in self.vocab.sorts:
            n = len(pre.domain[s])
            for k in range(1, n):
                cs = [q(f"@{s}{i}") for i in range(k)]
                x = q("%card")
                cmds = ["(push 1)"]
                cmds += [f"(declare-fun {c} () {q(s)})" for c in cs]
                eqs = " ".join(f"(= {x} {c})" for c in cs)
                body = eqs if k == 1 else f"(or {eqs})"
                cmds.append(f"(assert (forall (({x} {q(s)})) {body}))")
                cmds.append("(check-sat)")
                out = self._send(cmds, deadline=self._deadline()).strip()
                self.depth += 1
                if out == "sat":
                    pushed += 1
                    last_sat = True
                    break
                last_sat = False
                self._pop(1)
        if not last_sat:
            # The model is only available right after a sat answer.
            out = self._send(["(check-sat)"], deadline=self._deadline()).strip()
            if out != "sat":
                raise SolverProtocolError(f"re-check after minimization answered {out!r}")
        return pushed

    def replay(self, history: Sequence[tuple[str, str]] | None = None) -> list[str]:
        """Re-run recorded queries (e.g. after a restart) and return their answers."""
        answers = []
        for script, _ in list(history if history is not None else self.history):
            out = self._send(script.split("\n"), deadline=self._deadline()).strip()
            self.depth += 1
            self._pop(1)
            answers.append(out)
        return answers

    def kill_process(self) -> None:
        """Simulate a crash (used by tests of the restart path)."""
        assert self._proc is not None
        self._proc.kill()
        self._proc.wait()


class SessionPool:
    """Hands out independent sessions, one per concurrent worker."""

    def __init__(self, vocab: Vocabulary, size: int = 1, **kwargs) -> None:
        self._free = [SolverSession(vocab, **kwargs) for _ in range(max(1, size))]
        self._all = list(self._free)
        self._lock = threading.Condition()

    @contextmanager
    def session(self) -> Iterator[SolverSession]:
        with self._lock:
            while not self._free:
                self._lock.wait()
            s = self._free.pop()
        try:
            yield s
        finally:
            with self._lock:
                self._free.append(s)
                self._lock.notify()

    def total_queries(self) -> int:
        return sum(s.stats.queries for s in self._all)

    def close(self) -> None:
        for s in self._all:
            s.close()
