"""Command-line entry point.

Exit codes: 0 valid / inferred / artifact, 1 invalid / counterexample /
concrete counterexample, 2 inconclusive or out of budget, 3 usage, parse,
configuration, solver-availability, or model/trace mismatch errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, TextIO

from . import __version__
from .automaton import AutomatonError, PhaseAutomaton, determinize, wrap_invariant
from .frontend import LowerError, Lowered, ModelFile, ParseError, lower, parse_file, pretty, with_characterizations
from .infer import (
    AbstractTrace,
    Diagnosis,
    InferConfig,
    InferError,
    InferInternalError,
    InferResult,
    diagnose,
    infer,
    validate_trace,
)
from .logic import TRUE, LogicError, to_text, top_conjuncts
from .solver import ENV_VAR, SolverError, SolverSession, find_solver
from .system import SystemError_
from .vcgen import Verdict, check, emit_chc

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_ERROR = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class Config:
    solver: str | None = None
    timeout_ms: int = 60_000
    budget_s: float = 600.0
    seed: int = 0
    determinize: bool = False
    order: list[str] | None = None
    format: str = "text"
    log: str | None = None
    bmc_bound: int | None = None
    transcript: str | None = None

    def validate(self) -> None:
        if self.timeout_ms <= 0:
            raise UsageError("--timeout-ms must be positive")
        if self.budget_s * 1000 < self.timeout_ms:
            raise UsageError("--budget-s must be at least the per-query timeout")
        if not -(1 << 63) <= self.seed < (1 << 64):
            raise UsageError("--seed must fit in 64 bits")
        if self.bmc_bound is not None and self.bmc_bound < 1:
            raise UsageError("--bmc-bound must be positive")


class EventLog:
    """Line-oriented JSON progress events."""

    def __init__(self, target: str | None) -> None:
        self._own = False
        self._out: TextIO | None = None
        if target == "-":
            self._out = sys.stderr
        elif target:
            self._out = open(target, "w")
            self._own = True

    def __call__(self, event: dict) -> None:
        if self._out is not None:
            self._out.write(json.dumps(event, sort_keys=True) + "\n")
            self._out.flush()

    def close(self) -> None:
        if self._own and self._out is not None:
            self._out.close()


# ---------------------------------------------------------------------------
# Helpers


def _load(path: str) -> tuple[ModelFile, Lowered]:
    m = parse_file(path)
    return m, lower(m)


def _solver(cfg: Config) -> str:
    return find_solver(cfg.solver)


def _maybe_determinize(a: PhaseAutomaton, cfg: Config) -> PhaseAutomaton:
    return determinize(a, cfg.order) if cfg.determinize else a


def _structure(low: Lowered, cfg: Config):
    if low.structure is None:
        raise UsageError("model declares no automaton")
    s = low.structure
    if cfg.determinize:
        s = determinize(PhaseAutomaton(s, {q: TRUE for q in s.phases}), cfg.order).structure
    return s


def _envelope(command: str, status: str, code: int, seconds: float) -> dict[str, Any]:
    return {
        "tool": "phaseforge",
        "version": __version__,
        "command": command,
        "status": status,
        "exit_code": code,
        "seconds": round(seconds, 3),
    }


def _emit(cfg: Config, report: dict, text: Callable[[], str], out: TextIO) -> None:
    if cfg.format == "json":
        out.write(json.dumps(report, indent=2) + "\n")
    else:
        out.write(text())


def _indent(s: str, n: int = 4) -> str:
    return "\n".join(" " * n + line if line else line for line in s.splitlines())


# ---------------------------------------------------------------------------
# check


def _verdict_report(v: Verdict) -> dict[str, Any]:
    fails = []
    for f in v.failures:
        item: dict[str, Any] = {
            "vc": f.vc.name,
            "kind": f.vc.kind,
            "query": f.query.note,
            "status": f.status,
        }
        if f.countermodel is not None:
            item["countermodel"] = f.countermodel.to_json()
        if f.reason:
            item["reason"] = f.reason
        fails.append(item)
    return {"vcs": len(v.vcs), "queries": v.queries, "failures": fails}


def _verdict_text(v: Verdict) -> str:
    lines = [f"{v.status}: {len(v.vcs)} VCs, {v.queries} solver queries, {v.seconds:.2f} s"]
    for f in v.failures:
        lines.append(f"  {f.status}: {f.vc.name} [{f.query.note}]")
        if f.countermodel is not None:
            cm = f.countermodel
            if cm.valuation:
                lines.append("    valuation: " + ", ".join(f"{x.name}={e}" for x, e in sorted(cm.valuation.items())))
            lines.append("    pre-state:")
            lines.append(_indent(cm.pre.describe(), 6))
            if cm.post is not None:
                lines.append("    post-state:")
                lines.append(_indent(cm.post.describe(), 6))
        if f.reason:
            lines.append(f"    reason: {f.reason}")
    return "\n".join(lines) + "\n"


def cmd_check(model: str, cfg: Config, out: TextIO = sys.stdout, log: EventLog | None = None) -> int:
    t0 = time.monotonic()
    _, low = _load(model)
    a = low.automaton()
    if a is not None:
        a = _maybe_determinize(a, cfg)
        mode = "automaton"
    elif low.invariant is not None:
        a = wrap_invariant(low.invariant, low.ts)
        mode = "invariant"
    else:
        raise UsageError("model has neither phase characterizations nor an invariant to check")
    opts = {"binary": _solver(cfg), "timeout_ms": cfg.timeout_ms, "seed": cfg.seed, "transcript": cfg.transcript}
    if log:
        log({"event": "check", "mode": mode, "phases": list(a.structure.phases)})
    v = check(low.ts, a, low.safety, solver_options=opts)
    code = {"valid": EXIT_OK, "invalid": EXIT_FAIL}.get(v.status, EXIT_INCONCLUSIVE)
    if log:
        log({"event": "done", "status": v.status, "queries": v.queries})
    report = _envelope("check", v.status, code, time.monotonic() - t0)
    report.update({"model": model, "mode": mode, **_verdict_report(v)})
    _emit(cfg, report, lambda: _verdict_text(v), out)
    return code


# ---------------------------------------------------------------------------
# infer


def output_path(model: str) -> Path:
    p = Path(model)
    stem = p.name[: -len(".pfz")] if p.name.endswith(".pfz") else p.name
    return p.with_name(stem + ".out.pfz")


def trace_path(model: str) -> Path:
    p = Path(model)
    stem = p.name[: -len(".pfz")] if p.name.endswith(".pfz") else p.name
    return p.with_name(stem + ".trace.json")


def _trace_text(t: AbstractTrace) -> str:
    lines = [f"abstract counterexample trace over phases {' -> '.join(t.phases)}"]
    if t.valuation:
        lines.append("view: " + ", ".join(f"{x.name}={e}" for x, e in sorted(t.valuation.items())))
    for i, st in enumerate(t.steps):
        lines.append(f"  [{i}] phase {st.phase}")
        lines.append(_indent(st.concrete.describe(), 6))
        if st.abstract != st.concrete:
            lines.append("      abstracted to:")
            lines.append(_indent(st.abstract.describe(), 8))
        if st.action:
            args = ", ".join(f"{k}={v}" for k, v in st.args.items())
            lines.append(f"      --{st.action}({args})-->")
    v = t.violation
    if v.kind == "safety":
        lines.append(f"  safety violated at phase {v.phase}")
    else:
        args = ", ".join(f"{k}={x}" for k, x in v.args.items())
        lines.append(f"  {v.action}({args}) is enabled at phase {v.phase} but matches no outgoing edge")
    return "\n".join(lines) + "\n"


def cmd_infer(
    model: str,
    cfg: Config,
    out: TextIO = sys.stdout,
    log: EventLog | None = None,
    out_path: str | None = None,
    trace_out: str | None = None,
) -> int:
    t0 = time.monotonic()
    m, low = _load(model)
    s = _structure(low, cfg)
    icfg = InferConfig(
        timeout_ms=cfg.timeout_ms,
        budget_s=cfg.budget_s,
        seed=cfg.seed,
        solver=_solver(cfg),
        transcript=cfg.transcript,
        on_event=log,
    )
    r: InferResult = infer(low.ts, s, low.safety, icfg)
    report = _envelope("infer", r.status, 0, 0.0)
    report.update({"model": model, "stats": r.stats.to_json()})
    if r.status == "success":
        assert r.automaton is not None
        # Independent re-check in a fresh solver session.
        v = check(low.ts, r.automaton, low.safety, solver_options={"binary": icfg.solver, "seed": cfg.seed})
        if not v.valid:
            raise InferInternalError(f"inferred automaton fails re-check ({v.status})")
        wall = time.monotonic() - t0
        dest = Path(out_path) if out_path else output_path(model)
        header = [
            f"Phase characterizations inferred by phaseforge {__version__}",
            f"source: {Path(model).name}",
            f"seed: {cfg.seed}",
            f"wall time: {wall:.2f} s",
        ]
        dest.write_text(pretty(with_characterizations(m, r.automaton.eta), header))
        code = EXIT_OK
        eta = {q: to_text(f) for q, f in r.automaton.eta.items()}
        report.update({"output": str(dest), "recheck": v.status, "characterizations": eta})

        def text() -> str:
            lines = [f"success: {r.stats.lemmas} lemmas, {r.stats.queries} queries, {r.stats.seconds:.2f} s"]
            for q, f in r.automaton.eta.items():  # type: ignore[union-attr]
                lines.append(f"  phase {q}:")
                parts = [to_text(c) for c in top_conjuncts(f)] if f != TRUE else ["true"]
                lines.extend(f"    {p}" for p in parts)
            lines.append(f"written to {dest} (re-check: {v.status})")
            return "\n".join(lines) + "\n"

    elif r.status == "counterexample":
        assert r.trace is not None
        problems = validate_trace(r.trace, low.ts, s, low.safety)
        if problems:
            raise InferInternalError("extracted trace fails validation: " + "; ".join(problems))
        dest = Path(trace_out) if trace_out else trace_path(model)
        dest.write_text(r.trace.dumps())
        code = EXIT_FAIL
        report.update({"trace_path": str(dest), "trace": r.trace.to_json()})

        def text() -> str:
            return _trace_text(r.trace) + f"trace written to {dest}\n"  # type: ignore[arg-type]

    else:
        code = EXIT_INCONCLUSIVE
        report.update({"reason": r.reason, "frames": r.frames})

        def text() -> str:
            lines = [f"{r.status}: {r.reason}", "frames at stop:"]
            lines.append(_indent(json.dumps(r.frames, indent=2), 2))
            return "\n".join(lines) + "\n"

    report["exit_code"] = code
    report["seconds"] = round(time.monotonic() - t0, 3)
    _emit(cfg, report, text, out)
    return code


# ---------------------------------------------------------------------------
# diagnose


def _diagnosis_text(d: Diagnosis) -> str:
    if d.status == "artifact-within-bound":
        return (
            f"artifact-within-bound: no concrete execution of {d.trace_length} state(s) follows the trace's "
            "phases into its violation\n"
        )
    if d.status == "inconclusive":
        return f"inconclusive: {d.reason}\n"
    lines = ["concrete-counterexample:"]
    if d.valuation:
        lines.append("  view: " + ", ".join(f"{x.name}={e}" for x, e in sorted(d.valuation.items())))
    for i, st in enumerate(d.states):
        lines.append(f"  [{i}]")
        lines.append(_indent(st.describe(), 4))
        if i < len(d.actions):
            act, args = d.actions[i]
            lines.append(f"    --{act}({', '.join(f'{k}={v}' for k, v in args.items())})-->")
    v = d.violation
    if v is not None and v.kind == "safety":
        lines.append("  safety violated in the last state")
    elif v is not None:
        args = ", ".join(f"{k}={x}" for k, x in v.args.items())
        lines.append(f"  {v.action}({args}) is enabled but matches no outgoing edge of {v.phase}")
    return "\n".join(lines) + "\n"


def cmd_diagnose(trace_file: str, model: str, cfg: Config, out: TextIO = sys.stdout) -> int:
    t0 = time.monotonic()
    _, low = _load(model)
    s = _structure(low, cfg)
    try:
        data = json.loads(Path(trace_file).read_text())
        t = AbstractTrace.from_json(low.ts.vocab, data)
    except (OSError, ValueError, KeyError, TypeError, LogicError) as e:
        raise InferError(f"cannot read trace {trace_file}: {e}") from None
    bound = cfg.bmc_bound if cfg.bmc_bound is not None else len(t)
    binary = _solver(cfg)

    def factory(vocab):
        return SolverSession(vocab, binary=binary, timeout_ms=cfg.timeout_ms, seed=cfg.seed, transcript=cfg.transcript)

    sessions: list[SolverSession] = []

    def tracked(vocab):
        sessions.append(factory(vocab))
        return sessions[-1]

    try:
        d = diagnose(t, low.ts, s, low.safety, bound, session_factory=tracked)
    finally:
        for sess in sessions:
            sess.close()
    code = {"concrete-counterexample": EXIT_FAIL, "artifact-within-bound": EXIT_OK}.get(d.status, EXIT_INCONCLUSIVE)
    report = _envelope("diagnose", d.status, code, time.monotonic() - t0)
    report.update({"model": model, "trace_path": trace_file, "diagnosis": d.to_json()})
    _emit(cfg, report, lambda: _diagnosis_text(d), out)
    return code


# ---------------------------------------------------------------------------
# export-chc


def cmd_export_chc(model: str, out_path: str | None, cfg: Config, out: TextIO = sys.stdout) -> int:
    t0 = time.monotonic()
    _, low = _load(model)
    s = _structure(low, cfg)
    chc = emit_chc(low.ts, s, low.safety)
    data = chc.text.encode()
    if out_path == "-":
        out.write(chc.text)
        return EXIT_OK
    dest = Path(out_path) if out_path else Path(model).with_suffix(".smt2")
    dest.write_bytes(data)
    report = _envelope("export-chc", "written", EXIT_OK, time.monotonic() - t0)
    report.update(
        {
            "model": model,
            "output": str(dest),
            "unknowns": len(chc.unknowns),
            "clauses": len(chc.clauses),
            "sha256": hashlib.sha256(data).hexdigest(),
        }
    )
    _emit(
        cfg,
        report,
        lambda: f"wrote {dest}: {len(chc.unknowns)} unknowns, {len(chc.clauses)} clauses\n",
        out,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", help=f"SMT solver binary (default: ${ENV_VAR}, then z3 on PATH)")
    p.add_argument("--timeout-ms", type=int, default=60_000, help="per-query solver timeout")
    p.add_argument("--budget-s", type=float, default=600.0, help="global wall-clock budget")
    p.add_argument("--seed", type=int, default=0, help="solver random seed")
    p.add_argument("--format", choices=("text", "json"), default="text", help="report format")
    p.add_argument(
        "--determinize",
        nargs="?",
        const="",
        default=None,
        metavar="ORDER",
        help="determinize edges first; optional comma-separated phase priority order",
    )
    p.add_argument("--log", metavar="PATH", help="write JSON-lines progress events ('-' for stderr)")
    p.add_argument("--transcript", metavar="PATH", help="record solver requests")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phaseforge", description="Check and infer inductive phase automata.")
    ap.add_argument("--version", action="version", version=f"phaseforge {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", help="check a phase automaton or flat invariant")
    p.add_argument("model")
    _common(p)
    p = sub.add_parser("infer", help="infer phase characterizations for a phase structure")
    p.add_argument("model")
    p.add_argument("-o", "--out", help="output model path (default: MODEL.out.pfz)")
    p.add_argument("--trace-out", help="trace path on failure (default: MODEL.trace.json)")
    _common(p)
    p = sub.add_parser("diagnose", help="bounded model checking along an abstract trace")
    p.add_argument("trace")
    p.add_argument("model")
    p.add_argument("--bmc-bound", type=int, help="maximum number of states (default: trace length)")
    _common(p)
    p = sub.add_parser("export-chc", help="write the constrained Horn clauses of a phase structure")
    p.add_argument("model")
    p.add_argument("-o", "--out", help="output path, '-' for stdout (default: MODEL.smt2)")
    _common(p)
    return ap


def config_from(ns: argparse.Namespace) -> Config:
    order = None
    det = ns.determinize is not None
    if det and ns.determinize:
        order = [x.strip() for x in ns.determinize.split(",") if x.strip()]
    cfg = Config(
        solver=ns.solver,
        timeout_ms=ns.timeout_ms,
        budget_s=ns.budget_s,
        seed=ns.seed,
        determinize=det,
        order=order,
        format=ns.format,
        log=ns.log,
        bmc_bound=getattr(ns, "bmc_bound", None),
        transcript=ns.transcript,
    )
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR
    log: EventLog | None = None
    try:
        cfg = config_from(ns)
        log = EventLog(cfg.log)
        if ns.command == "check":
            return cmd_check(ns.model, cfg, out, log)
        if ns.command == "infer":
            return cmd_infer(ns.model, cfg, out, log, ns.out, ns.trace_out)
        if ns.command == "diagnose":
            return cmd_diagnose(ns.trace, ns.model, cfg, out)
        return cmd_export_chc(ns.model, ns.out, cfg, out)
    except ParseError as e:
        print(f"phaseforge: parse error: {e}", file=sys.stderr)
    except InferInternalError as e:
        print(f"phaseforge: internal error: {e}", file=sys.stderr)
    except (UsageError, LowerError, AutomatonError, SystemError_, LogicError, SolverError, InferError, OSError) as e:
        print(f"phaseforge: error: {e}", file=sys.stderr)
    finally:
        if log is not None:
            log.close()
    return EXIT_ERROR


def main_exit() -> None:
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
