from __future__ import annotations

import hashlib
import io
import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest
from referencing import Registry, Resource

from conftest import requires_solver
from phaseforge import __version__
from phaseforge.cli import main
from phaseforge.frontend import load
from phaseforge.vcgen import check

DOCS = Path(__file__).resolve().parents[1] / "docs"


def _schema(name: str) -> dict:
    return json.loads((DOCS / name).read_text())


REPORT = _schema("report.schema.json")
TRACE = _schema("trace.schema.json")
REGISTRY = Registry().with_resources(
    [(TRACE["$id"], Resource.from_contents(TRACE)), (REPORT["$id"], Resource.from_contents(REPORT))]
)


def run(*argv: str) -> tuple[int, str]:
    buf = io.StringIO()
    code = main(list(argv), out=buf)
    return code, buf.getvalue()


def run_json(*argv: str) -> tuple[int, dict]:
    code, text = run(*argv, "--format", "json")
    report = json.loads(text)
    jsonschema.validate(report, REPORT, registry=REGISTRY)
    assert report["exit_code"] == code
    return code, report


def test_version_and_usage_errors():
    r = subprocess.run([sys.executable, "-m", "phaseforge", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout
    assert run()[0] == 3
    assert run("frobnicate", "x.pfz")[0] == 3


@requires_solver
def test_check_valid_automaton_and_flat_invariant(tmp_corpus):
    code, rep = run_json("check", str(tmp_corpus("kvr")))
    assert code == 0 and rep["status"] == "valid" and rep["mode"] == "automaton"
    assert rep["vcs"] == 23 and rep["failures"] == []
    code, rep = run_json("check", str(tmp_corpus("kvr_flat")))
    assert code == 0 and rep["mode"] == "invariant"


@requires_solver
def test_check_invalid_automaton_reports_countermodels(tmp_path, tmp_corpus):
    src = tmp_corpus("kvr").read_text()
    line = "    invariant forall n:node. ~owner(n, k)\n"
    assert line in src
    broken = tmp_path / "kvr_weak.pfz"
    broken.write_text(src.replace(line, ""))
    code, rep = run_json("check", str(broken))
    assert code == 1 and rep["status"] == "invalid"
    assert rep["failures"] and all("countermodel" in f for f in rep["failures"] if f["status"] == "invalid")
    code, text = run("check", str(broken))
    assert code == 1 and text.startswith("invalid:") and "pre-state:" in text


def test_check_without_automaton_or_invariant_is_a_usage_error(tmp_path):
    p = tmp_path / "bare.pfz"
    p.write_text("sort node\nrelation r(node)\naction a(n: node) {\n  r(n) := true\n}\nsafety forall n:node. r(n) | ~r(n)\n")
    assert run("check", str(p))[0] == 3


def test_errors_map_to_exit_code_three(tmp_path, tmp_corpus):
    assert run("check", str(tmp_path / "missing.pfz"))[0] == 3
    bad = tmp_path / "bad.pfz"
    bad.write_text("sort node\nrelation r(node\n")
    assert run("check", str(bad))[0] == 3
    model = str(tmp_corpus("lockserv_single"))
    assert run("check", model, "--solver", str(tmp_path / "no-such-solver"))[0] == 3
    assert run("check", model, "--timeout-ms", "0")[0] == 3
    assert run("check", model, "--timeout-ms", "5000", "--budget-s", "1")[0] == 3


@requires_solver
def test_infer_writes_a_rechecked_model_with_provenance(tmp_corpus):
    model = tmp_corpus("lockserv_single")
    log = model.with_suffix(".log")
    code, rep = run_json("infer", str(model), "--seed", "3", "--log", str(log))
    assert code == 0 and rep["status"] == "success" and rep["recheck"] == "valid"
    out = Path(rep["output"])
    assert out.name == "lockserv_single.out.pfz"
    text = out.read_text()
    head = text.splitlines()[:4]
    assert head[0].startswith("# Phase characterizations inferred by phaseforge")
    assert head[1] == "# source: lockserv_single.pfz"
    assert head[2] == "# seed: 3"
    assert head[3].startswith("# wall time:")
    # The written model parses and its automaton checks.
    low = load(out)
    assert check(low.ts, low.automaton(), low.safety).valid
    events = [json.loads(line) for line in log.read_text().splitlines()]
    assert events[0]["event"] == "start" and events[-1]["event"] == "done"


@requires_solver
def test_infer_counterexample_then_diagnose(tmp_corpus):
    model = tmp_corpus("kv_broken_structure")
    code, rep = run_json("infer", str(model))
    assert code == 1 and rep["status"] == "counterexample"
    trace = Path(rep["trace_path"])
    assert trace.name == "kv_broken_structure.trace.json"
    jsonschema.validate(json.loads(trace.read_text()), TRACE, registry=REGISTRY)
    code, rep = run_json("diagnose", str(trace), str(model), "--bmc-bound", "10")
    assert code == 1 and rep["status"] == "concrete-counterexample"
    code, text = run("diagnose", str(trace), str(model))
    assert code == 1 and "matches no outgoing edge" in text
    assert run("diagnose", str(trace), str(model), "--bmc-bound", "0")[0] == 3
    # A trace from one model does not fit another.
    assert run("diagnose", str(trace), str(tmp_corpus("kvr")))[0] == 3
    garbage = trace.with_name("garbage.json")
    garbage.write_text("{not json")
    assert run("diagnose", str(garbage), str(model))[0] == 3


@requires_solver
def test_artifact_trace_diagnoses_with_exit_zero(tmp_corpus):
    model = tmp_corpus("needs_witness")
    code, rep = run_json("infer", str(model))
    assert code == 1
    code, rep = run_json("diagnose", rep["trace_path"], str(model))
    assert code == 0 and rep["status"] == "artifact-within-bound"


@requires_solver
def test_infer_budget_exhaustion_exits_two_with_frames(tmp_corpus):
    code, rep = run_json("infer", str(tmp_corpus("lockserv_multi")), "--budget-s", "0.001", "--timeout-ms", "1")
    assert code == 2 and rep["status"] == "timeout"
    assert "frontier" in rep["frames"]


def test_export_chc_is_byte_stable(tmp_corpus):
    model = tmp_corpus("kv_basic")
    code, rep = run_json("export-chc", str(model))
    assert code == 0 and rep["unknowns"] == 2 and rep["clauses"] == 9
    first = Path(rep["output"]).read_bytes()
    assert Path(rep["output"]).name == "kv_basic.smt2"
    assert hashlib.sha256(first).hexdigest() == rep["sha256"]
    code, text = run("export-chc", str(model), "-o", "-")
    assert code == 0 and text.encode() == first
    assert run("export-chc", str(tmp_corpus("kvr_flat")))[0] == 3


@requires_solver
def test_determinize_flag(tmp_corpus):
    model = str(tmp_corpus("kvr"))
    assert run_json("check", model, "--determinize")[0] == 0
    assert run_json("check", model, "--determinize=T,O")[0] == 0
    assert run("check", model, "--determinize=O")[0] == 3


@requires_solver
def test_transcript_is_written(tmp_corpus):
    model = tmp_corpus("lockserv_single")
    tr = model.with_suffix(".smt2.log")
    # The structure's empty characterizations do not prove safety.
    assert run("check", str(model), "--transcript", str(tr))[0] == 1
    assert "(check-sat" in tr.read_text()


@requires_solver
@pytest.mark.parametrize("fmt", ["text", "json"])
def test_check_output_formats(fmt, tmp_corpus):
    code, text = run("check", str(tmp_corpus("kvr_flat")), "--format", fmt)
    assert code == 0
    if fmt == "json":
        assert json.loads(text)["command"] == "check"
    else:
        assert text.startswith("valid:")
