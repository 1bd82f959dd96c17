from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from phaseforge.frontend import Lowered, load  # noqa: E402
from phaseforge.solver import SolverNotFound, SolverSession, find_solver  # noqa: E402

CORPUS = Path(__file__).resolve().parents[1] / "src" / "phaseforge" / "corpus"


def corpus(name: str) -> Path:
    return CORPUS / f"{name}.pfz"


def model(name: str) -> Lowered:
    return load(corpus(name))


def _solver_available() -> bool:
    try:
        find_solver(None)
        return True
    except SolverNotFound:
        return False


requires_solver = pytest.mark.skipif(not _solver_available(), reason="no SMT solver on PATH")


@pytest.fixture
def session_for():
    """Factory for solver sessions over a vocabulary, closed after the test."""
    made: list[SolverSession] = []

    def make(vocab, **kw):
        s = SolverSession(vocab, **kw)
        made.append(s)
        return s

    yield make
    for s in made:
        s.close()


@pytest.fixture
def tmp_corpus(tmp_path):
    """Copy of a corpus file in a scratch directory (CLI commands write next to the input)."""

    def copy(name: str) -> Path:
        dest = tmp_path / f"{name}.pfz"
        dest.write_text(corpus(name).read_text())
        return dest

    return copy




def pytest_terminal_summary(terminalreporter):
    """Print the acceptance criterion lines collected during the run."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
