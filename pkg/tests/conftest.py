from __future__ import annotations

import hashlib
import sys
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]
PROJECT = REPO / "projects" / "refdemo"
TEMPLATE = PROJECT / "exp.xml"
GOLDEN = Path(__file__).resolve().parent / "golden"

sys.path.insert(0, str(Path(__file__).resolve().parent))

from xbatch.cli import main  # noqa: E402
from xbatch.generation import BatchLayout, batch_root  # noqa: E402


def cli(*args) -> int:
    return main([str(a) for a in args])


def build_batch(root: Path, criteria, n_runs=2, ticks_s=20, seed=11, controller=None, scenario="default",
                pipeline=(1, 2, 3, 4), extra=()) -> BatchLayout:
    args = ["--project", PROJECT, "--template-input-file", TEMPLATE, "--batch-criteria", *criteria,
            "--n-runs", n_runs, "--exp-setup", f"exp_setup.T{ticks_s}", "--master-seed", seed,
            "--sierra-root", root, "--pipeline", *pipeline, "--log-level", "WARNING", *extra]
    if controller:
        args += ["--controller", controller]
    if scenario != "default":
        args += ["--scenario", scenario]
    assert cli(*args) == 0
    return BatchLayout(batch_root(root, "refdemo", controller, scenario, list(criteria)))


def tree_digests(root: Path, sub: str = "", exclude=()) -> dict[str, str]:
    base = Path(root) / sub
    out = {}
    for p in sorted(base.rglob("*")):
        if p.is_file() and not any(x in p.name for x in exclude):
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="session")
def small_batch(tmp_path_factory) -> BatchLayout:
    """Univariate 3-experiment batch, run through stages 1-4 once per session."""
    return build_batch(tmp_path_factory.mktemp("small"), ["population_size.Log4"], n_runs=3)


# --- acceptance summary -------------------------------------------------------------

_ACCEPTANCE: dict[str, tuple[str, float]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    prev, wall = _ACCEPTANCE.get(name, ("passed", 0.0))
    outcome = "failed" if report.failed or prev == "failed" else report.outcome if report.when == "call" else prev
    _ACCEPTANCE[name] = (outcome, wall + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        outcome, wall = _ACCEPTANCE[name]
        num, label = name.split("_")[2], " ".join(name.split("_")[3:])
        verdict = "PASS" if outcome == "passed" else "FAIL" if outcome == "failed" else outcome.upper()
        terminalreporter.write_line(f"criterion {num} ({label}): {verdict} [{wall:.2f}s]")
