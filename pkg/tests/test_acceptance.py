"""All acceptance criteria at their stated tolerances (slow: about an hour on one core).

One full ``acceptance`` experiment is run per session; each criterion is a
separate test, and one pass/fail line per criterion is printed at the end.
"""
import pytest

from smolkin import report
from smolkin.cli import ExperimentSpec, run_experiment

pytestmark = pytest.mark.slow

SUMMARY: list = []


@pytest.fixture(scope="session")
def acceptance(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    res = run_experiment(ExperimentSpec("acceptance", seed=0, out=str(out)))
    recs = {r["name"]: r for r in report.criterion_records(res)}
    SUMMARY[:] = [report.format_line(r) for r in recs.values()]
    return recs


@pytest.mark.parametrize("name", [c[1] for c in report.CRITERIA])
def test_criterion(acceptance, name):
    rec = acceptance[name]
    assert rec["status"] == "pass", f"{rec['gate']}: {rec['measured']}"
