import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[num]
        tr.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def t_junction():
    from coopfusion.scene import build_scenario
    return build_scenario("t_junction")


@pytest.fixture(scope="session")
def roundabout():
    from coopfusion.scene import build_scenario
    return build_scenario("roundabout")


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory, t_junction):
    """Four T-junction frames on disk, shared by the CLI and experiment tests."""
    from coopfusion.dataset import write_dataset
    return write_dataset(tmp_path_factory.mktemp("data") / "tj", t_junction, 4, seed=2)
