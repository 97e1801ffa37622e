import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import BLOB_MAX_RESOLUTION, blob_dataset  # noqa: E402

from thd.engine import ThdParams, run_thd  # noqa: E402


@pytest.fixture(scope="session")
def blobs():
    return blob_dataset(0)


@pytest.fixture(scope="session")
def blob_tree(blobs):
    return run_thd(blobs, ThdParams(max_resolution=BLOB_MAX_RESOLUTION))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
