import json
import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

import stockdecoder  # noqa: E402

FIXTURES = HERE / "fixtures"
CORPUS_DIR = FIXTURES / "corpus"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def stock():
    if not stockdecoder.available():
        pytest.skip("system libjpeg oracle could not be built")
    return stockdecoder


@pytest.fixture(scope="session")
def fixture_manifest():
    return json.loads((CORPUS_DIR / "manifest.json").read_text())


@pytest.fixture(scope="session")
def fixture_corpus(fixture_manifest):
    """[(name, bytes, manifest entry)] for the committed 20-image corpus."""
    return [(name, (CORPUS_DIR / name).read_bytes(), entry)
            for name, entry in sorted(fixture_manifest.items())]


@pytest.fixture(scope="session")
def fixture_trace():
    from lossyserve.traces import load_fixture_trace
    return load_fixture_trace()


@pytest.fixture(scope="session")
def fixture_table(fixture_trace):
    from lossyserve.confidence import calibrate, requirement_grid
    return calibrate(fixture_trace, requirement_grid())


@pytest.fixture(scope="session")
def wire_vectors():
    return json.loads((FIXTURES / "wire_vectors.json").read_text())
