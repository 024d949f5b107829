from pathlib import Path

import pytest

_TESTS = Path(__file__).parent


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return _TESTS / "fixtures"


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return _TESTS / "golden"


@pytest.fixture(scope="session")
def manifest_path(fixture_dir: Path) -> Path:
    return fixture_dir / "manifest.json"
