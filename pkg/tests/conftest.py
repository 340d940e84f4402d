from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def golden_path() -> Path:
    return DATA_DIR / "golden.bcsc"
