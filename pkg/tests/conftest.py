import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hyperlm.tensor import tape  # noqa: E402


@pytest.fixture(autouse=True)
def fresh_tape():
    tape().clear()
    yield
    tape().clear()
