import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from apptsched.domain import CalendarConfig, default_types  # noqa: E402


@pytest.fixture
def types():
    return default_types()


@pytest.fixture
def cal():
    return CalendarConfig()
