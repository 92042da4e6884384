import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mergeplan.config import desk_profile, mini_profile
from mergeplan.runtime import RuntimeBundle

CACHE = Path(__file__).parent.parent / ".cache" / "tables"


@pytest.fixture(scope="session")
def mini_bundle() -> RuntimeBundle:
    return RuntimeBundle.build(mini_profile(), cache_dir=CACHE)


@pytest.fixture(scope="session")
def desk_bundle() -> RuntimeBundle:
    return RuntimeBundle.build(desk_profile(), cache_dir=CACHE)


@pytest.fixture(scope="session")
def full_bundle() -> RuntimeBundle:
    from mergeplan.config import full_profile

    return RuntimeBundle.build(full_profile(), cache_dir=CACHE)
