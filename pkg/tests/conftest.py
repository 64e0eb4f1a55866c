import sys
from pathlib import Path

import pytest

from vflsim import paillier

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable


@pytest.fixture(scope="session")
def key128():
    return paillier.keygen(128, seed=1, allow_small=True)


@pytest.fixture(scope="session")
def key256():
    return paillier.keygen(256, seed=2, allow_small=True)


@pytest.fixture(scope="session")
def key512():
    return paillier.keygen(512, seed=3)


@pytest.fixture(scope="session")
def key1024():
    return paillier.keygen(1024, seed=4)
