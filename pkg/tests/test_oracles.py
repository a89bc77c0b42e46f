import json

from .conftest import FROZEN
from .oracles.freeze import compute


def test_frozen_values_are_reproducible():
    assert json.loads(json.dumps(compute())) == FROZEN
