import numpy as np
import pytest

from cdbandits.core import validate_preference_matrix
from cdbandits.env import APPENDIX_B_5ARM, make_environment


@pytest.fixture
def appendix_b():
    return validate_preference_matrix(APPENDIX_B_5ARM)


@pytest.fixture
def cycle_env():
    return make_environment("cycle", {"k": 3})


@pytest.fixture
def two_context_env():
    return make_environment(
        "composite",
        {"parts": [{"q": 0.3, "kind": "cycle"}, {"q": 0.7, "kind": "condorcet", "k": 3, "gap": 0.4}]},
    )


def brute_margin(M, w):
    """min over columns of w^T M by an explicit double loop."""
    n = len(w)
    return min(sum(w[i] * M[i][j] for i in range(n)) for j in range(n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
