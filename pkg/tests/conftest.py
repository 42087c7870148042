import numpy as np
import pytest

from cardiovi.cardiosim import CardiacSimulator, ParameterSpace
from cardiovi.manifold import embed_endocardium
from cardiovi.mesh import generate_ellipsoid_shell


@pytest.fixture(scope="session")
def shell():
    return generate_ellipsoid_shell(8, 12, seed=3)


@pytest.fixture(scope="session")
def shell_embedding(shell):
    return embed_endocardium(shell, k=8)


@pytest.fixture(scope="session")
def small_sim(shell, shell_embedding):
    space = ParameterSpace.for_embedding(shell_embedding, n_stimuli=3)
    return CardiacSimulator(shell, shell_embedding, space)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
