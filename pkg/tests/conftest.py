import numpy as np
import pytest

from mpglab import JointPolicy, TabularMarkovGame


def random_game(rng, num_agents=None, num_states=None, action_counts=None,
                gamma=0.7):
    """Small random game with Dirichlet transitions and rewards in [-1, 1]."""
    n = num_agents if num_agents is not None else int(rng.integers(1, 4))
    s_count = num_states if num_states is not None else int(rng.integers(1, 5))
    if action_counts is None:
        action_counts = tuple(int(rng.integers(2, 4)) for _ in range(n))
    j_count = int(np.prod(action_counts))
    return TabularMarkovGame(
        num_agents=n, num_states=s_count, action_counts=action_counts,
        rewards=rng.uniform(-1.0, 1.0, (n, s_count, j_count)),
        transitions=rng.dirichlet(np.ones(s_count), (s_count, j_count)),
        discount=gamma,
        initial_dist=rng.dirichlet(np.ones(s_count)),
    )


def random_policy(game, rng):
    return JointPolicy.random(game.num_states, game.action_counts, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
