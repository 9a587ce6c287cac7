import numpy as np
import pytest

from spectralfqi.dataset import TrajectoryDataset
from spectralfqi.envsim import FiniteMDP, MixedFrequencyEnv, SimConfig


@pytest.fixture
def tiny_cfg():
    return SimConfig(n_traj=3, horizon=10, block_lengths=(4, 4), seed=3)


@pytest.fixture
def tiny_env(tiny_cfg):
    return MixedFrequencyEnv(tiny_cfg)


@pytest.fixture
def tiny_ds(tiny_env):
    return tiny_env.generate_dataset(seed=11)


def random_dataset(rng, n=2, t=3, m0=2, blocks=(2, 2), actions=2):
    m = sum(blocks)
    rewards = rng.normal(size=(n, t))
    return TrajectoryDataset(rng.normal(size=(n, t, m0)), rng.normal(size=(n, t, m)),
                             rng.integers(actions, size=(n, t)), rewards, blocks, actions,
                             float(np.abs(rewards).max()) + 1.0)


def constant_reward_mdp(gamma=0.5):
    """Two states, two actions, reward 1 everywhere."""
    p = np.full((2, 2, 2), 0.5)
    return FiniteMDP(p, np.ones((2, 2)), gamma)


def three_state_mdp(gamma=0.5):
    p = np.zeros((3, 2, 3))
    p[0, 0, 1] = p[0, 1, 2] = 1.0
    p[1, 0, 0] = p[1, 1, 2] = 1.0
    p[2, 0, 2] = p[2, 1, 0] = 1.0
    r = np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 1.5]])
    return FiniteMDP(p, r, gamma)
