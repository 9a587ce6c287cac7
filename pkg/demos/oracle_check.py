"""Fitted Q-iteration against exact value iteration on a three-state MDP.

With one-hot states and every (state, action) pair in the data, the network
only has to represent a 3x2 table, so the fitted Q should land on Q*.

    python demos/oracle_check.py
"""
import numpy as np

from spectralfqi import FeatureVariant, FqiConfig, NetworkArchitecture, TrainConfig, spectral_fqi
from spectralfqi.envsim import FiniteMDP

p = np.zeros((3, 2, 3))
p[0, 0, 1] = p[0, 1, 2] = 1.0
p[1, 0, 0] = p[1, 1, 2] = 1.0
p[2, 0, 2] = p[2, 1, 0] = 1.0
mdp = FiniteMDP(p, np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 1.5]]), gamma=0.5)

ds = mdp.exhaustive_dataset(copies=1)
arch = NetworkArchitecture(3, (32, 32), 0.0, ds.r_max / (1 - mdp.gamma))
cfg = FqiConfig(iterations=50, gamma=mdp.gamma, train=TrainConfig(epochs=100, batch_size=8, learning_rate=1e-2))
q, policy = spectral_fqi(ds, FeatureVariant.all(), None, arch, cfg)

fitted = q.q_values(np.zeros((3, 0)), np.eye(3))
exact = mdp.value_iteration()
print("value iteration Q*:\n", np.round(exact, 4))
print("fitted Q:\n", np.round(fitted, 4))
print(f"sup-norm gap {np.abs(fitted - exact).max():.2e}")
print("greedy actions", policy(np.zeros((3, 0)), np.eye(3)), "optimal", exact.argmax(axis=1))
