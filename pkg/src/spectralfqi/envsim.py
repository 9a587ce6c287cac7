"""Synthetic mixed-frequency decision process and tabular test MDPs.

State is ``(x, z)`` with ``x`` low-frequency (``m0`` entries) and ``z`` the
concatenation of ``J`` high-frequency blocks whose covariance has eigenvalues
``exp(-zeta * k)``.  Two covariance layouts are supported: ``"dependent"``
(one spectrum over all of ``z``) and ``"independent-blocks"`` (block-diagonal,
each block with its own ``exp(-zeta * k)`` spectrum).

Reward for action ``a`` is ``l + c * max(l, 0)`` with ``l = x.beta_x[a] + z.beta_z[a]``.
Next state is Gaussian with mean ``M[a] @ [x, z] + b[a]``.  The z-rows of
``M[a]`` are ``rho * I`` and the z-innovation covariance is ``(1 - rho^2) G``,
so ``z`` stays stationary with covariance exactly ``G`` whatever the policy.

All randomness flows from explicit seeds; each simulated trajectory owns a
generator derived from ``(seed, trajectory index)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import MixedState, TrajectoryDataset
from .errors import ConfigurationError, DimensionError, SchemaError

SETTINGS = ("dependent", "independent-blocks")


@dataclass(frozen=True)
class SimConfig:
    n_traj: int = 6
    horizon: int = 80
    m0: int = 2
    block_lengths: tuple[int, ...] = (27, 27, 27, 27)
    zeta: float = 0.6
    setting: str = "dependent"
    action_count: int = 2
    c: float = 0.5
    gamma: float = 0.5
    z_persistence: float = 0.5
    x_noise: float = 0.3
    reward_noise: float = 0.0
    init_x_scale: float = 1.0
    offset_scale: float = 0.5
    beta_x_scale: float = 1.0
    beta_z_scale: float = 1.0
    stability: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_lengths", tuple(int(b) for b in self.block_lengths))
        if self.setting not in SETTINGS:
            raise ConfigurationError(f"setting must be one of {SETTINGS}")
        if not self.zeta > 0:
            raise ConfigurationError("zeta must be positive")
        if self.n_traj < 1 or self.horizon < 2:
            raise ConfigurationError("need n_traj >= 1 and horizon >= 2")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must be in [0, 1)")
        if self.m0 < 0 or not self.block_lengths or min(self.block_lengths) < 1:
            raise ConfigurationError("need m0 >= 0 and positive block lengths")
        if self.action_count < 1:
            raise ConfigurationError("action_count must be positive")
        if not 0 <= self.z_persistence < self.stability < 1:
            raise ConfigurationError("need 0 <= z_persistence < stability < 1")

    @property
    def m(self) -> int:
        return sum(self.block_lengths)

    def with_(self, **changes) -> "SimConfig":
        return SimConfig(**{**asdict(self), **changes})


@dataclass(frozen=True, eq=False)
class SimCoefficients:
    """Frozen draws that define one simulated environment."""

    beta_x: np.ndarray   # (A, m0)
    beta_z: np.ndarray   # (A, m)
    mean_map: np.ndarray  # (A, d, d)
    offset: np.ndarray   # (A, d)
    cov_z: np.ndarray    # (m, m)
    cov_factor: np.ndarray  # (m, m), cov_z = F F^T

    NAMES = ("beta_x", "beta_z", "mean_map", "offset", "cov_z", "cov_factor")


@dataclass
class EnvState:
    state: MixedState
    rng: np.random.Generator


def _haar_orthogonal(rng: np.random.Generator, m: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    return q * np.sign(np.diag(r))


def _spectrum(cfg: SimConfig) -> list[np.ndarray]:
    if cfg.setting == "dependent":
        return [np.exp(-cfg.zeta * np.arange(1, cfg.m + 1))]
    return [np.exp(-cfg.zeta * np.arange(1, mj + 1)) for mj in cfg.block_lengths]


def _covariance_factor(cfg: SimConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    f = np.zeros((cfg.m, cfg.m))
    pos = 0
    for lam in _spectrum(cfg):
        k = lam.size
        f[pos:pos + k, pos:pos + k] = _haar_orthogonal(rng, k) * np.sqrt(lam)
        pos += k
    return f


def make_covariance(cfg: SimConfig) -> np.ndarray:
    """Covariance of ``z`` with eigenvalues ``exp(-zeta k)`` and a seeded random eigenbasis."""
    f = _covariance_factor(cfg)
    g = f @ f.T
    return (g + g.T) / 2


def make_coefficients(cfg: SimConfig) -> SimCoefficients:
    """Draw reward and transition coefficients from ``cfg.seed``.

    The x-rows of every mean map are shrunk so that the largest singular value
    of the full map is at most ``cfg.stability``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    na, m0, m = cfg.action_count, cfg.m0, cfg.m
    d = m0 + m
    beta_x = rng.standard_normal((na, m0)) * cfg.beta_x_scale / math.sqrt(max(m0, 1))
    beta_z = rng.standard_normal((na, m)) * cfg.beta_z_scale
    rho = cfg.z_persistence
    limit = math.sqrt(cfg.stability ** 2 - rho ** 2)
    maps = np.zeros((na, d, d))
    offset = np.zeros((na, d))
    for a in range(na):
        rows = np.hstack([rng.standard_normal((m0, m0)) / math.sqrt(max(m0, 1)),
                          rng.standard_normal((m0, m)) / math.sqrt(m)])
        if m0:
            norm = np.linalg.norm(rows, 2)
            if norm > limit:
                rows *= limit / norm
        maps[a, :m0] = rows
        maps[a, m0:, m0:] = rho * np.eye(m)
        offset[a, :m0] = rng.standard_normal(m0) * cfg.offset_scale
    f = _covariance_factor(cfg)
    g = f @ f.T
    return SimCoefficients(beta_x, beta_z, maps, offset, (g + g.T) / 2, f)


class MixedFrequencyEnv:
    """Simulator built from a :class:`SimConfig` (coefficients drawn from its seed)."""

    def __init__(self, cfg: SimConfig, coefficients: SimCoefficients | None = None):
        self.cfg = cfg
        self.coef = coefficients if coefficients is not None else make_coefficients(cfg)
        self.gamma = cfg.gamma
        self.action_count = cfg.action_count
        self.m0, self.m = cfg.m0, cfg.m
        self.block_lengths = cfg.block_lengths
        rho = cfg.z_persistence
        self._innov = math.sqrt(1 - rho * rho) * self.coef.cov_factor

    # ------------------------------------------------------------ reward/step
    def reward(self, x, z, a, rng: np.random.Generator | None = None):
        """Reward for taking action(s) ``a`` in state(s) ``(x, z)``."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        a = np.asarray(a)
        lin = np.sum(x * self.coef.beta_x[a], axis=-1) + np.sum(z * self.coef.beta_z[a], axis=-1)
        r = lin + self.cfg.c * np.maximum(lin, 0.0)
        if self.cfg.reward_noise and rng is not None:
            r = r + self.cfg.reward_noise * rng.standard_normal(np.shape(r))
        return r

    def transition_mean(self, x, z, a) -> np.ndarray:
        s = np.concatenate([np.atleast_2d(x), np.atleast_2d(z)], axis=1)
        a = np.atleast_1d(a)
        return np.einsum("nij,nj->ni", self.coef.mean_map[a], s) + self.coef.offset[a]

    def _noise(self, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        eps = np.array([r.standard_normal(self.m0 + self.m) for r in rngs])
        out = np.empty_like(eps)
        out[:, :self.m0] = self.cfg.x_noise * eps[:, :self.m0]
        out[:, self.m0:] = eps[:, self.m0:] @ self._innov.T
        return out

    def initial_batch(self, rngs: Sequence[np.random.Generator]):
        eps = np.array([r.standard_normal(self.m0 + self.m) for r in rngs])
        x = self.cfg.init_x_scale * eps[:, :self.m0]
        z = eps[:, self.m0:] @ self.coef.cov_factor.T
        return x, z

    def step_batch(self, x, z, actions, rngs):
        """Advance one trajectory per row; returns ``(next_x, next_z, rewards)``."""
        actions = np.asarray(actions)
        r = np.array([float(self.reward(x[k], z[k], actions[k], rngs[k])) for k in range(len(rngs))]) \
            if self.cfg.reward_noise else self.reward(x, z, actions)
        nxt = self.transition_mean(x, z, actions) + self._noise(rngs)
        return nxt[:, :self.m0], nxt[:, self.m0:], r

    def initial_state(self, rng: np.random.Generator) -> EnvState:
        x, z = self.initial_batch([rng])
        return EnvState(MixedState(x[0], z[0], self.block_lengths), rng)

    def step(self, state: EnvState, action: int) -> tuple[EnvState, float]:
        s = state.state
        nx, nz, r = self.step_batch(s.x[None], s.z[None], np.array([action]), [state.rng])
        return EnvState(MixedState(nx[0], nz[0], self.block_lengths), state.rng), float(r[0])

    # ------------------------------------------------------------ datasets
    def generate_dataset(self, seed: int | None = None, n_traj: int | None = None,
                         horizon: int | None = None, stream: int = 0) -> TrajectoryDataset:
        """Trajectories under the uniform random behaviour policy."""
        seed = self.cfg.seed if seed is None else seed
        n = self.cfg.n_traj if n_traj is None else n_traj
        t_len = self.cfg.horizon if horizon is None else horizon
        rngs = trajectory_rngs(seed, n, stream=stream)
        xs = np.empty((n, t_len, self.m0))
        zs = np.empty((n, t_len, self.m))
        acts = np.empty((n, t_len), dtype=np.int64)
        rews = np.empty((n, t_len))
        x, z = self.initial_batch(rngs)
        for t in range(t_len):
            a = np.array([r.integers(self.action_count) for r in rngs])
            xs[:, t], zs[:, t], acts[:, t] = x, z, a
            x, z, rews[:, t] = self.step_batch(x, z, a, rngs)
        r_max = max(1.1 * float(np.abs(rews).max()), 1e-12)
        return TrajectoryDataset(xs, zs, acts, rews, self.block_lengths, self.action_count, r_max)


@lru_cache(maxsize=32)
def make_env(cfg: SimConfig) -> MixedFrequencyEnv:
    return MixedFrequencyEnv(cfg)


def _as_env(env_or_cfg):
    return make_env(env_or_cfg) if isinstance(env_or_cfg, SimConfig) else env_or_cfg


def reward(env_or_cfg, x, z, a):
    return _as_env(env_or_cfg).reward(x, z, a)


def step(env_or_cfg, state: EnvState, action: int):
    return _as_env(env_or_cfg).step(state, action)


def generate_dataset(env_or_cfg, seed: int | None = None) -> TrajectoryDataset:
    return _as_env(env_or_cfg).generate_dataset(seed)


def trajectory_rngs(seed: int, n: int, stream: int = 1) -> list[np.random.Generator]:
    """Independent generators keyed by ``(seed, stream, trajectory index)``."""
    return [np.random.default_rng(np.random.SeedSequence([seed, stream, i])) for i in range(n)]


def rollout(env_or_cfg, policy: Callable, n_mc: int = 100, t_mc: int = 20,
            seed: int = 0) -> np.ndarray:
    """Discounted returns of ``n_mc`` trajectories of length ``t_mc`` under ``policy``.

    ``policy(x, z)`` maps a batch of states to an integer array of actions.
    Using the same ``seed`` for two policies gives them common random numbers.
    """
    env = _as_env(env_or_cfg)
    rngs = trajectory_rngs(seed, n_mc)
    x, z = env.initial_batch(rngs)
    returns = np.zeros(n_mc)
    disc = 1.0
    for _ in range(t_mc):
        a = np.asarray(policy(x, z), dtype=np.int64)
        x, z, r = env.step_batch(x, z, a, rngs)
        returns += disc * r
        disc *= env.gamma
    return returns


# ---------------------------------------------------------------- tabular MDPs

class FiniteMDP:
    """Tabular MDP whose states are emitted as one-hot ``z`` vectors (``m0 = 0``).

    ``P[s, a, s']`` are transition probabilities and ``R[s, a]`` deterministic
    rewards.  Used as a ground-truth oracle for Q-iteration and rollouts.
    """

    def __init__(self, P, R, gamma: float, initial=None):
        self.P = np.asarray(P, dtype=float)
        self.R = np.asarray(R, dtype=float)
        n_s, n_a = self.R.shape
        if self.P.shape != (n_s, n_a, n_s) or not np.allclose(self.P.sum(axis=2), 1.0):
            raise DimensionError("P must be (S, A, S) with rows summing to 1")
        self.gamma = float(gamma)
        self.n_states, self.action_count = n_s, n_a
        self.initial = np.full(n_s, 1.0 / n_s) if initial is None else np.asarray(initial, dtype=float)
        self.m0, self.m = 0, n_s
        self.block_lengths = (n_s,)

    def one_hot(self, s) -> np.ndarray:
        return np.eye(self.n_states)[np.asarray(s)]

    def decode(self, z) -> np.ndarray:
        return np.argmax(np.atleast_2d(z), axis=1)

    def value_iteration(self, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
        """Optimal Q table by repeated Bellman optimality backups."""
        q = np.zeros_like(self.R)
        for _ in range(max_iter):
            new = self.R + self.gamma * self.P @ q.max(axis=1)
            if np.max(np.abs(new - q)) < tol:
                return new
            q = new
        return q

    def policy_q(self, table) -> np.ndarray:
        """Q table of the deterministic policy ``table[s]`` (exact linear solve)."""
        table = np.asarray(table)
        idx = np.arange(self.n_states)
        p_pi = self.P[idx, table]
        v = np.linalg.solve(np.eye(self.n_states) - self.gamma * p_pi, self.R[idx, table])
        return self.R + self.gamma * self.P @ v

    def policy_value(self, table) -> float:
        """Expected discounted return from the initial distribution."""
        q = self.policy_q(table)
        return float(self.initial @ q[np.arange(self.n_states), np.asarray(table)])

    def initial_batch(self, rngs):
        s = np.array([r.choice(self.n_states, p=self.initial) for r in rngs])
        return np.zeros((len(rngs), 0)), self.one_hot(s)

    def step_batch(self, x, z, actions, rngs):
        s = self.decode(z)
        actions = np.asarray(actions)
        nxt = np.array([r.choice(self.n_states, p=self.P[si, ai]) for r, si, ai in zip(rngs, s, actions)])
        return np.zeros((len(rngs), 0)), self.one_hot(nxt), self.R[s, actions]

    def exhaustive_dataset(self, copies: int, r_max: float | None = None) -> TrajectoryDataset:
        """Every ``(s, a)`` pair ``copies`` times, next states in exact proportion to ``P``.

        Each transition is stored as a length-2 trajectory; the second step's
        action and reward are placeholders that never enter a transition.
        """
        counts = self.P * copies
        if not np.allclose(counts, np.round(counts)):
            raise ConfigurationError("transition probabilities must be multiples of 1/copies")
        counts = np.round(counts).astype(int)
        z, acts, rews = [], [], []
        for s in range(self.n_states):
            for a in range(self.action_count):
                for s2 in range(self.n_states):
                    for _ in range(counts[s, a, s2]):
                        z.append([self.one_hot(s), self.one_hot(s2)])
                        acts.append([a, 0])
                        rews.append([self.R[s, a], 0.0])
        n = len(z)
        r_max = float(np.abs(self.R).max()) if r_max is None else r_max
        return TrajectoryDataset(np.zeros((n, 2, 0)), np.array(z), np.array(acts), np.array(rews),
                                 self.block_lengths, self.action_count, r_max)


class TabularPolicy:
    """Deterministic policy over one-hot states: ``table[state index]``."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.int64)

    def __call__(self, x, z):
        return self.table[np.argmax(np.atleast_2d(z), axis=1)]


# ---------------------------------------------------------------- serialization

def _fmt_array(a: np.ndarray) -> str:
    shape = "x".join(str(s) for s in a.shape)
    return shape + ":" + ",".join(f"{v:.16e}" for v in a.ravel())


def _parse_array(text: str) -> np.ndarray:
    shape, _, body = text.partition(":")
    dims = tuple(int(s) for s in shape.split("x"))
    vals = np.array([float(v) for v in body.split(",")]) if body else np.zeros(0)
    return vals.reshape(dims)


def save_sim_config(env: MixedFrequencyEnv, path) -> Path:
    """Key-value file with every config field and all frozen coefficient arrays."""
    path = Path(path)
    lines = []
    for f in fields(SimConfig):
        val = getattr(env.cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{f.name}={val}")
    for name in SimCoefficients.NAMES:
        lines.append(f"{name}={_fmt_array(getattr(env.coef, name))}")
    path.write_text("\n".join(lines) + "\n")
    return path


def load_sim_config(path) -> MixedFrequencyEnv:
    pairs = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            pairs[key.strip()] = val.strip()
    kwargs = {}
    try:
        for f in fields(SimConfig):
            if f.name not in pairs:
                continue
            raw = pairs[f.name]
            default = f.default
            if isinstance(default, tuple):
                kwargs[f.name] = tuple(int(v) for v in raw.split(","))
            elif isinstance(default, bool):
                kwargs[f.name] = raw == "True"
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        cfg = SimConfig(**kwargs)
        coef = None
        if all(n in pairs for n in SimCoefficients.NAMES):
            coef = SimCoefficients(*(_parse_array(pairs[n]) for n in SimCoefficients.NAMES))
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed simulator config ({exc})") from None
    return MixedFrequencyEnv(cfg, coef)
