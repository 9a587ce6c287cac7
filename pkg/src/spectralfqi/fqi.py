"""Fitted Q-iteration on PCA-reduced (or baseline) state features.

One ReLU network per action.  Each iteration freezes the current ensemble,
computes Bellman optimality targets on every sampled transition, and refits
each action's network on the transitions where that action was taken.

Feature variants:

``pca``         ``[x, pc_scores(z, kappa)]``
``all``         ``[x, z]``
``ave``         ``[x, mean of each z block]``
``bottleneck``  ``[x, z]`` fed to a network whose first hidden layer has
                width ``m0 + kappa``
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import MixedState, TrajectoryDataset, TransitionArrays, transition_arrays
from .errors import ConfigurationError, CoverageError, DimensionError, SchemaError
from .neuralnet import (
    NetworkArchitecture,
    NetworkParameters,
    TrainConfig,
    forward,
    init_network,
    load_parameters,
    save_parameters,
    train_regression,
)
from .spectral import SpectralBasis, load_basis, pc_scores, save_basis

log = logging.getLogger(__name__)

VARIANTS = ("pca", "all", "ave", "bottleneck")

# seed streams
_INIT, _TRAIN, _SAMPLE = 0, 1, 2


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 32-bit child seed for ``(seed, *keys)``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass(frozen=True)
class FeatureVariant:
    kind: str
    kappa: int | None = None

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.kind!r}; expected one of {VARIANTS}")
        if self.kind in ("pca", "bottleneck"):
            if self.kappa is None or self.kappa < 1:
                raise ConfigurationError(f"{self.kind} needs kappa >= 1")

    @classmethod
    def pca(cls, kappa: int) -> "FeatureVariant":
        return cls("pca", int(kappa))

    @classmethod
    def all(cls) -> "FeatureVariant":
        return cls("all")

    @classmethod
    def ave(cls) -> "FeatureVariant":
        return cls("ave")

    @classmethod
    def bottleneck(cls, kappa: int) -> "FeatureVariant":
        return cls("bottleneck", int(kappa))

    @classmethod
    def parse(cls, text: str, kappa: int | None = None) -> "FeatureVariant":
        """``"pca"``, ``"pca:5"``, ``"all"``, ``"ave"``, ``"bottleneck:5"``."""
        kind, _, k = text.strip().lower().partition(":")
        kind = {"bottle": "bottleneck", "mean": "ave"}.get(kind, kind)
        k = int(k) if k else kappa
        return cls(kind, k if kind in ("pca", "bottleneck") else None)

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.kappa}" if self.kappa is not None else self.kind

    def input_dim(self, m0: int, m: int, n_blocks: int) -> int:
        if self.kind == "pca":
            return m0 + self.kappa
        if self.kind == "ave":
            return m0 + n_blocks
        return m0 + m


def feature_matrix(variant: FeatureVariant, x, z, basis: SpectralBasis | None,
                   block_lengths: Sequence[int]) -> np.ndarray:
    """Row-wise features for arrays ``x`` (n, m0) and ``z`` (n, m)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if x.shape[0] != z.shape[0]:
        x = x.reshape(z.shape[0], -1)
    if z.shape[1] != sum(block_lengths):
        raise DimensionError(f"z has {z.shape[1]} entries, blocks sum to {sum(block_lengths)}")
    if variant.kind == "pca":
        if basis is None:
            raise ConfigurationError("the pca variant needs a spectral basis")
        return np.hstack([x, pc_scores(basis, z, variant.kappa)])
    if variant.kind == "ave":
        edges = np.cumsum((0, *block_lengths))
        means = np.add.reduceat(z, edges[:-1], axis=1) / np.asarray(block_lengths)
        return np.hstack([x, means])
    return np.hstack([x, z])


def build_features(variant: FeatureVariant, state: MixedState,
                   basis: SpectralBasis | None = None) -> np.ndarray:
    return feature_matrix(variant, state.x[None], state.z[None], basis, state.block_lengths)[0]


def architecture_for(variant: FeatureVariant, m0: int, block_lengths: Sequence[int], v_max: float,
                     hidden_widths: Sequence[int] = (15, 5, 5),
                     dropout_rate: float = 0.1) -> NetworkArchitecture:
    """Network shape for a variant; the bottleneck variant gets an extra first layer."""
    widths = tuple(hidden_widths)
    if variant.kind == "bottleneck":
        widths = (m0 + variant.kappa, *widths)
    d = variant.input_dim(m0, sum(block_lengths), len(block_lengths))
    return NetworkArchitecture(d, widths, dropout_rate, v_max)


@dataclass(frozen=True)
class FqiConfig:
    iterations: int = 50
    gamma: float = 0.5
    sample_size: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must be in [0, 1)")


@dataclass(frozen=True, eq=False)
class QEnsemble:
    params: tuple[NetworkParameters, ...]
    arch: NetworkArchitecture
    gamma: float
    v_max: float
    variant: FeatureVariant
    basis: SpectralBasis | None
    block_lengths: tuple[int, ...]

    @property
    def action_count(self) -> int:
        return len(self.params)

    def features(self, x, z) -> np.ndarray:
        return feature_matrix(self.variant, x, z, self.basis, self.block_lengths)

    def q_from_features(self, feats) -> np.ndarray:
        return np.column_stack([forward(p, self.arch, feats) for p in self.params])

    def q_values(self, x, z) -> np.ndarray:
        """``(n, |A|)`` eval-mode Q values."""
        return self.q_from_features(self.features(x, z))


class GreedyPolicy:
    """Deterministic argmax policy of a frozen :class:`QEnsemble`; ties go to the lowest action."""

    def __init__(self, q: QEnsemble):
        self.q = q

    def __call__(self, x, z) -> np.ndarray:
        return np.argmax(self.q.q_values(x, z), axis=1)

    def act(self, state: MixedState) -> int:
        return greedy_action(self.q, state)


def greedy_action(q: QEnsemble, state: MixedState) -> int:
    return int(np.argmax(q.q_values(state.x[None], state.z[None])[0]))


def _as_arrays(transitions) -> TransitionArrays:
    if isinstance(transitions, TransitionArrays):
        return transitions
    transitions = list(transitions)
    if not transitions:
        raise DimensionError("no transitions")
    return TransitionArrays(
        np.array([t.state.x for t in transitions]), np.array([t.state.z for t in transitions]),
        np.array([t.action for t in transitions]), np.array([t.reward for t in transitions]),
        np.array([t.next_state.x for t in transitions]), np.array([t.next_state.z for t in transitions]))


def bellman_targets(q: QEnsemble, transitions) -> np.ndarray:
    """``clip(y + gamma * max_a Q(s', a), -v_max, v_max)`` per transition."""
    tr = _as_arrays(transitions)
    return _targets(q, tr.rewards, q.features(tr.next_x, tr.next_z))


def _targets(q: QEnsemble, rewards, next_feats) -> np.ndarray:
    if q.gamma == 0:
        return np.clip(rewards, -q.v_max, q.v_max)
    best = q.q_from_features(next_feats).max(axis=1)
    return np.clip(rewards + q.gamma * best, -q.v_max, q.v_max)


def spectral_fqi(ds: TrajectoryDataset, variant: FeatureVariant, basis: SpectralBasis | None,
                 arch: NetworkArchitecture, cfg: FqiConfig = FqiConfig()):
    """Run ``cfg.iterations`` rounds of fitted Q-iteration.

    Returns ``(QEnsemble, GreedyPolicy)``.  Seeds: action ``a``'s initial
    network uses ``derive_seed(cfg.seed, 0, a)``; its fit in iteration ``k``
    uses ``derive_seed(cfg.seed, 1, k, a)``.
    """
    tr = transition_arrays(ds)
    counts = np.bincount(tr.actions, minlength=ds.action_count)
    if np.any(counts == 0):
        missing = np.nonzero(counts == 0)[0].tolist()
        raise CoverageError(f"actions {missing} never appear in the dataset")
    feats = feature_matrix(variant, tr.x, tr.z, basis, ds.block_lengths)
    next_feats = feature_matrix(variant, tr.next_x, tr.next_z, basis, ds.block_lengths)
    if arch.input_dim != feats.shape[1]:
        raise DimensionError(f"architecture expects {arch.input_dim} inputs, features have {feats.shape[1]}")
    if variant.kind == "bottleneck" and arch.hidden_widths[0] != ds.m0 + variant.kappa:
        raise ConfigurationError("bottleneck width must equal m0 + kappa")

    def ensemble(params):
        return QEnsemble(tuple(params), arch, cfg.gamma, arch.v_max, variant, basis, ds.block_lengths)

    params = [init_network(arch, derive_seed(cfg.seed, _INIT, a)) for a in range(ds.action_count)]
    n_all = len(tr)
    sampler = np.random.default_rng(derive_seed(cfg.seed, _SAMPLE))
    for k in range(cfg.iterations):
        if cfg.sample_size is None or cfg.sample_size >= n_all:
            idx = np.arange(n_all)
        else:
            idx = np.sort(sampler.choice(n_all, size=cfg.sample_size, replace=True))
        frozen = ensemble(params)
        targets = _targets(frozen, tr.rewards[idx], next_feats[idx])
        acts = tr.actions[idx]
        new = []
        for a in range(ds.action_count):
            rows = acts == a
            start = params[a] if cfg.warm_start else init_network(arch, derive_seed(cfg.seed, _INIT, a))
            if not rows.any():
                log.warning("iteration %d: no sampled transitions for action %d", k, a)
                new.append(start)
                continue
            tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, _TRAIN, k, a))
            new.append(train_regression(start, arch, feats[idx][rows], targets[rows], tcfg))
        params = new
    q = ensemble(params)
    return q, GreedyPolicy(q)


# ---------------------------------------------------------------- export

def save_policy(q: QEnsemble, directory) -> Path:
    """Write ``policy.json``, ``basis.txt`` (if any) and one ``net_<a>.txt`` per action."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "variant": q.variant.kind, "kappa": q.variant.kappa, "gamma": q.gamma,
        "v_max": q.v_max, "block_lengths": list(q.block_lengths),
        "input_dim": q.arch.input_dim, "hidden_widths": list(q.arch.hidden_widths),
        "dropout_rate": q.arch.dropout_rate, "action_count": q.action_count,
        "basis": "basis.txt" if q.basis is not None else None,
        "networks": [f"net_{a}.txt" for a in range(q.action_count)],
    }
    (directory / "policy.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if q.basis is not None:
        save_basis(q.basis, directory / "basis.txt")
    for a, p in enumerate(q.params):
        save_parameters(p, directory / f"net_{a}.txt")
    return directory


def load_policy(directory) -> GreedyPolicy:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "policy.json").read_text())
        variant = FeatureVariant(meta["variant"], meta["kappa"])
        arch = NetworkArchitecture(meta["input_dim"], tuple(meta["hidden_widths"]),
                                   meta["dropout_rate"], meta["v_max"])
        basis = load_basis(directory / meta["basis"]) if meta["basis"] else None
        params = tuple(load_parameters(directory / f) for f in meta["networks"])
    except (KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        raise SchemaError(f"{directory}: cannot load policy ({exc})") from None
    q = QEnsemble(params, arch, meta["gamma"], meta["v_max"], variant, basis, tuple(meta["block_lengths"]))
    return GreedyPolicy(q)
