"""Policy value estimates and paired comparisons.

Two estimators: Monte Carlo rollouts when a simulator is available, and fitted
Q evaluation (FQE) from logged data, which repeatedly regresses
``y + gamma * Q(s', pi(s'))`` on ``features(s)`` with one bagged tree
ensemble per action.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import TrajectoryDataset, transition_arrays
from .envsim import rollout
from .errors import PairingError
from .fqi import FeatureVariant, feature_matrix
from .forest import ForestConfig, TreeEnsembleRegressor, fit_tree_ensemble
from .spectral import SpectralBasis, fit_basis, select_kappa

log = logging.getLogger(__name__)

Z_CRIT = 1.96


def standard_error(values) -> float:
    """Sample standard deviation over ``sqrt(count)``; zero for fewer than two values."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(np.std(v, ddof=1) / math.sqrt(v.size))


@dataclass(frozen=True, eq=False)
class EvalReport:
    label: str
    seeds: tuple
    values: np.ndarray
    mean: float
    se: float

    @classmethod
    def from_values(cls, label: str, values, seeds: Sequence | None = None) -> "EvalReport":
        values = np.asarray(values, dtype=float)
        seeds = tuple(range(values.size)) if seeds is None else tuple(seeds)
        if len(seeds) != values.size:
            raise ValueError("one seed per value required")
        return cls(label, seeds, values, float(values.mean()), standard_error(values))

    def to_record(self) -> dict:
        return {"label": self.label, "mean": self.mean, "se": self.se, "n": int(self.values.size),
                "seeds": list(self.seeds), "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    label: str
    seeds: tuple
    differences: np.ndarray
    mean_diff: float
    margin: float

    @property
    def significant(self) -> bool:
        return self.mean_diff - self.margin > 0 or self.mean_diff + self.margin < 0

    @property
    def positive_fraction(self) -> float:
        return float(np.mean(self.differences > 0))

    def to_record(self) -> dict:
        return {"label": self.label, "mean_diff": self.mean_diff, "margin": self.margin,
                "n": int(self.differences.size), "seeds": list(self.seeds),
                "differences": self.differences.tolist()}


def compare_policies(a: EvalReport, b: EvalReport) -> ComparisonReport:
    """Paired difference ``a - b`` with a ``1.96 * SE`` margin of error."""
    if a.seeds != b.seeds:
        raise PairingError(f"reports {a.label!r} and {b.label!r} were not run on the same seeds")
    diff = a.values - b.values
    return ComparisonReport(f"{a.label}-{b.label}", a.seeds, diff, float(diff.mean()),
                            Z_CRIT * standard_error(diff))


def monte_carlo_value(policy: Callable, env, n_mc: int = 100, t_mc: int = 20, seed: int = 0,
                      label: str = "policy") -> EvalReport:
    """Mean and standard error of discounted returns over ``n_mc`` simulated trajectories."""
    returns = rollout(env, policy, n_mc, t_mc, seed)
    return EvalReport.from_values(label, returns)


@dataclass(frozen=True, eq=False)
class ActionForests:
    """One forest per action; ``fallback`` (fitted on every row) covers actions too rare to fit."""

    forests: tuple
    fallback: TreeEnsembleRegressor | None = None

    def predict(self, feats: np.ndarray, actions) -> np.ndarray:
        actions = np.asarray(actions)
        out = np.empty(feats.shape[0])
        for a in np.unique(actions):
            rows = actions == a
            model = self.forests[a] if a < len(self.forests) else None
            out[rows] = (model or self.fallback).predict(feats[rows])
        return out


def _fit_action_forests(feats, actions, targets, action_count, cfg: ForestConfig) -> ActionForests:
    forests, fallback = [], None
    for a in range(action_count):
        rows = actions == a
        if rows.sum() >= cfg.min_leaf_size:
            forests.append(fit_tree_ensemble(feats[rows], targets[rows], cfg))
        else:
            forests.append(None)
            if fallback is None:
                fallback = fit_tree_ensemble(feats, targets, cfg)
    return ActionForests(tuple(forests), fallback)


FQE_FEATURES = ("pca", "all")


def evaluator_features(kind: str, ds: TrajectoryDataset, variance: float = 0.99):
    """``(basis, variant)`` for the FQE regressor.

    ``"pca"`` uses whitened scores reaching ``variance`` explained variance on
    ``ds`` (set above the policies' own threshold so the evaluator keeps more
    components than any PCA policy it scores); ``"all"`` uses raw ``[x, z]``.
    """
    if kind == "all":
        return None, FeatureVariant.all()
    if kind != "pca":
        raise ValueError(f"FQE features must be one of {FQE_FEATURES}, got {kind!r}")
    basis = fit_basis(ds)
    return basis, FeatureVariant.pca(select_kappa(basis, variance))


def fitted_q_evaluation(policy: Callable, ds: TrajectoryDataset, basis: SpectralBasis | None = None,
                        variant: FeatureVariant = FeatureVariant.all(), k_iters: int = 30,
                        forest: ForestConfig = ForestConfig(), gamma: float = 0.5,
                        eval_ds: TrajectoryDataset | None = None) -> float:
    """FQE estimate of ``policy``'s value.

    The Q function of ``policy`` is fitted on ``ds`` starting from ``Q = 0``;
    the value is the average of ``Q(s0, pi(s0))`` over the first state of each
    trajectory in ``eval_ds`` (``ds`` itself when omitted).  Every round reuses
    the forest seed in ``forest``.
    """
    q = fqe_fit(policy, ds, basis, variant, k_iters, forest, gamma)
    if q is None:
        return 0.0
    target = ds if eval_ds is None else eval_ds
    x0, z0 = target.initial_states()
    a0 = np.asarray(policy(x0, z0))
    feats = feature_matrix(variant, x0, z0, basis, target.block_lengths)
    return float(np.mean(q.predict(feats, a0)))


def fqe_fit(policy: Callable, ds: TrajectoryDataset, basis: SpectralBasis | None,
            variant: FeatureVariant, k_iters: int, forest: ForestConfig,
            gamma: float) -> ActionForests | None:
    """Final per-action Q forests after ``k_iters`` FQE rounds (``None`` if ``k_iters == 0``)."""
    tr = transition_arrays(ds)
    feats = feature_matrix(variant, tr.x, tr.z, basis, ds.block_lengths)
    next_feats = feature_matrix(variant, tr.next_x, tr.next_z, basis, ds.block_lengths)
    next_a = np.asarray(policy(tr.next_x, tr.next_z))
    _check_coverage(tr.actions, next_a, ds.action_count, forest.min_leaf_size)
    q = None
    for _ in range(k_iters):
        if q is None or gamma == 0:
            y = tr.rewards
        else:
            y = tr.rewards + gamma * q.predict(next_feats, next_a)
        q = _fit_action_forests(feats, tr.actions, y, ds.action_count, forest)
    return q


def _check_coverage(logged, chosen, action_count, min_rows):
    logged_counts = np.bincount(logged, minlength=action_count)
    chosen_counts = np.bincount(chosen, minlength=action_count)
    for a in range(action_count):
        if chosen_counts[a] and logged_counts[a] < min_rows:
            log.warning("policy selects action %d on %d next states but the data holds only %d "
                        "transitions with it; FQE extrapolates there from a forest over all actions", a, chosen_counts[a], logged_counts[a])


# ---------------------------------------------------------------- report files

def write_reports(records: Sequence, path) -> Path:
    """Line-delimited JSON, one record per report (deterministic key order)."""
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            rec = rec.to_record() if hasattr(rec, "to_record") else rec
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_reports(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_summary_table(reports: Sequence, path) -> Path:
    """Tab-separated summary: ``label, n, mean, se, margin`` for each report."""
    path = Path(path)
    lines = ["label\tn\tmean\tse\tmargin"]
    for r in reports:
        if isinstance(r, ComparisonReport):
            se = r.margin / Z_CRIT
            lines.append(f"{r.label}\t{r.differences.size}\t{r.mean_diff:.6f}\t{se:.6f}\t{r.margin:.6f}")
        else:
            lines.append(f"{r.label}\t{r.values.size}\t{r.mean:.6f}\t{r.se:.6f}\t{Z_CRIT * r.se:.6f}")
    path.write_text("\n".join(lines) + "\n")
    return path
