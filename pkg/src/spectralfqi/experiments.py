"""Seeded experiment harness: simulate, train every feature variant, evaluate, compare.

A replicate is one seed.  For simulator experiments the seed picks the
training dataset, the FQI randomness and the Monte Carlo rollouts; every
variant within a replicate sees the same data and the same rollout noise, so
differences between variants are paired.  For a fixed dataset (``dataset``
set) the seed indexes a train/test split of its trajectories instead and
values come from FQE on the held-out trajectories.

Output files carry no timestamps, so rerunning an ``ExperimentSpec`` reproduces them byte for byte.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dataset import TrajectoryDataset, load_trajectories, save_trajectories
from .envsim import MixedFrequencyEnv, SimConfig, make_env, rollout, save_sim_config
from .errors import ConfigurationError
from .evaluation import (
    FQE_FEATURES,
    EvalReport,
    compare_policies,
    evaluator_features,
    fitted_q_evaluation,
    write_reports,
    write_summary_table,
)
from .forest import ForestConfig
from .fqi import FeatureVariant, FqiConfig, architecture_for, spectral_fqi
from .spectral import fit_basis, select_kappa

log = logging.getLogger(__name__)

EVAL_MODES = ("monte-carlo", "fqe")

# trajectory stream for held-out simulated evaluation data (training data uses 0, rollouts 1)
_EVAL_DATA_STREAM = 2


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines an experiment's outputs."""

    sim: SimConfig = field(default_factory=SimConfig)
    dataset: str | None = None
    variants: tuple[str, ...] = ("pca", "all", "ave", "bottleneck")
    kappas: tuple[int, ...] = ()
    variance_threshold: float = 0.95
    fqi: FqiConfig = field(default_factory=FqiConfig)
    hidden_widths: tuple[int, ...] = (15, 5, 5)
    dropout_rate: float = 0.1
    eval_mode: str = "monte-carlo"
    n_mc: int = 100
    t_mc: int = 20
    fqe_iterations: int = 30
    fqe_features: str = "pca"
    fqe_variance: float = 0.99
    forest: ForestConfig = field(default_factory=ForestConfig)
    n_test: int = 3
    seeds: tuple[int, ...] = tuple(range(20))
    out_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "kappas", tuple(int(k) for k in self.kappas))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.variants or not self.seeds:
            raise ConfigurationError("variant and seed lists must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        if len(set(self.variants)) != len(self.variants):
            raise ConfigurationError("variants must be distinct")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigurationError(f"eval_mode must be one of {EVAL_MODES}")
        if self.dataset is not None and self.eval_mode != "fqe":
            raise ConfigurationError("a fixed dataset can only be evaluated with fqe")
        for v in self.variants:
            FeatureVariant.parse(v, kappa=1)  # validates the kind
        if self.fqe_features not in FQE_FEATURES:
            raise ConfigurationError(f"fqe_features must be one of {FQE_FEATURES}")
        if not 0 < self.variance_threshold <= 1 or not 0 < self.fqe_variance <= 1:
            raise ConfigurationError("variance thresholds must be in (0, 1]")

    def to_record(self) -> dict:
        """Fields that determine results (output location and worker count excluded)."""
        rec = asdict(self)
        del rec["out_dir"], rec["workers"]
        return rec


def resolve_variant(text: str, basis, threshold: float) -> FeatureVariant:
    """Parse a variant name; a missing kappa is chosen by explained variance."""
    kappa = None
    if ":" not in text and text.split(":")[0] in ("pca", "bottleneck", "bottle"):
        kappa = select_kappa(basis, threshold)
    return FeatureVariant.parse(text, kappa=kappa)


def train_variant(ds: TrajectoryDataset, variant: FeatureVariant, basis, spec: ExperimentSpec, seed: int):
    """Fit one variant's greedy policy on ``ds``."""
    v_max = ds.r_max / (1 - spec.fqi.gamma)
    arch = architecture_for(variant, ds.m0, ds.block_lengths, v_max, spec.hidden_widths, spec.dropout_rate)
    cfg = FqiConfig(spec.fqi.iterations, spec.fqi.gamma, spec.fqi.sample_size, spec.fqi.train,
                    spec.fqi.warm_start, seed)
    return spectral_fqi(ds, variant, basis, arch, cfg)


def split_indices(n_traj: int, n_test: int, seed: int) -> tuple[list[int], list[int]]:
    """The ``seed``-th train/test split (lexicographic order of test sets, cycling)."""
    if not 0 < n_test < n_traj:
        raise ConfigurationError("need 0 < n_test < number of trajectories")
    combos = math.comb(n_traj, n_test)
    test = next(itertools.islice(itertools.combinations(range(n_traj), n_test), seed % combos, None))
    train = [i for i in range(n_traj) if i not in test]
    return train, list(test)


def run_replicate(spec: ExperimentSpec, seed: int) -> list[dict]:
    """Train and evaluate every variant (and every kappa in ``spec.kappas``) for one seed.

    Returns tidy rows ``{seed, label, kappa, value, variance_explained}``; ``label``
    is the variant name as requested and ``kappa`` the value actually used.
    """
    env = None
    if spec.dataset is None:
        env = make_env(spec.sim)
        train_ds = env.generate_dataset(seed=seed)
        eval_ds = None
        if spec.eval_mode == "fqe":
            eval_ds = env.generate_dataset(seed=seed, stream=_EVAL_DATA_STREAM)
    else:
        full = load_trajectories(spec.dataset)
        tr_idx, te_idx = split_indices(full.n_traj, spec.n_test, seed)
        train_ds, eval_ds = full.select(tr_idx), full.select(te_idx)
    basis = fit_basis(train_ds)
    ratio = basis.explained_variance_ratio()

    # (label, variant): a variant whose kappa is chosen per replicate keeps its
    # requested name as label so replicates stay paired across seeds
    variants = []
    for text in spec.variants:
        if spec.kappas and text in ("pca", "bottleneck"):
            variants += [(f"{text}:{k}", FeatureVariant(text, k)) for k in spec.kappas]
        else:
            variants.append((text, resolve_variant(text, basis, spec.variance_threshold)))

    if spec.eval_mode == "fqe":
        fqe_basis, fqe_variant = evaluator_features(spec.fqe_features, train_ds, spec.fqe_variance)
    rows = []
    for label, variant in variants:
        _, policy = train_variant(train_ds, variant, basis, spec, seed)
        if spec.eval_mode == "monte-carlo":
            value = float(rollout(env, policy, spec.n_mc, spec.t_mc, seed).mean())
        else:
            value = fitted_q_evaluation(policy, train_ds, fqe_basis, fqe_variant,
                                        spec.fqe_iterations, spec.forest, spec.fqi.gamma,
                                        eval_ds=eval_ds)
        k = variant.kappa
        rows.append({"seed": seed, "label": label, "kappa": k, "value": value,
                     "variance_explained": float(ratio[k - 1]) if k else None})
        log.info("seed %d %s value %.4f", seed, label, value)
    return rows


def _replicate_job(args):
    spec, seed = args
    return run_replicate(spec, seed)


def run_replicates(spec: ExperimentSpec) -> list[dict]:
    """All seeds; rows are merged in seed order whatever the worker count."""
    jobs = [(spec, s) for s in spec.seeds]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            per_seed = list(pool.map(_replicate_job, jobs))
    else:
        per_seed = [_replicate_job(j) for j in jobs]
    return [row for rows in per_seed for row in rows]


def reports_by_label(rows: Sequence[dict], group: str = "label") -> dict:
    """One :class:`EvalReport` per distinct label, values ordered by seed."""
    labels = list(dict.fromkeys(r[group] for r in rows))
    out = {}
    for lab in labels:
        sel = sorted((r for r in rows if r[group] == lab), key=lambda r: r["seed"])
        out[lab] = EvalReport.from_values(str(lab), [r["value"] for r in sel], [r["seed"] for r in sel])
    return out


# ---------------------------------------------------------------- output files

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_tidy(rows: Sequence[dict], path, columns: Sequence[str]) -> Path:
    path = Path(path)
    lines = ["\t".join(columns)] + ["\t".join(_fmt(r.get(c)) for c in columns) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_manifest(out: Path, command: str, spec_record: dict, files: Sequence[str]) -> Path:
    """``manifest.json`` with the command, its full spec, seeds and package versions."""
    record = {
        "command": command,
        "spec": spec_record,
        "seeds": spec_record.get("seeds"),
        "versions": {"spectralfqi": __version__, "numpy": np.__version__},
        "files": sorted(files),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _out_dir(spec: ExperimentSpec) -> Path:
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def simulate(spec: ExperimentSpec) -> list[Path]:
    """One dataset file plus the frozen environment per seed."""
    out = _out_dir(spec)
    env = MixedFrequencyEnv(spec.sim)
    written = [save_sim_config(env, out / "sim_config.txt")]
    for seed in spec.seeds:
        ds = env.generate_dataset(seed=seed)
        written.append(save_trajectories(ds, out / f"dataset_seed{seed}.csv"))
    write_manifest(out, "simulate", spec.to_record(), [p.name for p in written])
    return written


def sweep_kappa(spec: ExperimentSpec) -> list[dict]:
    """Per-kappa mean value, SE and mean explained variance of the PCA policy."""
    if not spec.kappas:
        raise ConfigurationError("sweep_kappa needs a kappa list")
    pca_spec = ExperimentSpec(**{**_shallow(spec), "variants": ("pca",)})
    rows = run_replicates(pca_spec)
    out = _out_dir(spec)
    reports = reports_by_label(rows, group="kappa")
    table = []
    for k in spec.kappas:
        rep = reports[k]
        ve = float(np.mean([r["variance_explained"] for r in rows if r["kappa"] == k]))
        table.append({"kappa": k, "mean": rep.mean, "se": rep.se, "n": rep.values.size,
                      "variance_explained": ve})
    write_tidy(rows, out / "values.tsv", ("seed", "label", "kappa", "value", "variance_explained"))
    write_tidy(table, out / "kappa_table.tsv", ("kappa", "mean", "se", "n", "variance_explained"))
    write_reports(list(reports.values()), out / "reports.jsonl")
    write_manifest(out, "sweep-kappa", spec.to_record(),
                   ["values.tsv", "kappa_table.tsv", "reports.jsonl"])
    return table


def compare(spec: ExperimentSpec):
    """Paired comparison of the first variant against each of the others."""
    rows = run_replicates(spec)
    out = _out_dir(spec)
    reports = reports_by_label(rows)
    labels = list(reports)
    ref = reports[labels[0]]
    comparisons = [compare_policies(ref, reports[lab]) for lab in labels[1:]]
    write_tidy(rows, out / "values.tsv", ("seed", "label", "kappa", "value", "variance_explained"))
    write_reports(list(reports.values()) + comparisons, out / "reports.jsonl")
    write_summary_table(list(reports.values()) + comparisons, out / "summary.tsv")
    write_manifest(out, "compare", spec.to_record(), ["values.tsv", "reports.jsonl", "summary.tsv"])
    return reports, comparisons


def _shallow(spec: ExperimentSpec) -> dict:
    return {f: getattr(spec, f) for f in spec.__dataclass_fields__}
