"""Train/test protocol on a fixed 12-trajectory dataset, scored with FQE.

Stands in for a small clinical cohort: each replicate trains on 9 trajectories
and evaluates on the held-out 3, and the table reports the PCA policy minus
each baseline as mean +/- 1.96 SE over replicates.  A split costs one to two
minutes on one core (FQE dominates), so the default runs the first 3 of the 220.

    python demos/fixed_dataset_protocol.py [n_splits]
"""
import sys
import tempfile
from pathlib import Path

from spectralfqi import SimConfig
from spectralfqi.envsim import MixedFrequencyEnv
from spectralfqi.dataset import save_trajectories
from spectralfqi.experiments import ExperimentSpec, compare
from spectralfqi.forest import ForestConfig

n_splits = int(sys.argv[1]) if len(sys.argv) > 1 else 3
out = Path(tempfile.mkdtemp(prefix="fixed_protocol_"))

env = MixedFrequencyEnv(SimConfig(n_traj=12, horizon=100, reward_noise=1.0))
data_file = save_trajectories(env.generate_dataset(seed=0), out / "cohort.csv")

spec = ExperimentSpec(dataset=str(data_file), eval_mode="fqe", n_test=3,
                      variants=("pca", "all", "ave", "bottleneck"),
                      forest=ForestConfig(n_trees=30), seeds=tuple(range(n_splits)),
                      out_dir=str(out / "compare"))
reports, comparisons = compare(spec)

print(f"{n_splits} train/test splits of 12 trajectories (9 train, 3 test)")
for label, rep in reports.items():
    print(f"  {label:>14}: FQE value {rep.mean:.3f} (se {rep.se:.3f})")
for c in comparisons:
    print(f"  {c.label:>14}: {c.mean_diff:+.3f} +/- {c.margin:.3f}")
print("files in", out / "compare")
