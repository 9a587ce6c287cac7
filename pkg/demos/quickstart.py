"""Walk through one replicate by hand, from simulated data to policy values.

    python demos/quickstart.py
"""
import numpy as np

from spectralfqi import (
    FeatureVariant,
    FqiConfig,
    SimConfig,
    architecture_for,
    fit_basis,
    fitted_q_evaluation,
    monte_carlo_value,
    select_kappa,
    spectral_fqi,
)
from spectralfqi.envsim import MixedFrequencyEnv
from spectralfqi.evaluation import evaluator_features

env = MixedFrequencyEnv(SimConfig(n_traj=6, horizon=80, reward_noise=1.0))
ds = env.generate_dataset(seed=0)
print(f"{ds.n_traj} trajectories x {ds.horizon} steps, x in R^{ds.m0}, z in R^{sum(ds.block_lengths)}")

basis = fit_basis(ds)
kappa = select_kappa(basis, 0.95)
ratio = basis.explained_variance_ratio()
print("variance explained by the first components:", np.round(ratio[:8], 3))
print(f"kappa for 95% of the variance: {kappa}")

v_max = ds.r_max / (1 - 0.5)
values = {}
for variant in (FeatureVariant.pca(kappa), FeatureVariant.all(), FeatureVariant.ave()):
    arch = architecture_for(variant, ds.m0, ds.block_lengths, v_max)
    _, policy = spectral_fqi(ds, variant, basis, arch, FqiConfig(seed=0))
    mc = monte_carlo_value(policy, env, n_mc=500, t_mc=20, seed=0, label=variant.label)
    values[variant.label] = mc
    print(f"{variant.label:>6}: Monte Carlo value {mc.mean:.3f} (se {mc.se:.3f})")

# the same PCA policy scored offline, from a held-out sample of initial states
arch = architecture_for(FeatureVariant.pca(kappa), ds.m0, ds.block_lengths, v_max)
_, pca_policy = spectral_fqi(ds, FeatureVariant.pca(kappa), basis, arch, FqiConfig(seed=0))
held_out = env.generate_dataset(seed=0, n_traj=200, horizon=2, stream=2)
fqe_basis, fqe_variant = evaluator_features("pca", ds)
fqe = fitted_q_evaluation(pca_policy, ds, fqe_basis, fqe_variant, eval_ds=held_out)
print(f"FQE estimate for pca:{kappa}: {fqe:.3f}")
