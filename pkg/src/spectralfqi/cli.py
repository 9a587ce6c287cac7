"""Command-line entry point: ``spectralfqi <command> [flags]``.

Commands: simulate, train, sweep-kappa, evaluate, compare, gradient-check.
Exit code is 0 on success; failures print a JSON error record on stderr and
exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import load_trajectories
from .envsim import SimConfig, load_sim_config, make_env
from .errors import SpectralFQIError
from .evaluation import EvalReport, evaluator_features, fitted_q_evaluation, monte_carlo_value, write_reports
from .experiments import ExperimentSpec, compare, resolve_variant, simulate, sweep_kappa, train_variant, write_manifest
from .forest import ForestConfig
from .fqi import FqiConfig, load_policy, save_policy
from .neuralnet import NetworkArchitecture, TrainConfig, gradient_check
from .spectral import fit_basis

GRADIENT_TOLERANCE = 1e-4


class UsageError(SpectralFQIError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(text: str) -> tuple[int, ...]:
    """``"1,2,5"`` or a range ``"0-19"`` (or a mix: ``"0-3,10"``)."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        lo, sep, hi = part.partition("-")
        out += list(range(int(lo), int(hi) + 1)) if sep and lo else [int(part)]
    return tuple(out)


def _add_sim(p):
    g = p.add_argument_group("simulator")
    g.add_argument("--n-traj", type=int, default=6)
    g.add_argument("--horizon", type=int, default=80)
    g.add_argument("--m0", type=int, default=2)
    g.add_argument("--J", dest="n_blocks", type=int, default=4, help="number of high-frequency blocks")
    g.add_argument("--block-length", type=int, default=27)
    g.add_argument("--zeta", type=float, default=0.6)
    g.add_argument("--setting", choices=("dependent", "independent-blocks"), default="dependent")
    g.add_argument("--reward-noise", type=float, default=SimConfig.reward_noise)
    g.add_argument("--gamma", type=float, default=0.5)
    g.add_argument("--sim-seed", type=int, default=0, help="seed of the environment coefficients")
    g.add_argument("--sim-config", help="frozen environment file written by 'simulate'")


def _add_fqi(p):
    g = p.add_argument_group("fitted Q-iteration")
    g.add_argument("--iterations", type=int, default=50)
    g.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    g.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    g.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    g.add_argument("--sample-size", type=int, default=None)
    g.add_argument("--hidden", type=_ints, default=(15, 5, 5))
    g.add_argument("--dropout", type=float, default=0.1)
    g.add_argument("--threshold", type=float, default=0.95, help="explained-variance level for kappa")


def _add_eval(p):
    g = p.add_argument_group("evaluation")
    g.add_argument("--eval-mode", choices=("monte-carlo", "fqe"), default="monte-carlo")
    g.add_argument("--n-mc", type=int, default=100)
    g.add_argument("--t-mc", type=int, default=20)
    g.add_argument("--fqe-iterations", type=int, default=30)
    g.add_argument("--fqe-features", choices=("pca", "all"), default="pca",
                   help="FQE regressor inputs: principal-component scores or raw [x, z]")
    g.add_argument("--fqe-variance", type=float, default=0.99,
                   help="explained variance kept by the FQE regressor's components")
    g.add_argument("--trees", type=int, default=100)
    g.add_argument("--n-test", type=int, default=3, help="held-out trajectories per split (fixed dataset)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectralfqi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write simulated datasets and the frozen environment")
    _add_sim(p)
    p.add_argument("--seeds", type=_ints, default=(0,))
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit one variant's policy and save it")
    _add_sim(p)
    _add_fqi(p)
    p.add_argument("--dataset", help="trajectory file (default: simulate one)")
    p.add_argument("--variant", default="pca", help="pca[:k], all, ave, bottleneck[:k]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="value of a saved policy")
    _add_sim(p)
    _add_eval(p)
    p.add_argument("--policy", required=True, help="directory written by 'train'")
    p.add_argument("--dataset", help="trajectory file for fqe")
    p.add_argument("--eval-dataset", help="trajectory file supplying initial states for fqe")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    for name, helptext in (("sweep-kappa", "value of the PCA policy across kappa"),
                           ("compare", "paired comparison of feature variants")):
        p = sub.add_parser(name, help=helptext)
        _add_sim(p)
        _add_fqi(p)
        _add_eval(p)
        p.add_argument("--dataset", help="fixed trajectory file; seeds index train/test splits")
        p.add_argument("--seeds", type=_ints, default=tuple(range(20)))
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", required=True)
        if name == "sweep-kappa":
            p.add_argument("--kappas", type=_ints, default=tuple(range(2, 75, 4)))
        else:
            p.add_argument("--variants", default="pca,all,ave,bottleneck")

    p = sub.add_parser("gradient-check", help="backprop against central finite differences")
    p.add_argument("--arch", type=_ints, default=(15, 5, 5), help="hidden widths")
    p.add_argument("--input-dim", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional JSON result file")
    return parser


def _sim_config(args) -> SimConfig:
    return SimConfig(n_traj=args.n_traj, horizon=args.horizon, m0=args.m0,
                     block_lengths=(args.block_length,) * args.n_blocks, zeta=args.zeta,
                     setting=args.setting, gamma=args.gamma, reward_noise=args.reward_noise,
                     seed=args.sim_seed)


def _env(args):
    return load_sim_config(args.sim_config) if args.sim_config else make_env(_sim_config(args))


def _fqi_config(args, seed: int = 0) -> FqiConfig:
    train = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr)
    return FqiConfig(iterations=args.iterations, gamma=args.gamma, sample_size=args.sample_size,
                     train=train, seed=seed)


def _spec(args, **extra) -> ExperimentSpec:
    env = _env(args)
    return ExperimentSpec(
        sim=env.cfg, dataset=getattr(args, "dataset", None), fqi=_fqi_config(args),
        hidden_widths=args.hidden, dropout_rate=args.dropout, variance_threshold=args.threshold,
        eval_mode=args.eval_mode, n_mc=args.n_mc, t_mc=args.t_mc, fqe_iterations=args.fqe_iterations,
        fqe_features=args.fqe_features, fqe_variance=args.fqe_variance,
        forest=ForestConfig(n_trees=args.trees), n_test=args.n_test, seeds=args.seeds,
        out_dir=args.out, workers=args.workers, **extra)


def cmd_simulate(args) -> dict:
    spec = ExperimentSpec(sim=_env(args).cfg, seeds=args.seeds, out_dir=args.out)
    files = simulate(spec)
    return {"files": [str(f) for f in files]}


def cmd_train(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_trajectories(args.dataset) if args.dataset else _env(args).generate_dataset(seed=args.seed)
    basis = fit_basis(ds)
    variant = resolve_variant(args.variant, basis, args.threshold)
    spec = ExperimentSpec(sim=_env(args).cfg, dataset=args.dataset, fqi=_fqi_config(args),
                          variants=(variant.label,), hidden_widths=args.hidden,
                          dropout_rate=args.dropout, seeds=(args.seed,), out_dir=args.out,
                          eval_mode="fqe" if args.dataset else "monte-carlo")
    q, _ = train_variant(ds, variant, basis, spec, args.seed)
    save_policy(q, out)
    files = ["policy.json", *(f"net_{a}.txt" for a in range(q.action_count))]
    if q.basis is not None:
        files.append("basis.txt")
    write_manifest(out, "train", spec.to_record(), files)
    return {"policy": str(out), "variant": variant.label}


def cmd_evaluate(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    policy = load_policy(args.policy)
    if args.eval_mode == "monte-carlo":
        env = _env(args)
        report = monte_carlo_value(policy, env, args.n_mc, args.t_mc, args.seed, label="monte-carlo")
    else:
        if not args.dataset:
            raise UsageError("fqe needs --dataset")
        ds = load_trajectories(args.dataset)
        eval_ds = load_trajectories(args.eval_dataset) if args.eval_dataset else None
        basis, variant = evaluator_features(args.fqe_features, ds, args.fqe_variance)
        value = fitted_q_evaluation(policy, ds, basis, variant, args.fqe_iterations,
                                    ForestConfig(n_trees=args.trees, seed=args.seed), args.gamma,
                                    eval_ds=eval_ds)
        report = EvalReport.from_values("fqe", [value], [args.seed])
    write_reports([report], out / "evaluation.jsonl")
    write_manifest(out, "evaluate", {k: v for k, v in vars(args).items() if k not in ("out", "func")},
                   ["evaluation.jsonl"])
    return {"mean": report.mean, "se": report.se}


def cmd_sweep_kappa(args) -> dict:
    table = sweep_kappa(_spec(args, variants=("pca",), kappas=args.kappas))
    return {"table": table}


def cmd_compare(args) -> dict:
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    reports, comparisons = compare(_spec(args, variants=variants))
    return {"means": {k: r.mean for k, r in reports.items()},
            "differences": {c.label: [c.mean_diff, c.margin] for c in comparisons}}


def cmd_gradient_check(args) -> dict:
    arch = NetworkArchitecture(args.input_dim, args.arch)
    err = gradient_check(arch, seed=args.seed)
    result = {"max_relative_error": err, "tolerance": GRADIENT_TOLERANCE,
              "passed": bool(err < GRADIENT_TOLERANCE)}
    if args.out:
        Path(args.out).write_text(json.dumps(result, sort_keys=True) + "\n")
    return result


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-kappa": cmd_sweep_kappa,
    "compare": cmd_compare,
    "gradient-check": cmd_gradient_check,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        result = COMMANDS[args.command](args)
    except (SpectralFQIError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True, default=str))
    if args.command == "gradient-check" and not result["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
