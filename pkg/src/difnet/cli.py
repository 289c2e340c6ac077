"""Command-line interface.

Commands: simulate | train | evaluate | sweep-sigma | bench | verify.
Exit codes: 0 success, 1 usage/config error, 2 verification failure,
3 runtime failure.  Every command is reproducible from (config, seed);
reports carry no timestamps, so re-running overwrites byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, resolve_scenario
from .datasets import generate_dataset, load_dataset, save_dataset
from .evaluation import (
    EvaluationReport,
    bench_fusion_time,
    evaluate_methods,
    sigma_sweep,
)
from .filters import StepSnapshot, predict_moments, verify_assimilation
from .network import load_checkpoint, save_checkpoint
from .pipeline import global_motion, run_centralized
from .scenarios import Scenario
from .statespace import GaussianBelief
from .training import TrainingConfig, TrainingDiverged, train

__all__ = ["main"]

VERIFY_TOLERANCE = 1e-8
POWER_THRESHOLD = 1e-4


class VerificationFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with code 1
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="difnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="builtin name or scenario YAML path")
        p.add_argument("--config", help="run-config YAML path")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker cap for parallel stages")
        p.add_argument("--methods", help="comma-separated method list")
        return p

    common(sub.add_parser("simulate", help="generate and persist a dataset"))

    p = common(sub.add_parser("train", help="train the fusion-weight networks"))
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.add_argument("--data", help="dataset directory (default <out>/dataset)")
    p.add_argument("--resume", action="store_true", help="start from existing checkpoints")

    p = common(sub.add_parser("evaluate", help="evaluate methods on the test split"))
    p.add_argument("--data", help="dataset directory (default <out>/dataset)")
    p.add_argument("--models", help="checkpoint directory (default <out>/checkpoints)")
    p.add_argument("--plots", action="store_true", help="also write SVG charts")

    p = common(sub.add_parser("sweep-sigma", help="RMSE vs time-varying noise amplitude"))
    p.add_argument("--models", help="checkpoint directory (default <out>/checkpoints)")
    p.add_argument("--sigmas", help="comma-separated sigma grid")

    p = common(sub.add_parser("bench", help="fusion-step timing ratios"))
    p.add_argument("--reps", type=int, help="timing repetitions")
    p.add_argument("--data", help="dataset directory (default <out>/dataset)")
    p.add_argument("--models", help="checkpoint directory (default <out>/checkpoints)")

    common(sub.add_parser("verify", help="assimilation identity residual suite"))
    return parser


def _merged_config(args) -> RunConfig:
    config = load_config(args.config)
    for key in ("scenario", "seed", "out", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    if getattr(args, "methods", None):
        config.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "sigmas", None):
        config.sigmas = [float(v) for v in args.sigmas.split(",")]
    if getattr(args, "reps", None):
        config.bench_reps = args.reps
    if getattr(args, "epochs", None) is not None:
        config.training.epochs = args.epochs
    if getattr(args, "plots", False):
        config.plots = True
    return config


def _training_config(config: RunConfig) -> TrainingConfig:
    t = config.training
    return TrainingConfig(
        learning_rate=t.learning_rate,
        batch_size=t.batch_size,
        weight_decay=t.weight_decay,
        epochs=t.epochs,
        scheduler=t.scheduler,
        lr_min=t.lr_min,
        lr_max=t.lr_max,
        lr_period=t.lr_period,
        seed=config.seed,
        grad_clip=t.grad_clip,
        out_scale=t.out_scale,
        width_factor=t.width_factor,
    )


def _dataset_dir(args, config: RunConfig) -> Path:
    data = getattr(args, "data", None)
    return Path(data) if data else Path(config.out) / "dataset"


def _models_dir(args, config: RunConfig) -> Path:
    models = getattr(args, "models", None)
    return Path(models) if models else Path(config.out) / "checkpoints"


def _load_models(directory: Path, scenario: Scenario):
    models = {}
    for t in scenario.transforms:
        path = directory / f"node_{t.sensor_id}.difn"
        if not path.exists():
            raise FileNotFoundError(
                f"missing checkpoint {path}; run `difnet train` first"
            )
        models[t.sensor_id], _ = load_checkpoint(path)
    return models


def _dataset_for(config: RunConfig, scenario: Scenario, directory: Path):
    if not (directory / "manifest.json").exists():
        raise FileNotFoundError(
            f"no dataset at {directory}; run `difnet simulate` first"
        )
    dataset = load_dataset(directory)
    if dataset.scenario_hash != scenario.fingerprint():
        raise ConfigError(
            f"dataset at {directory} was generated for a different scenario "
            f"(hash {dataset.scenario_hash[:12]} != {scenario.fingerprint()[:12]})"
        )
    return dataset


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    config = _merged_config(args)
    scenario = resolve_scenario(config)
    dataset = generate_dataset(scenario, config.seed, threads=config.threads)
    out = Path(config.out) / "dataset"
    manifest = save_dataset(dataset, out)
    print(f"wrote {sum(dataset.split_sizes().values())} trajectories to {out}")
    print(f"manifest: {manifest}")
    return 0


def cmd_train(args) -> int:
    config = _merged_config(args)
    scenario = resolve_scenario(config)
    dataset = _dataset_for(config, scenario, _dataset_dir(args, config))
    tcfg = _training_config(config)
    initial = None
    ckpt_dir = _models_dir(args, config)
    if args.resume:
        initial = _load_models(ckpt_dir, scenario)
    outcome = train(
        dataset, scenario, tcfg, initial_models=initial,
        log=lambda msg: print(msg, flush=True),
    )
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "scenario": scenario.name,
        "scenario_hash": scenario.fingerprint(),
        "seed": config.seed,
        "training": vars(config.training),
        "best_epoch": outcome.best_epoch,
        "best_cv": outcome.best_cv,
    }
    for nid, model in outcome.models.items():
        save_checkpoint(ckpt_dir / f"node_{nid}.difn", model, manifest)
    write_csv(
        Path(config.out) / "loss_curve.csv",
        outcome.history,
        ["epoch", "node", "train_loss", "cv_loss"],
    )
    (ckpt_dir / "best.json").write_text(
        json.dumps({"best_epoch": outcome.best_epoch, "best_cv": outcome.best_cv},
                   indent=2, sort_keys=True) + "\n"
    )
    print(f"checkpoints in {ckpt_dir} (best epoch {outcome.best_epoch})")
    return 0


def _write_plots(report: EvaluationReport, out: Path) -> None:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    for field_name, attr in (("position", "rmse_pos"), ("velocity", "rmse_vel")):
        sensors = sorted(next(iter(report.methods.values())).rmse_pos)
        fig, axes = plt.subplots(
            1, len(sensors), figsize=(4 * len(sensors), 3.2), sharex=True
        )
        axes = np.atleast_1d(axes)
        for ax, sid in zip(axes, sensors):
            for method in sorted(report.methods):
                curve = getattr(report.methods[method], attr)[sid]
                ax.plot(np.arange(1, len(curve) + 1), curve, label=method)
            ax.set_title(f"sensor {sid}")
            ax.set_xlabel("step")
            ax.set_ylabel(f"RMSE {field_name}")
        axes[0].legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / f"rmse_{field_name}.svg", metadata={"Date": None})
        plt.close(fig)


def cmd_evaluate(args) -> int:
    config = _merged_config(args)
    scenario = resolve_scenario(config)
    dataset = _dataset_for(config, scenario, _dataset_dir(args, config))
    models = None
    if "difnet" in config.methods:
        models = _load_models(_models_dir(args, config), scenario)
    report = evaluate_methods(config.methods, dataset, scenario, models)
    out = Path(config.out)
    write_csv(
        out / "report.csv",
        report.rows(),
        ["method", "sensor", "step", "rmse_position", "rmse_velocity",
         "stderr_position", "stderr_velocity"],
    )
    write_csv(
        out / "summary.csv",
        report.summary_rows(),
        ["method", "sensor", "mean_rmse_pos", "mean_rmse_vel", "diverged"],
    )
    fingerprints = {m: report.methods[m].fingerprint for m in report.methods}
    (out / "report_manifest.json").write_text(
        json.dumps(
            {
                "scenario": scenario.name,
                "scenario_hash": scenario.fingerprint(),
                "seed": config.seed,
                "method_fingerprints": fingerprints,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    if config.plots:
        _write_plots(report, out)
    print(f"reports in {out}")
    return 0


def cmd_sweep(args) -> int:
    config = _merged_config(args)
    scenario = resolve_scenario(config)
    models = None
    if "difnet" in config.methods:
        models = _load_models(_models_dir(args, config), scenario)
    rows = sigma_sweep(config.sigmas, scenario, config.seed, config.methods, models)
    out = Path(config.out)
    write_csv(
        out / "sweep.csv",
        rows,
        ["sigma", "method", "sensor", "mean_rmse_pos", "mean_rmse_vel", "diverged"],
    )
    print(f"sweep table in {out / 'sweep.csv'}")
    return 0


def cmd_bench(args) -> int:
    config = _merged_config(args)
    scenario = resolve_scenario(config)
    dataset = _dataset_for(config, scenario, _dataset_dir(args, config))
    methods = [m for m in config.methods if m != "centralized-exact"]
    if "dif-exact" not in methods:
        methods = ["dif-exact"] + methods
    models = None
    if "difnet" in methods:
        models = _load_models(_models_dir(args, config), scenario)
    table = bench_fusion_time(
        methods, dataset, scenario, repetitions=config.bench_reps, models=models
    )
    rows = [
        {
            "method": m,
            "median_seconds": table[m]["median_seconds"],
            "ratio_vs_dif_exact": table[m]["ratio_vs_dif_exact"],
            "spread": table[m]["spread"],
        }
        for m in methods
    ]
    write_csv(
        Path(config.out) / "bench.csv",
        rows,
        ["method", "median_seconds", "ratio_vs_dif_exact", "spread"],
    )
    for row in rows:
        print(
            f"{row['method']:12s} ratio {row['ratio_vs_dif_exact']:.4f} "
            f"median {row['median_seconds'] * 1e3:.2f} ms"
        )
    return 0


def cmd_verify(args) -> int:
    config = _merged_config(args)
    scenario = resolve_scenario(config)
    dataset = generate_dataset(
        scenario, config.seed, split_sizes=(0, 0, 1), threads=config.threads
    )
    traj = dataset.splits["test"][0]
    exact = scenario.exact_params()
    inexact = scenario.inexact_params()

    rows = []
    worst_exact = 0.0
    worst_power = 0.0
    gmotion_chain = run_centralized(
        scenario, exact, {sid: z for sid, z in traj.measurements.items()}
    )
    # Per-step snapshots: the centralized prior at step k comes from the
    # centralized posterior at k-1 (the consistent-prior precondition).
    gmotion = global_motion(scenario, exact)
    mean = scenario.init_mean[:, None]
    cov = scenario.init_cov
    for k in range(scenario.steps):
        mean_p, cov_p = predict_moments(mean, cov, gmotion.transition, gmotion.noise_cov)
        prior = GaussianBelief(mean_p[:, 0], cov_p)
        measurements = {
            sid: traj.measurements[sid][k] for sid in traj.measurements
        }
        report = verify_assimilation(
            StepSnapshot(prior, list(scenario.transforms), list(scenario.sensors),
                         measurements, exact.r_stacked, exact.r_stacked)
        )
        power = verify_assimilation(
            StepSnapshot(prior, list(scenario.transforms), list(scenario.sensors),
                         measurements, inexact.r_stacked, exact.r_stacked)
        )
        for name, (ab, rel) in sorted(report.residuals.items()):
            rows.append({"step": k + 1, "check": name, "abs": ab, "rel": rel})
        worst_exact = max(worst_exact, report.max_relative())
        worst_power = max(worst_power, power.max_relative())
        mean = gmotion_chain.global_means[k][0]
        cov = gmotion_chain.global_covs[k][0]

    # Multi-step drift of the free-running decentralized local chains vs the
    # projected centralized posterior: reported, never gated (the one-step
    # identity above is the assertable statement).
    from .pipeline import ModelWeightProvider, build_nodes, run_decentralized

    nodes = build_nodes(scenario, exact)
    provider = ModelWeightProvider(scenario, "ccmn", exact.r_stacked)
    graph = scenario.graph()
    dec = run_decentralized(
        scenario, nodes, graph,
        {sid: z for sid, z in traj.measurements.items()}, provider,
    )
    for k in range(scenario.steps):
        info_central = np.linalg.inv(gmotion_chain.global_covs[k][0])
        for t in scenario.transforms:
            local_cov = dec.local_covs[t.sensor_id][k][0]
            info_local = np.linalg.inv(local_cov)
            projected = t.pinv.T @ info_central @ t.pinv
            ab = float(np.linalg.norm(info_local - projected))
            rel = ab / max(float(np.linalg.norm(projected)), 1e-300)
            rows.append(
                {"step": k + 1, "check": f"drift.node{t.sensor_id}", "abs": ab,
                 "rel": rel}
            )

    out = Path(config.out)
    write_csv(out / "verify.csv", rows, ["step", "check", "abs", "rel"])
    drift_rows = [r for r in rows if r["check"].startswith("drift.")]
    print(f"max relative residual (exact R): {worst_exact:.3e}")
    print(f"max relative residual (perturbed R, power check): {worst_power:.3e}")
    print(
        "multi-step local drift (reported, not gated): max rel "
        f"{max(r['rel'] for r in drift_rows):.3e}"
    )
    if worst_exact >= VERIFY_TOLERANCE:
        raise VerificationFailure(
            f"assimilation residual {worst_exact:.3e} >= {VERIFY_TOLERANCE}"
        )
    if worst_power <= POWER_THRESHOLD:
        raise VerificationFailure(
            f"perturbed-R residual {worst_power:.3e} <= {POWER_THRESHOLD}; "
            "the identity check has no power"
        )
    print("verify: OK")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-sigma": cmd_sweep,
    "bench": cmd_bench,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failures map to exit 3
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
