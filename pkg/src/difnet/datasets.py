"""Trajectory dataset generation and columnar-CSV persistence.

Each trajectory is simulated with its own generator seeded
``seed + global_index`` (indices run train, cv, test back to back), so
generation is bitwise reproducible and independent of worker count or
evaluation order.  Process noise is drawn before measurement noise at every
step, which keeps the ground truth identical when only the measurement-noise
scale (the time-varying ``sigma``) changes.

On disk a dataset is one directory per split of per-trajectory CSV files
(step index, truth columns, then per-sensor measurement columns) plus a
JSON manifest recording the scenario fingerprint, seed and split sizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .noise import sample_correlated, time_varying_scale
from .scenarios import Scenario
from .statespace import measure

__all__ = [
    "Trajectory",
    "Dataset",
    "SPLIT_ORDER",
    "simulate_trajectory",
    "generate_dataset",
    "batch_arrays",
    "save_dataset",
    "load_dataset",
]

SPLIT_ORDER = ("train", "cv", "test")


@dataclass(eq=False)
class Trajectory:
    """Ground-truth states (T, m) and per-sensor measurements (T, n_j)."""

    truth: np.ndarray
    measurements: dict[int, np.ndarray]


@dataclass(eq=False)
class Dataset:
    scenario_name: str
    scenario_hash: str
    seed: int
    splits: dict[str, list[Trajectory]]

    def split_sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.splits.items()}


def simulate_trajectory(
    scenario: Scenario,
    rng: np.random.Generator,
    sigma: float | None = None,
    noise_free: bool = False,
) -> Trajectory:
    """Simulate one trajectory of ``scenario.steps`` steps.

    ``sigma`` overrides the scenario's time-varying amplitude; ``noise_free``
    skips all noise draws (measurements equal the measurement means).
    """
    sigma = scenario.sigma if sigma is None else sigma
    f_true = scenario.transition_matrix()
    q_true = scenario.motion.q**2 * scenario.unit_noise_cov()
    chol_q = np.linalg.cholesky(q_true) if q_true.any() else None
    r_base = scenario.true_stacked_cov()

    x = scenario.x0.copy()
    truth = np.empty((scenario.steps, scenario.state_dim))
    meas = {
        s.sensor_id: np.empty((scenario.steps, s.n_meas)) for s in scenario.sensors
    }
    for k in range(1, scenario.steps + 1):
        x = f_true @ x
        if chol_q is not None and not noise_free:
            x = x + chol_q @ rng.standard_normal(scenario.state_dim)
        truth[k - 1] = x
        if noise_free:
            w = np.zeros(r_base.dim)
        else:
            r_k = (
                time_varying_scale(r_base, k, sigma, scenario.noise_period)
                if sigma != 0.0
                else r_base
            )
            w = sample_correlated(r_k, rng)
        for s in scenario.sensors:
            sl = r_base.sensor_slice(s.sensor_id)
            meas[s.sensor_id][k - 1] = measure(s, x) + w[sl]
    return Trajectory(truth, meas)


def generate_dataset(
    scenario: Scenario,
    seed: int,
    split_sizes: tuple[int, int, int] | None = None,
    sigma: float | None = None,
    noise_free: bool = False,
    threads: int = 1,
) -> Dataset:
    """Simulate train/cv/test splits, one independent generator per trajectory.

    Each trajectory owns generator ``seed + global_index``, so the result is
    identical whatever ``threads`` is; workers only share out the indices.
    """
    sizes = split_sizes if split_sizes is not None else scenario.split_sizes

    def _one(index: int) -> Trajectory:
        rng = np.random.default_rng(seed + index)
        return simulate_trajectory(scenario, rng, sigma, noise_free)

    total = sum(sizes)
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows_all = list(pool.map(_one, range(total)))
    else:
        rows_all = [_one(i) for i in range(total)]

    splits: dict[str, list[Trajectory]] = {}
    index = 0
    for name, count in zip(SPLIT_ORDER, sizes):
        splits[name] = rows_all[index : index + count]
        index += count
    return Dataset(scenario.name, scenario.fingerprint(), seed, splits)


def batch_arrays(trajectories: list[Trajectory]) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Stack trajectories into (B, T, m) truth and per-sensor (B, T, n_j)."""
    truth = np.stack([t.truth for t in trajectories])
    ids = sorted(trajectories[0].measurements)
    meas = {
        sid: np.stack([t.measurements[sid] for t in trajectories]) for sid in ids
    }
    return truth, meas


# ---------------------------------------------------------------------------
# Persistence


def _fmt(x: float) -> str:
    return repr(float(x))


def _traj_to_csv(traj: Trajectory) -> str:
    ids = sorted(traj.measurements)
    m = traj.truth.shape[1]
    header = ["k"]
    header += [f"truth_{i}" for i in range(m)]
    for sid in ids:
        header += [f"s{sid}_c{i}" for i in range(traj.measurements[sid].shape[1])]
    lines = [",".join(header)]
    for k in range(traj.truth.shape[0]):
        row = [str(k + 1)]
        row += [_fmt(v) for v in traj.truth[k]]
        for sid in ids:
            row += [_fmt(v) for v in traj.measurements[sid][k]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _traj_from_csv(text: str) -> Trajectory:
    lines = text.strip().split("\n")
    header = lines[0].split(",")
    columns = {name: i for i, name in enumerate(header)}
    truth_cols = sorted(
        (c for c in columns if c.startswith("truth_")), key=lambda c: int(c[6:])
    )
    sensors: dict[int, list[str]] = {}
    for c in columns:
        if c.startswith("s") and "_c" in c:
            sid = int(c[1 : c.index("_c")])
            sensors.setdefault(sid, []).append(c)
    for sid in sensors:
        sensors[sid].sort(key=lambda c: int(c.split("_c")[1]))
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    truth = data[:, [columns[c] for c in truth_cols]]
    meas = {
        sid: data[:, [columns[c] for c in cols]] for sid, cols in sensors.items()
    }
    return Trajectory(truth, meas)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write per-split trajectory CSVs plus the manifest; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, rows in dataset.splits.items():
        sub = out / split
        sub.mkdir(parents=True, exist_ok=True)
        for i, traj in enumerate(rows):
            (sub / f"traj_{i:03d}.csv").write_text(_traj_to_csv(traj))
    manifest = {
        "scenario": dataset.scenario_name,
        "scenario_hash": dataset.scenario_hash,
        "seed": dataset.seed,
        "splits": dataset.split_sizes(),
        "format": "per-trajectory CSV: k, truth_0..truth_{m-1}, then s<ID>_c<i> columns",
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(in_dir) -> Dataset:
    """Read a dataset directory written by :func:`save_dataset`."""
    root = Path(in_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    splits = {}
    for split, count in manifest["splits"].items():
        rows = []
        for i in range(count):
            rows.append(_traj_from_csv((root / split / f"traj_{i:03d}.csv").read_text()))
        splits[split] = rows
    return Dataset(
        manifest["scenario"], manifest["scenario_hash"], manifest["seed"], splits
    )
