"""Method evaluation: RMSE curves, sigma sweeps, and fusion-step timing.

Per-sensor accuracy is measured in each sensor's local state space:
``RMSE_k = sqrt(mean_l ||T_j (x_k - xhat_k)||^2)`` over test trajectories,
split into position and velocity components (classified by which global
component each selector row picks).  Estimates that go non-finite mark the
trajectory as diverged; diverged trajectories are excluded from the RMSE
and reported separately.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import arrayops as ao
from .datasets import Dataset, batch_arrays, generate_dataset
from .distribution import InternodalTransform
from .network import DifnetModel
from .pipeline import (
    ModelWeightProvider,
    NetworkWeightProvider,
    build_nodes,
    run_centralized,
    run_decentralized,
)
from .scenarios import FilterParams, Scenario

__all__ = [
    "METHODS",
    "MethodReport",
    "EvaluationReport",
    "position_velocity_split",
    "run_method",
    "evaluate_methods",
    "sigma_sweep",
    "bench_fusion_time",
    "centralized_equivalence_deviation",
]

METHODS = ("centralized-exact", "dif-exact", "dif-inexact", "cumn", "difnet")


def position_velocity_split(
    transform: InternodalTransform,
) -> tuple[list[int], list[int]]:
    """Classify local dimensions as position or velocity via the selector rows.

    Even global components (x, y, z) are positions, odd ones velocities.
    Only 0/1 selector transforms are supported for the split.
    """
    pos, vel = [], []
    for r, row in enumerate(transform.matrix):
        nz = np.nonzero(row)[0]
        if len(nz) != 1 or row[nz[0]] != 1.0:
            raise ValueError(
                "position/velocity split needs unit selector rows; "
                f"row {r} of sensor {transform.sensor_id} is not one"
            )
        (vel if nz[0] % 2 else pos).append(r)
    return pos, vel


@dataclass(eq=False)
class MethodReport:
    """Per-step, per-sensor RMSE for one method, plus run metadata."""

    method: str
    rmse_pos: dict[int, np.ndarray]
    rmse_vel: dict[int, np.ndarray]
    stderr_pos: dict[int, np.ndarray]
    stderr_vel: dict[int, np.ndarray]
    diverged: list[int]
    fingerprint: dict

    def mean_pos(self, sensor_id: int, first_step: int = 1) -> float:
        """Mean position RMSE from step ``first_step`` (1-based) onward."""
        return float(np.mean(self.rmse_pos[sensor_id][first_step - 1 :]))

    def mean_vel(self, sensor_id: int, first_step: int = 1) -> float:
        return float(np.mean(self.rmse_vel[sensor_id][first_step - 1 :]))


@dataclass(eq=False)
class EvaluationReport:
    scenario: str
    methods: dict[str, MethodReport] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for name in sorted(self.methods):
            rep = self.methods[name]
            for sid in sorted(rep.rmse_pos):
                for k in range(len(rep.rmse_pos[sid])):
                    out.append(
                        {
                            "method": name,
                            "sensor": sid,
                            "step": k + 1,
                            "rmse_position": rep.rmse_pos[sid][k],
                            "rmse_velocity": rep.rmse_vel[sid][k],
                            "stderr_position": rep.stderr_pos[sid][k],
                            "stderr_velocity": rep.stderr_vel[sid][k],
                        }
                    )
        return out

    def summary_rows(self) -> list[dict]:
        out = []
        for name in sorted(self.methods):
            rep = self.methods[name]
            for sid in sorted(rep.rmse_pos):
                out.append(
                    {
                        "method": name,
                        "sensor": sid,
                        "mean_rmse_pos": rep.mean_pos(sid),
                        "mean_rmse_vel": rep.mean_vel(sid),
                        "diverged": len(rep.diverged),
                    }
                )
        return out


def _params_fingerprint(label: str, params: FilterParams, extra: dict | None = None) -> dict:
    digest = hashlib.sha256()
    digest.update(np.float64(params.q).tobytes())
    digest.update(np.ascontiguousarray(params.r_stacked.matrix).tobytes())
    out = {
        "params": params.label,
        "q": params.q,
        "r_sha256": digest.hexdigest()[:16],
    }
    if extra:
        out.update(extra)
    return out


def _models_fingerprint(models: dict[int, DifnetModel]) -> str:
    digest = hashlib.sha256()
    for nid in sorted(models):
        for key in sorted(models[nid].params):
            digest.update(np.ascontiguousarray(models[nid].params[key]).tobytes())
    return digest.hexdigest()[:16]


def _local_estimates(
    scenario: Scenario,
    method: str,
    measurements: dict[int, np.ndarray],
    models: dict[int, DifnetModel] | None,
    timing: bool = False,
):
    """Run one method; returns (per-sensor (B,T,m_j) estimates, fingerprint, fusion_s)."""
    graph = scenario.graph()
    if method == "centralized-exact":
        params = scenario.exact_params()
        result = run_centralized(scenario, params, measurements)
        glob = result.global_mean_array()  # (B, T, m)
        est = {t.sensor_id: glob @ t.matrix.T for t in scenario.transforms}
        return est, _params_fingerprint(method, params, {"weights": "none"}), 0.0

    if method == "dif-exact":
        params = scenario.exact_params()
        provider = ModelWeightProvider(scenario, "ccmn", params.r_stacked)
    elif method == "dif-inexact":
        params = scenario.inexact_params()
        provider = ModelWeightProvider(scenario, "ccmn", params.r_stacked)
    elif method == "cumn":
        params = scenario.cumn_params()
        provider = ModelWeightProvider(scenario, "cumn", params.r_stacked)
    elif method == "difnet":
        if models is None:
            raise ValueError("difnet method needs trained models")
        params = scenario.inexact_params()
        provider = NetworkWeightProvider(scenario, graph, models)
    else:
        raise ValueError(f"unknown method {method!r}; known: {', '.join(METHODS)}")

    nodes = build_nodes(scenario, params)
    result = run_decentralized(
        scenario, nodes, graph, measurements, provider, timing=timing
    )
    est = {
        t.sensor_id: result.local_mean_array(t.sensor_id) for t in scenario.transforms
    }
    extra = {"weights": provider.mode if hasattr(provider, "mode") else "learned"}
    if method == "difnet":
        extra["models_sha256"] = _models_fingerprint(models)
    return est, _params_fingerprint(method, params, extra), result.fusion_seconds


def rmse_curve(errors: np.ndarray, component_idx) -> tuple[np.ndarray, np.ndarray]:
    """Per-step RMSE over trajectories for the given local components.

    ``errors`` is (B, T, m_j); returns the (T,) RMSE and its delta-method
    standard error across trajectories.
    """
    sq = np.sum(errors[..., component_idx] ** 2, axis=-1)  # (B, T)
    rmse = np.sqrt(sq.mean(axis=0))
    n_traj = sq.shape[0]
    if n_traj > 1:
        se_sq = sq.std(axis=0, ddof=1) / np.sqrt(n_traj)
        stderr = np.where(rmse > 0, se_sq / (2 * np.maximum(rmse, 1e-300)), 0.0)
    else:
        stderr = np.zeros_like(rmse)
    return rmse, stderr


def run_method(
    method: str,
    dataset: Dataset,
    scenario: Scenario,
    models: dict[int, DifnetModel] | None = None,
    split: str = "test",
) -> MethodReport:
    """Evaluate one method on a dataset split and report per-step local RMSE."""
    rows = dataset.splits[split]
    truth, measurements = batch_arrays(rows)
    estimates, fingerprint, _ = _local_estimates(scenario, method, measurements, models)

    finite = np.ones(truth.shape[0], dtype=bool)
    for sid, est in estimates.items():
        finite &= np.isfinite(est).all(axis=(1, 2))
    diverged = [int(i) for i in np.nonzero(~finite)[0]]

    rmse_pos, rmse_vel, stderr_pos, stderr_vel = {}, {}, {}, {}
    for t in scenario.transforms:
        sid = t.sensor_id
        pos_idx, vel_idx = position_velocity_split(t)
        err = (truth @ t.matrix.T - estimates[sid])[finite]  # (B, T, m_j)
        rmse_pos[sid], stderr_pos[sid] = rmse_curve(err, pos_idx)
        rmse_vel[sid], stderr_vel[sid] = rmse_curve(err, vel_idx)
    return MethodReport(
        method, rmse_pos, rmse_vel, stderr_pos, stderr_vel, diverged, fingerprint
    )


def evaluate_methods(
    methods,
    dataset: Dataset,
    scenario: Scenario,
    models: dict[int, DifnetModel] | None = None,
) -> EvaluationReport:
    report = EvaluationReport(scenario.name)
    for method in methods:
        report.methods[method] = run_method(method, dataset, scenario, models)
    return report


def sigma_sweep(
    sigmas,
    scenario: Scenario,
    seed: int,
    methods,
    models: dict[int, DifnetModel] | None = None,
) -> list[dict]:
    """Re-generate test measurements per sigma and evaluate every method.

    Training data stays nominal; only the evaluation noise breathes.  Truth
    is identical across sigmas by construction of the generator draws.
    """
    rows = []
    for sigma in sigmas:
        dataset = generate_dataset(scenario, seed, sigma=float(sigma))
        report = evaluate_methods(methods, dataset, scenario, models)
        for method in methods:
            rep = report.methods[method]
            for sid in sorted(rep.rmse_pos):
                rows.append(
                    {
                        "sigma": float(sigma),
                        "method": method,
                        "sensor": sid,
                        "mean_rmse_pos": rep.mean_pos(sid),
                        "mean_rmse_vel": rep.mean_vel(sid),
                        "diverged": len(rep.diverged),
                    }
                )
    return rows


def bench_fusion_time(
    methods,
    dataset: Dataset,
    scenario: Scenario,
    repetitions: int = 50,
    models: dict[int, DifnetModel] | None = None,
    warmup: int = 3,
) -> dict[str, dict]:
    """Median fusion-stage wall time per trajectory, normalized to dif-exact.

    Only the fusion step is timed (weight computation plus the information
    update); the run uses a single trajectory at a time, mirroring online
    tracking.
    """
    traj = dataset.splits["test"][0]
    measurements = {sid: z for sid, z in traj.measurements.items()}
    samples: dict[str, list[float]] = {m: [] for m in methods}
    for method in methods:
        for it in range(warmup + repetitions):
            _, _, seconds = _local_estimates(
                scenario, method, measurements, models, timing=True
            )
            if it >= warmup:
                samples[method].append(seconds)
    medians = {m: float(np.median(v)) for m, v in samples.items()}
    if "dif-exact" not in medians:
        raise ValueError("bench needs dif-exact as the reference method")
    ref = medians["dif-exact"]
    return {
        m: {
            "median_seconds": medians[m],
            "ratio_vs_dif_exact": medians[m] / ref,
            "spread": float(np.std(samples[m]) / max(medians[m], 1e-300)),
        }
        for m in methods
    }


def centralized_equivalence_deviation(
    dataset: Dataset, scenario: Scenario, split: str = "test"
) -> dict[str, float]:
    """Max per-step deviation between decentralized-global CCMN fusion and
    the centralized oracle over a dataset split (exact parameters).

    Returns relative mean deviation and Frobenius-relative covariance
    deviation, maximized over steps and trajectories.
    """
    rows = dataset.splits[split]
    _, measurements = batch_arrays(rows)
    params = scenario.exact_params()
    graph = scenario.graph()
    nodes = build_nodes(scenario, params)
    provider = ModelWeightProvider(scenario, "ccmn", params.r_stacked)
    dec = run_decentralized(
        scenario, nodes, graph, measurements, provider, track_global=params
    )
    cen = run_centralized(scenario, params, measurements)

    max_mean = 0.0
    max_cov = 0.0
    for k in range(scenario.steps):
        dm = ao.asvalue(dec.global_means[k])
        cm = ao.asvalue(cen.global_means[k])
        dP = ao.asvalue(dec.global_covs[k])
        cP = ao.asvalue(cen.global_covs[k])
        mean_rel = np.linalg.norm(dm - cm, axis=(-2, -1)) / np.linalg.norm(
            cm, axis=(-2, -1)
        )
        cov_rel = np.linalg.norm(dP - cP, axis=(-2, -1)) / np.linalg.norm(
            cP, axis=(-2, -1)
        )
        max_mean = max(max_mean, float(mean_rel.max()))
        max_cov = max(max_cov, float(cov_rel.max()))
    return {"max_rel_mean": max_mean, "max_rel_cov": max_cov}
