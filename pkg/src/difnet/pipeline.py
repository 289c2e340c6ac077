"""Per-trajectory filter pipelines.

One generic decentralized runner drives every method: each node predicts
with its local model, updates with its own measurement, exchanges
information contributions with its graph neighbors, fuses them with weights
from a pluggable provider, and feeds the fused posterior back as its state
for the next prediction.  The provider is what distinguishes the methods:

* :class:`ModelWeightProvider` -- correlation-aware weights from an assumed
  stacked covariance (``ccmn``), or identity weights (``cumn``);
* :class:`NetworkWeightProvider` -- weights predicted per step by each
  node's recurrent network.

Everything is batched over trajectories (leading axis) and runs unchanged
on plain arrays or tape variables, so the same code path is used for
evaluation and for backpropagation-through-time training.  A separate
centralized runner provides the stacked-measurement oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import arrayops as ao
from .distribution import CommunicationGraph
from .filters import (
    LocalMotionModel,
    LocalSensorModel,
    ccmn_weight_global,
    consistent_local_prior,
    contribution_moments,
    fuse_moments,
    predict_moments,
    stacked_jacobian_at,
    stacked_measure,
    stacked_wrap_components,
    update_moments,
    wrap_innovation,
)
from .noise import StackedCovariance
from .scenarios import FilterParams, Scenario
from .statespace import GaussianBelief

__all__ = [
    "NodeRuntime",
    "RunResult",
    "ModelWeightProvider",
    "NetworkWeightProvider",
    "build_nodes",
    "global_motion",
    "run_decentralized",
    "run_centralized",
]


@dataclass(frozen=True, eq=False)
class NodeRuntime:
    """One node's local models under a given filter-parameter variant."""

    sensor_id: int
    motion: LocalMotionModel
    sensor: LocalSensorModel


def global_motion(scenario: Scenario, params: FilterParams) -> LocalMotionModel:
    return LocalMotionModel(
        scenario.transition_matrix(), params.q**2 * scenario.unit_noise_cov()
    )


def build_nodes(scenario: Scenario, params: FilterParams) -> list[NodeRuntime]:
    """Derive local motion/sensor models for every node (time-invariant T)."""
    glob = global_motion(scenario, params)
    nodes = []
    for sensor, transform in zip(scenario.sensors, scenario.transforms):
        t = transform.matrix
        nodes.append(
            NodeRuntime(
                sensor_id=sensor.sensor_id,
                motion=LocalMotionModel(
                    t @ glob.transition @ transform.pinv,
                    t @ glob.noise_cov @ t.T,
                ),
                sensor=LocalSensorModel(
                    sensor=sensor,
                    transform=transform,
                    noise_cov=params.r_blocks[sensor.sensor_id],
                ),
            )
        )
    return nodes


@dataclass(eq=False)
class RunResult:
    """Recorded estimates of one batched run (lists indexed by step)."""

    local_means: dict[int, list]
    local_covs: dict[int, list]
    global_means: list | None = None
    global_covs: list | None = None
    fusion_seconds: float = 0.0

    def local_mean_array(self, sensor_id: int) -> np.ndarray:
        """Stack one node's means into ``(B, T, m_i)`` (plain runs only)."""
        return np.stack(
            [ao.asvalue(m)[..., 0] for m in self.local_means[sensor_id]], axis=-2
        )

    def global_mean_array(self) -> np.ndarray:
        return np.stack([ao.asvalue(m)[..., 0] for m in self.global_means], axis=-2)


# ---------------------------------------------------------------------------
# Weight providers


class ModelWeightProvider:
    """Model-based fusion weights from an assumed stacked covariance.

    ``mode='ccmn'`` computes the correlation-aware weights; ``mode='cumn'``
    uses identities.  When every sensor is linear the stacked Jacobian is
    constant, so the weights are computed once and cached.
    """

    def __init__(self, scenario: Scenario, mode: str, r_stacked: StackedCovariance):
        if mode not in ("ccmn", "cumn"):
            raise ValueError("mode must be 'ccmn' or 'cumn'")
        self.mode = mode
        self.r_stacked = r_stacked
        self._transforms = {t.sensor_id: t for t in scenario.transforms}
        self._static = all(s.kind == "linear-selector" for s in scenario.sensors)
        self._cache: dict | None = None

    lenient = False

    def reset(self, batch: int) -> None:
        pass

    def weights(self, stacked_jac, node_ids) -> dict[int, object]:
        """Global m-by-m weight per sensor id."""
        if self.mode == "cumn":
            m = next(iter(self._transforms.values())).m_global
            return {j: np.eye(m) for j in node_ids}
        if self._static and self._cache is not None:
            return self._cache
        out = {
            j: ccmn_weight_global(stacked_jac, self.r_stacked, j) for j in node_ids
        }
        if self._static:
            self._cache = out
        return out

    def local_weights(self, node_id: int, step) -> dict[int, object]:
        globals_ = self.weights(step.stacked_jac, step.node_ids)
        ti = self._transforms[node_id]
        if self.mode == "cumn":
            return {
                j: np.eye(self._transforms[node_id].m_local) for j in step.node_ids
            }
        return {j: ti.pinv.T @ globals_[j] @ ti.matrix.T for j in step.node_ids}

    def global_weights(self, step) -> dict[int, object]:
        return self.weights(step.stacked_jac, step.node_ids)

    @property
    def needs_stacked_jacobian(self) -> bool:
        return self.mode == "ccmn" and not (self._static and self._cache is not None)


class NetworkWeightProvider:
    """Fusion weights predicted by per-node recurrent networks.

    Hidden states are reset at every trajectory start and advanced once per
    step per node.  Parameters may be plain arrays (evaluation) or tape
    variables (training).
    """

    lenient = True

    def __init__(self, scenario: Scenario, graph: CommunicationGraph, models: dict):
        from .network import encode_inputs_raw, forward_raw  # local import: no cycle

        self._encode = encode_inputs_raw
        self._forward = forward_raw
        self._graph = graph
        self._models = models
        self._transforms = {t.sensor_id: t for t in scenario.transforms}
        self._m = scenario.state_dim
        self._hidden: dict[int, object] = {}

    def reset(self, batch: int) -> None:
        for node_id, model in self._models.items():
            self._hidden[node_id] = np.zeros((batch, model.dims.h2))

    def local_weights(self, node_id: int, step) -> dict[int, object]:
        model = self._models[node_id]
        x = self._encode(step.contributions, self._graph, node_id)
        out, self._hidden[node_id] = self._forward(
            model.dims, model.params, x, self._hidden[node_id]
        )
        m = self._m
        ti = self._transforms[node_id]
        lift = ti.pinv.T
        weights = {}
        for pos, j in enumerate(step.node_ids):
            block = out[..., pos * m * m : (pos + 1) * m * m]
            shape = tuple(ao.asvalue(block).shape[:-1]) + (m, m)
            weights[j] = lift @ block.reshape(shape) @ ti.matrix.T
        return weights

    def global_weights(self, step):
        raise NotImplementedError("learned weights are node-local only")

    @property
    def needs_stacked_jacobian(self) -> bool:
        return False


@dataclass(eq=False)
class _StepData:
    node_ids: tuple[int, ...]
    contributions: dict[int, tuple]
    stacked_jac: object | None


# ---------------------------------------------------------------------------
# Runners


def _initial_local_states(scenario: Scenario, batch: int):
    belief = GaussianBelief(scenario.init_mean, scenario.init_cov)
    states = {}
    for t in scenario.transforms:
        local = consistent_local_prior(belief, t)
        mean = np.broadcast_to(local.mean[:, None], (batch, t.m_local, 1)).copy()
        cov = np.broadcast_to(local.cov, (batch, t.m_local, t.m_local)).copy()
        states[t.sensor_id] = (mean, cov)
    return states


def _as_batched(measurements: dict[int, np.ndarray]) -> tuple[dict, int, bool]:
    out = {}
    batched = True
    batch = None
    for sid, z in measurements.items():
        z = np.asarray(z, dtype=float)
        if z.ndim == 2:
            batched = False
            z = z[None]
        out[sid] = z
        batch = z.shape[0]
    return out, batch, batched


def run_decentralized(
    scenario: Scenario,
    nodes: list[NodeRuntime],
    graph: CommunicationGraph,
    measurements: dict[int, np.ndarray],
    provider,
    track_global: FilterParams | None = None,
    timing: bool = False,
) -> RunResult:
    """Run the local-EKF / communicate / fuse / feed-back loop over a trajectory.

    ``measurements[sensor_id]`` is ``(B, T, n_j)`` (or ``(T, n_j)``).  When
    ``track_global`` is given, a global-space fused chain is maintained with
    the same contributions (model-based weight providers only).  ``timing``
    accumulates wall time of the fusion stage (weight computation plus the
    information update) into the result.
    """
    z_all, batch, _ = _as_batched(measurements)
    node_ids = tuple(sorted(n.sensor_id for n in nodes))
    by_id = {n.sensor_id: n for n in nodes}
    tsteps = next(iter(z_all.values())).shape[1]
    states = _initial_local_states(scenario, batch)
    provider.reset(batch)
    lenient = getattr(provider, "lenient", False)

    result = RunResult(
        local_means={i: [] for i in node_ids},
        local_covs={i: [] for i in node_ids},
    )
    glob_state = None
    if track_global is not None:
        result.global_means = []
        result.global_covs = []
        gmotion = global_motion(scenario, track_global)
        mean0 = np.broadcast_to(
            scenario.init_mean[:, None], (batch, scenario.state_dim, 1)
        ).copy()
        cov0 = np.broadcast_to(
            scenario.init_cov, (batch, scenario.state_dim, scenario.state_dim)
        ).copy()
        glob_state = (mean0, cov0)

    transforms = {t.sensor_id: t for t in scenario.transforms}
    fusion_time = 0.0

    for k in range(tsteps):
        contributions = {}
        jac_rows = []
        for sid in node_ids:
            node = by_id[sid]
            mean, cov = states[sid]
            mean_p, cov_p = predict_moments(
                mean, cov, node.motion.transition, node.motion.noise_cov
            )
            z = z_all[sid][:, k][..., None]
            zhat = node.sensor.predict_measurement(mean_p)
            jac = node.sensor.jacobian(mean_p)
            mean_u, cov_u, _, _ = update_moments(
                mean_p, cov_p, z, zhat, jac, node.sensor.noise_cov,
                node.sensor.wrap_components, lenient=lenient,
            )
            i_vec, i_mat = contribution_moments(
                mean_p, cov_p, mean_u, cov_u, lenient=lenient
            )
            contributions[sid] = (i_vec, i_mat)
            states[sid] = (mean_p, cov_p)  # prior kept until fusion
            jac_rows.append(jac @ transforms[sid].matrix)

        stacked_jac = None
        if provider.needs_stacked_jacobian or track_global is not None:
            stacked_jac = ao.concat_rows(jac_rows, axis=-2)
        step = _StepData(node_ids, contributions, stacked_jac)

        t0 = time.perf_counter() if timing else 0.0
        for sid in node_ids:
            weights = provider.local_weights(sid, step)
            mean_p, cov_p = states[sid]
            vec_terms = []
            mat_terms = []
            # ascending sensor order keeps floating-point sums identical
            # across symmetric nodes
            for j in sorted((sid,) + graph.neighbors(sid)):
                t_ij = graph.pair_transform(sid, j)
                i_vec, i_mat = contributions[j]
                w = weights[j]
                vec_terms.append(w @ (t_ij.T @ i_vec))
                mat_terms.append(w @ (t_ij.T @ i_mat @ t_ij))
            mean_f, cov_f = fuse_moments(
                mean_p, cov_p, vec_terms, mat_terms, lenient=lenient
            )
            states[sid] = (mean_f, cov_f)
            result.local_means[sid].append(mean_f)
            result.local_covs[sid].append(cov_f)
        if timing:
            fusion_time += time.perf_counter() - t0

        if glob_state is not None:
            gmean, gcov = predict_moments(
                glob_state[0], glob_state[1], gmotion.transition, gmotion.noise_cov
            )
            gweights = provider.global_weights(step)
            vec_terms = []
            mat_terms = []
            for j in node_ids:
                t_j = transforms[j].matrix
                i_vec, i_mat = contributions[j]
                w = gweights[j]
                vec_terms.append(w @ (t_j.T @ i_vec))
                mat_terms.append(w @ (t_j.T @ i_mat @ t_j))
            gmean, gcov = fuse_moments(gmean, gcov, vec_terms, mat_terms)
            glob_state = (gmean, gcov)
            result.global_means.append(gmean)
            result.global_covs.append(gcov)

    result.fusion_seconds = fusion_time
    return result


def run_centralized(
    scenario: Scenario,
    params: FilterParams,
    measurements: dict[int, np.ndarray],
) -> RunResult:
    """Stacked-measurement information-filter oracle over a trajectory."""
    z_all, batch, _ = _as_batched(measurements)
    node_ids = tuple(sorted(z_all))
    tsteps = next(iter(z_all.values())).shape[1]
    sensors = list(scenario.sensors)
    wrap_idx = stacked_wrap_components(sensors)
    rinv = ao.inv_spd_value(params.r_stacked.matrix)
    gmotion = global_motion(scenario, params)

    mean = np.broadcast_to(
        scenario.init_mean[:, None], (batch, scenario.state_dim, 1)
    ).copy()
    cov = np.broadcast_to(
        scenario.init_cov, (batch, scenario.state_dim, scenario.state_dim)
    ).copy()

    result = RunResult(local_means={}, local_covs={}, global_means=[], global_covs=[])
    for k in range(tsteps):
        mean, cov = predict_moments(mean, cov, gmotion.transition, gmotion.noise_cov)
        z = ao.concat([z_all[sid][:, k][..., None] for sid in node_ids], axis=-2)
        zhat = stacked_measure(sensors, mean)
        jac = stacked_jacobian_at(sensors, mean)
        dz = wrap_innovation(z - zhat, wrap_idx)
        ztil = dz + jac @ mean
        info_prior = ao.inv_spd(cov)
        info = ao.sym(info_prior + ao.mT(jac) @ rinv @ jac)
        cov = ao.sym(ao.inv_spd(info))
        mean = cov @ (info_prior @ mean + ao.mT(jac) @ rinv @ ztil)
        result.global_means.append(mean)
        result.global_covs.append(cov)
    return result
