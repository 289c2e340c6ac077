"""Local EKFs, centralized EIF fusion, and decentralized fusion weights.

The decentralized update combines per-sensor information contributions

    i_j = P_post^-1 @ x_post - P_prior^-1 @ x_prior
    I_j = P_post^-1 - P_prior^-1

computed from each node's local EKF.  With cross-correlated measurement
noises the contributions are combined through weight matrices

    M_j       = H^T @ Rinv[:, j-block] @ R_jj @ pinv(H_j)^T            (global)
    M_tilde_j = pinv(T_i)^T @ M_j @ T_i^T                              (node i)

which reduce to identity/projectors when the stacked noise covariance is
block diagonal.  When every sensor's measurement Jacobian has full row rank
and rank(T_j) >= n_j, the weighted global fusion reproduces the centralized
information-filter update exactly; :func:`verify_assimilation` turns that
equality into executable residual checks.

All core math routines accept batched arrays (leading axes) or tape
variables; vectors travel as ``(..., n, 1)`` columns.  The public dataclass
API works on flat vectors for convenience.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arrayops as ao
from .distribution import CommunicationGraph, InternodalTransform, pseudo_inverse
from .noise import StackedCovariance
from .statespace import GaussianBelief, SensorMeasurementModel, angular_components
from .statespace import measure as _measure_global
from .statespace import measurement_jacobian as _jacobian_global

__all__ = [
    "LocalMotionModel",
    "LocalSensorModel",
    "LocalFilterState",
    "InfoContribution",
    "FusionWeightSet",
    "StepSnapshot",
    "AssimilationReport",
    "ekf_predict",
    "ekf_update",
    "info_contribution",
    "ccmn_weight_global",
    "ccmn_weight_local",
    "fuse_global",
    "fuse_local",
    "centralized_update",
    "verify_assimilation",
    "consistent_local_prior",
]


# ---------------------------------------------------------------------------
# Local node models


@dataclass(frozen=True, eq=False)
class LocalMotionModel:
    """Sensor-local motion model: transition matrix and process noise."""

    transition: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "noise_cov", np.asarray(self.noise_cov, dtype=float))


@dataclass(frozen=True, eq=False)
class LocalSensorModel:
    """Sensor-local measurement model ``c_j(x_loc) = h_j(pinv(T_j) @ x_loc)``.

    ``noise_cov`` is the covariance the *filter assumes* for this sensor,
    which may deliberately differ from the truth (inexact-parameter runs).
    """

    sensor: SensorMeasurementModel
    transform: InternodalTransform
    noise_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "noise_cov", np.asarray(self.noise_cov, dtype=float))
        self.transform.require_rank(self.sensor.n_meas)

    @property
    def sensor_id(self) -> int:
        return self.sensor.sensor_id

    @property
    def n_meas(self) -> int:
        return self.sensor.n_meas

    @property
    def wrap_components(self) -> tuple[int, ...]:
        return angular_components(self.sensor)

    def predict_measurement(self, local_mean_col):
        return _measure_global(self.sensor, self.transform.pinv @ local_mean_col)

    def jacobian(self, local_mean_col):
        grad_h = _jacobian_global(self.sensor, self.transform.pinv @ local_mean_col)
        return grad_h @ self.transform.pinv

    def global_jacobian(self, local_mean_col):
        """``grad_h_j`` on the global state, linearized at the lifted local mean."""
        return _jacobian_global(self.sensor, self.transform.pinv @ local_mean_col)


@dataclass(frozen=True, eq=False)
class LocalFilterState:
    """One sensor's EKF step outcome: prior, posterior, innovation stats."""

    sensor_id: int
    prior: GaussianBelief
    posterior: GaussianBelief
    innovation_cov: np.ndarray
    gain: np.ndarray


@dataclass(frozen=True, eq=False)
class InfoContribution:
    """Per-sensor information increment (vector ``i``, matrix ``I``)."""

    i_vec: np.ndarray
    i_mat: np.ndarray


@dataclass(frozen=True, eq=False)
class FusionWeightSet:
    """Per-sensor fusion weight matrices and their provenance."""

    weights: dict[int, np.ndarray]
    source: str = "model-ccmn"

    def __post_init__(self):
        if self.source not in ("model-ccmn", "model-cumn", "learned"):
            raise ValueError(f"unknown weight source {self.source!r}")

    @classmethod
    def identity(cls, dims: dict[int, int]) -> "FusionWeightSet":
        return cls({i: np.eye(d) for i, d in dims.items()}, source="model-cumn")


# ---------------------------------------------------------------------------
# Core moment arithmetic (generic over batches / tape variables)


def predict_moments(mean, cov, transition, noise_cov):
    mean_pred = transition @ mean
    cov_pred = ao.sym(transition @ cov @ ao.mT(transition) + noise_cov)
    return mean_pred, cov_pred


def wrap_innovation(innov, wrap_idx: tuple[int, ...]):
    """Wrap the listed rows of a column innovation into (-pi, pi]."""
    if not wrap_idx:
        return innov
    n = ao.asvalue(innov).shape[-2]
    rows = []
    for i in range(n):
        row = innov[..., i : i + 1, :]
        rows.append(ao.wrap_angle(row) if i in wrap_idx else row)
    return ao.concat(rows, axis=-2)


def update_moments(mean, cov, z, zhat, jac, noise_cov, wrap_idx=(), lenient=False):
    """EKF measurement update; returns (mean, cov, innovation_cov, gain).

    ``lenient`` switches the innovation-covariance inverse to the
    non-certified symmetric form (learned-weight path only).
    """
    inv = ao.inv_sym if lenient else ao.inv_spd
    s = ao.sym(jac @ cov @ ao.mT(jac) + noise_cov)
    gain = cov @ ao.mT(jac) @ inv(s)
    innov = wrap_innovation(z - zhat, wrap_idx)
    mean_post = mean + gain @ innov
    cov_post = ao.sym(cov - gain @ s @ ao.mT(gain))
    return mean_post, cov_post, s, gain


def contribution_moments(prior_mean, prior_cov, post_mean, post_cov, lenient=False):
    inv = ao.inv_sym if lenient else ao.inv_spd
    info_prior = inv(prior_cov)
    info_post = inv(post_cov)
    i_vec = info_post @ post_mean - info_prior @ prior_mean
    i_mat = info_post - info_prior
    return i_vec, i_mat


def fuse_moments(prior_mean, prior_cov, vec_terms, mat_terms, lenient=False):
    """Information-form fusion of additive contribution terms.

    ``vec_terms`` / ``mat_terms`` are already-weighted, already-lifted
    contributions; the accumulated information matrix is re-symmetrized
    before inversion.  ``lenient`` tolerates indefinite accumulations
    (learned-weight path only).
    """
    inv = ao.inv_sym if lenient else ao.inv_spd
    info_prior = inv(prior_cov)
    info = info_prior
    for term in mat_terms:
        info = info + term
    info = ao.sym(info)
    cov_post = ao.sym(inv(info))
    rhs = info_prior @ prior_mean
    for term in vec_terms:
        rhs = rhs + term
    mean_post = cov_post @ rhs
    return mean_post, cov_post


# ---------------------------------------------------------------------------
# Correlation-aware fusion weights


def _full_row_rank_or_raise(jac_block) -> None:
    values = ao.asvalue(jac_block)
    s = np.linalg.svd(values, compute_uv=False)
    smax = np.max(s, axis=-1)
    smin = np.min(s, axis=-1)
    n, m = values.shape[-2], values.shape[-1]
    tol = max(n, m) * np.finfo(float).eps
    if np.any(smin <= tol * np.maximum(smax, 1.0)):
        raise ValueError("sensor measurement Jacobian is not of full row rank")


def ccmn_weight_global(stacked_jacobian, r_stacked: StackedCovariance, sensor_id: int):
    """Global fusion weight for ``sensor_id`` under cross-correlated noise."""
    rinv = ao.inv_spd_value(r_stacked.matrix)
    sl = r_stacked.sensor_slice(sensor_id)
    jac_block = stacked_jacobian[..., sl, :]
    _full_row_rank_or_raise(jac_block)
    col_block = rinv[:, sl]
    r_jj = r_stacked.block(sensor_id, sensor_id)
    pinv_t = ao.mT(pseudo_inverse(ao.asvalue(jac_block)))
    return ao.mT(stacked_jacobian) @ col_block @ r_jj @ pinv_t


def ccmn_weight_local(
    ti: InternodalTransform,
    stacked_jacobian,
    r_stacked: StackedCovariance,
    sensor_id: int,
):
    """Node-``i`` fusion weight: the global weight sandwiched into i's subspace."""
    m_global = ccmn_weight_global(stacked_jacobian, r_stacked, sensor_id)
    return ti.pinv.T @ m_global @ ti.matrix.T


# ---------------------------------------------------------------------------
# Public single-step API on GaussianBelief


def _col(v) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(-1, 1)


def ekf_predict(post_prev: GaussianBelief, local_model: LocalMotionModel) -> GaussianBelief:
    """Time update of one node's belief through its local motion model."""
    mean, cov = predict_moments(
        _col(post_prev.mean),
        np.asarray(post_prev.cov, dtype=float),
        local_model.transition,
        local_model.noise_cov,
    )
    return GaussianBelief(mean[:, 0], cov)


def ekf_update(
    prior: GaussianBelief, measurement, model: LocalSensorModel
) -> LocalFilterState:
    """Measurement update of one node's belief; azimuth innovations are wrapped."""
    mean = _col(prior.mean)
    cov = np.asarray(prior.cov, dtype=float)
    z = _col(measurement)
    zhat = model.predict_measurement(mean)
    jac = model.jacobian(mean)
    mean_post, cov_post, s, gain = update_moments(
        mean, cov, z, zhat, jac, model.noise_cov, model.wrap_components
    )
    return LocalFilterState(
        sensor_id=model.sensor_id,
        prior=prior,
        posterior=GaussianBelief(mean_post[:, 0], cov_post),
        innovation_cov=s,
        gain=gain,
    )


def info_contribution(state: LocalFilterState) -> InfoContribution:
    """Information increment of one EKF update (prior and posterior invertible)."""
    i_vec, i_mat = contribution_moments(
        _col(state.prior.mean),
        np.asarray(state.prior.cov, dtype=float),
        _col(state.posterior.mean),
        np.asarray(state.posterior.cov, dtype=float),
    )
    return InfoContribution(i_vec[:, 0], ao.sym(i_mat))


def fuse_global(
    prior: GaussianBelief,
    contributions: list[tuple[InternodalTransform, InfoContribution]],
    weights: FusionWeightSet,
) -> GaussianBelief:
    """Global-space fusion of per-sensor contributions (weighted information sum)."""
    vec_terms = []
    mat_terms = []
    for transform, contrib in contributions:
        w = weights.weights[transform.sensor_id]
        t = transform.matrix
        vec_terms.append(w @ (t.T @ _col(contrib.i_vec)))
        mat_terms.append(w @ (t.T @ contrib.i_mat @ t))
    mean, cov = fuse_moments(
        _col(prior.mean), np.asarray(prior.cov, dtype=float), vec_terms, mat_terms
    )
    return GaussianBelief(mean[:, 0], cov)


def fuse_local(
    prior_i: GaussianBelief,
    node_id: int,
    graph: CommunicationGraph,
    contributions: dict[int, InfoContribution],
    weights: FusionWeightSet,
) -> GaussianBelief:
    """Node-local fusion using only the node itself and its graph neighbors."""
    vec_terms = []
    mat_terms = []
    for j in sorted((node_id,) + graph.neighbors(node_id)):
        if j not in contributions:
            continue
        contrib = contributions[j]
        w = weights.weights[j]
        t_ij = graph.pair_transform(node_id, j)
        vec_terms.append(w @ (t_ij.T @ _col(contrib.i_vec)))
        mat_terms.append(w @ (t_ij.T @ contrib.i_mat @ t_ij))
    mean, cov = fuse_moments(
        _col(prior_i.mean), np.asarray(prior_i.cov, dtype=float), vec_terms, mat_terms
    )
    return GaussianBelief(mean[:, 0], cov)


# ---------------------------------------------------------------------------
# Centralized oracle


def stacked_measure(sensors: list[SensorMeasurementModel], mean_col):
    return ao.concat([_measure_global(s, mean_col) for s in sensors], axis=-2)


def stacked_jacobian_at(sensors: list[SensorMeasurementModel], mean_col):
    return ao.concat_rows([_jacobian_global(s, mean_col) for s in sensors], axis=-2)


def stacked_wrap_components(sensors: list[SensorMeasurementModel]) -> tuple[int, ...]:
    out = []
    offset = 0
    for s in sensors:
        out.extend(offset + i for i in angular_components(s))
        offset += s.n_meas
    return tuple(out)


def centralized_update(
    prior: GaussianBelief,
    measurement,
    sensors: list[SensorMeasurementModel],
    r_stacked: StackedCovariance,
) -> GaussianBelief:
    """Information-form update with the full stacked measurement.

    The equivalent linearized measurement is ``ztil = dz + H @ x_prior`` with
    angular components of ``dz`` wrapped before the linear term is added back.
    """
    mean = _col(prior.mean)
    cov = np.asarray(prior.cov, dtype=float)
    z = _col(measurement)
    zhat = stacked_measure(sensors, mean)
    jac = stacked_jacobian_at(sensors, mean)
    dz = wrap_innovation(z - zhat, stacked_wrap_components(sensors))
    ztil = dz + jac @ mean
    rinv = ao.inv_spd_value(r_stacked.matrix)
    info_prior = ao.inv_spd(cov)
    info = ao.sym(info_prior + jac.T @ rinv @ jac)
    cov_post = ao.sym(ao.inv_spd(info))
    mean_post = cov_post @ (info_prior @ mean + jac.T @ rinv @ ztil)
    return GaussianBelief(mean_post[:, 0], cov_post)


# ---------------------------------------------------------------------------
# Assimilation identity checks


def consistent_local_prior(
    global_belief: GaussianBelief, transform: InternodalTransform
) -> GaussianBelief:
    """Project a global belief onto a node in information form.

    Uses ``P_i^-1 = pinv(T_i)^T @ P^-1 @ pinv(T_i)`` and the matching
    information-mean relation, the preconditions under which the one-step
    local consistency identity holds.
    """
    info = ao.inv_spd_value(np.asarray(global_belief.cov, dtype=float))
    info_local = ao.sym(transform.pinv.T @ info @ transform.pinv)
    cov_local = ao.sym(ao.inv_spd_value(info_local))
    mean_local = cov_local @ (transform.pinv.T @ info @ _col(global_belief.mean))
    return GaussianBelief(mean_local[:, 0], cov_local)


@dataclass(frozen=True, eq=False)
class StepSnapshot:
    """Everything needed to run one fusion step both ways and compare."""

    prior: GaussianBelief
    transforms: list[InternodalTransform]
    sensors: list[SensorMeasurementModel]
    measurements: dict[int, np.ndarray]
    r_filter: StackedCovariance
    r_oracle: StackedCovariance


@dataclass(frozen=True, eq=False)
class AssimilationReport:
    """Residual norms of the covariance/state assimilation identities.

    ``residuals`` maps check name -> (frobenius_norm, relative_norm); the
    relative form divides by the Frobenius norm of the centralized side.
    """

    residuals: dict[str, tuple[float, float]] = field(default_factory=dict)

    def max_relative(self) -> float:
        return max(rel for (_, rel) in self.residuals.values())

    def lines(self) -> list[str]:
        width = max(len(k) for k in self.residuals)
        return [
            f"{name:<{width}}  abs={ab:.3e}  rel={rel:.3e}"
            for name, (ab, rel) in sorted(self.residuals.items())
        ]


def _rel(delta: np.ndarray, reference: np.ndarray) -> tuple[float, float]:
    ab = float(np.linalg.norm(delta))
    ref = float(np.linalg.norm(reference))
    return ab, ab / max(ref, np.finfo(float).tiny)


def verify_assimilation(snapshot: StepSnapshot) -> AssimilationReport:
    """Run one step centralized and decentralized; report identity residuals.

    Local priors are initialized consistently from the global prior, each
    node runs its EKF with the filter's assumed noise blocks, the weighted
    fusion is applied in global and local space, and the results are compared
    against the centralized oracle that uses ``r_oracle``.  Never raises:
    returns residual norms (absolute and relative) for every check.
    """
    sensors = {s.sensor_id: s for s in snapshot.sensors}
    transforms = {t.sensor_id: t for t in snapshot.transforms}
    order = sorted(sensors)
    graph = CommunicationGraph(list(snapshot.transforms))

    # Per-node EKF updates from consistently projected priors.
    contributions: dict[int, InfoContribution] = {}
    jac_rows = []
    for sid in order:
        model = LocalSensorModel(
            sensor=sensors[sid],
            transform=transforms[sid],
            noise_cov=snapshot.r_filter.block(sid, sid),
        )
        local_prior = consistent_local_prior(snapshot.prior, transforms[sid])
        state = ekf_update(local_prior, snapshot.measurements[sid], model)
        contributions[sid] = info_contribution(state)
        jac_rows.append(model.global_jacobian(_col(local_prior.mean)))
    stacked_jac = np.concatenate(jac_rows, axis=-2)

    weights = FusionWeightSet(
        {
            sid: ccmn_weight_global(stacked_jac, snapshot.r_filter, sid)
            for sid in order
        },
        source="model-ccmn",
    )
    fused = fuse_global(
        snapshot.prior, [(transforms[sid], contributions[sid]) for sid in order], weights
    )

    z_stacked = np.concatenate(
        [np.asarray(snapshot.measurements[sid], dtype=float) for sid in order]
    )
    central = centralized_update(
        snapshot.prior, z_stacked, [sensors[sid] for sid in order], snapshot.r_oracle
    )

    report: dict[str, tuple[float, float]] = {}
    info_fused = ao.inv_spd_value(fused.cov)
    info_central = ao.inv_spd_value(central.cov)
    report["global.covariance"] = _rel(info_fused - info_central, info_central)
    report["global.state"] = _rel(
        info_fused @ _col(fused.mean) - info_central @ _col(central.mean),
        info_central @ _col(central.mean),
    )

    for sid in order:
        t = transforms[sid]
        local_prior = consistent_local_prior(snapshot.prior, t)
        local_weights = FusionWeightSet(
            {
                j: ccmn_weight_local(t, stacked_jac, snapshot.r_filter, j)
                for j in order
            },
            source="model-ccmn",
        )
        fused_local = fuse_local(local_prior, sid, graph, contributions, local_weights)
        info_local = ao.inv_spd_value(fused_local.cov)
        projected = ao.sym(t.pinv.T @ info_central @ t.pinv)
        report[f"node{sid}.covariance"] = _rel(info_local - projected, projected)
        lhs = info_local @ _col(fused_local.mean)
        rhs = t.pinv.T @ info_central @ _col(central.mean)
        report[f"node{sid}.state"] = _rel(lhs - rhs, rhs)

    return AssimilationReport(report)
