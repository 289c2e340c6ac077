"""Training of the fusion-weight networks by backpropagation through time.

One process trains all nodes jointly while preserving the decentralized
decomposition: each node's loss is the mean squared local-state error of
*its own* fused estimates (plus an L2 penalty on its own parameters), and
each node's update uses the gradient of its own loss with respect to its
own parameters only.  Gradients are exact through the entire coupled
recursion -- local EKFs, communication, network forward passes, fusion and
feedback -- because the whole rollout is recorded on one tape.

Epochs shuffle trajectories with a per-epoch seeded generator, batches run
in parallel across trajectories (vectorized, not threaded), hidden states
reset at every trajectory start, and the best cross-validation checkpoint
is retained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arrayops as ao
from .autodiff import Tape, Var, backward, parameter
from .datasets import Dataset, batch_arrays
from .network import (
    DifnetModel,
    NetworkDims,
    PARAM_KEYS,
    default_dims,
    init_model,
)
from .pipeline import NetworkWeightProvider, build_nodes, run_decentralized
from .scenarios import Scenario

__all__ = [
    "TrainingConfig",
    "TrainingDiverged",
    "AdamState",
    "adam_step",
    "clip_gradients",
    "state_error_loss",
    "regularization_term",
    "trajectory_losses",
    "dataset_mse",
    "train",
    "TrainOutcome",
]


@dataclass
class TrainingConfig:
    """Optimization protocol for the fusion-weight networks."""

    learning_rate: float = 1e-3
    batch_size: int = 20
    weight_decay: float = 1e-4
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scheduler: str = "fixed"
    lr_min: float = 1e-4
    lr_max: float = 1e-3
    lr_period: int = 20
    seed: int = 0
    grad_clip: float = 100.0
    out_scale: float = 0.01
    width_factor: int = 2

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate and batch_size must be positive")
        if self.scheduler not in ("fixed", "cyclic"):
            raise ValueError("scheduler must be 'fixed' or 'cyclic'")

    def lr_at(self, step: int) -> float:
        if self.scheduler == "fixed":
            return self.learning_rate
        # Triangular cycle between lr_min and lr_max, half-period lr_period.
        cycle = np.floor(1 + step / (2 * self.lr_period))
        x = np.abs(step / self.lr_period - 2 * cycle + 1)
        return self.lr_min + (self.lr_max - self.lr_min) * max(0.0, 1.0 - x)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch/batch diagnostic."""


# ---------------------------------------------------------------------------
# Adam with optional decoupled weight decay


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(ao.asvalue(p)) for k, p in params.items()},
            v={k: np.zeros_like(ao.asvalue(p)) for k, p in params.items()},
        )


def adam_step(
    state: AdamState,
    params: dict,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> dict:
    """Standard bias-corrected Adam step with decoupled weight decay.

    Accepts Vars or arrays; Var values are updated in place (fresh arrays,
    so closures recorded earlier keep their captured values).
    """
    state.t += 1
    for key, p in params.items():
        g = grads[key]
        state.m[key] = beta1 * state.m[key] + (1 - beta1) * g
        state.v[key] = beta2 * state.v[key] + (1 - beta2) * g * g
        m_hat = state.m[key] / (1 - beta1**state.t)
        v_hat = state.v[key] / (1 - beta2**state.t)
        value = ao.asvalue(p)
        new = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            new = new - lr * weight_decay * value
        if isinstance(p, Var):
            p.value = new
        else:
            params[key] = new
    return params


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict:
    """Scale the whole gradient dict so its global L2 norm is <= max_norm."""
    if not max_norm:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads


# ---------------------------------------------------------------------------
# Loss


def state_error_loss(step_errors: list):
    """Mean-over-steps squared error; batched mean over trajectories.

    ``step_errors`` holds per-step column errors ``(B, d, 1)`` (arrays or
    Vars); the result averages the squared norms over steps, then over the
    batch.
    """
    total = None
    for err in step_errors:
        sq = (err * err).sum(axis=(-2, -1))
        total = sq if total is None else total + sq
    per_traj = total * (1.0 / len(step_errors))
    return per_traj.mean() if not isinstance(per_traj, np.ndarray) else float(
        np.mean(per_traj)
    )


def regularization_term(params: dict, gamma: float):
    """gamma * ||theta||^2 over one node's parameters."""
    total = None
    for p in params.values():
        sq = (p * p).sum()
        total = sq if total is None else total + sq
    return total * gamma


def trajectory_losses(
    scenario: Scenario,
    param_vars: dict[int, dict[str, Var]],
    dims: NetworkDims,
    truth: np.ndarray,
    measurements: dict[int, np.ndarray],
    gamma: float,
) -> dict[int, object]:
    """Per-node losses of one batched rollout, recorded on the active tape."""
    graph = scenario.graph()
    nodes = build_nodes(scenario, scenario.inexact_params())
    models = {nid: DifnetModel(dims, params) for nid, params in param_vars.items()}
    provider = NetworkWeightProvider(scenario, graph, models)
    result = run_decentralized(scenario, nodes, graph, measurements, provider)

    losses = {}
    for t in scenario.transforms:
        sid = t.sensor_id
        local_truth = truth @ t.matrix.T  # (B, T, m_j)
        errors = [
            local_truth[:, k][..., None] - result.local_means[sid][k]
            for k in range(truth.shape[1])
        ]
        mse = state_error_loss(errors)
        losses[sid] = mse + regularization_term(param_vars[sid], gamma)
    return losses


def dataset_mse(
    scenario: Scenario,
    models: dict[int, DifnetModel],
    trajectories,
) -> dict[int, float]:
    """Forward-only per-node MSE (no regularization) on a list of trajectories."""
    truth, measurements = batch_arrays(trajectories)
    graph = scenario.graph()
    nodes = build_nodes(scenario, scenario.inexact_params())
    provider = NetworkWeightProvider(scenario, graph, models)
    result = run_decentralized(scenario, nodes, graph, measurements, provider)
    out = {}
    for t in scenario.transforms:
        sid = t.sensor_id
        local_truth = truth @ t.matrix.T
        errors = [
            local_truth[:, k][..., None] - ao.asvalue(result.local_means[sid][k])
            for k in range(truth.shape[1])
        ]
        out[sid] = float(state_error_loss(errors))
    return out


# ---------------------------------------------------------------------------
# Training loop


@dataclass(eq=False)
class TrainOutcome:
    models: dict[int, DifnetModel]
    history: list[dict]
    best_epoch: int
    best_cv: float


def _plain_models(
    dims: NetworkDims, param_vars: dict[int, dict[str, Var]]
) -> dict[int, DifnetModel]:
    return {
        nid: DifnetModel(dims, {k: v.value for k, v in params.items()})
        for nid, params in param_vars.items()
    }


def train(
    dataset: Dataset,
    scenario: Scenario,
    config: TrainingConfig,
    dims: NetworkDims | None = None,
    initial_models: dict[int, DifnetModel] | None = None,
    log=None,
) -> TrainOutcome:
    """Train one network per node; returns best-cv models and the loss history.

    Every node starts from identical seeded parameters (or from
    ``initial_models``), epochs shuffle with per-epoch generators seeded by
    ``config.seed + epoch``, and updates happen only after all nodes'
    gradients for a batch are computed.  A non-finite loss aborts with
    :class:`TrainingDiverged`.
    """
    node_ids = [t.sensor_id for t in scenario.transforms]
    if dims is None:
        if initial_models is not None:
            dims = next(iter(initial_models.values())).dims
        else:
            dims = default_dims(
                scenario.state_dim, scenario.n_sensors, config.width_factor
            )
    if initial_models is None:
        init = init_model(dims, config.seed, config.out_scale)
        initial_models = {nid: init.copy() for nid in node_ids}

    param_vars = {
        nid: {k: parameter(initial_models[nid].params[k]) for k in PARAM_KEYS}
        for nid in node_ids
    }
    adam = {nid: AdamState.for_params(param_vars[nid]) for nid in node_ids}

    train_rows = dataset.splits["train"]
    cv_rows = dataset.splits["cv"]
    if config.epochs > 0 and config.batch_size > len(train_rows):
        raise ValueError(
            f"batch_size {config.batch_size} exceeds the training set "
            f"({len(train_rows)} trajectories)"
        )
    history: list[dict] = []
    best_cv = np.inf
    best_epoch = -1
    # initial snapshot so epochs == 0 returns the untouched models
    best_models = {nid: m.copy() for nid, m in _plain_models(dims, param_vars).items()}
    step = 0

    for epoch in range(config.epochs):
        order = np.random.default_rng(config.seed + epoch).permutation(len(train_rows))
        epoch_losses = {nid: [] for nid in node_ids}
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            truth, measurements = batch_arrays([train_rows[i] for i in batch_idx])
            with Tape() as tape:
                losses = trajectory_losses(
                    scenario, param_vars, dims, truth, measurements,
                    config.weight_decay,
                )
                grads_by_node = {}
                for nid in node_ids:
                    loss = losses[nid]
                    value = float(ao.asvalue(loss))
                    if not np.isfinite(value):
                        raise TrainingDiverged(
                            f"non-finite loss for node {nid} at epoch {epoch}, "
                            f"batch starting at {start}"
                        )
                    epoch_losses[nid].append(value)
                    tape.clear_grads()
                    for params in param_vars.values():
                        for p in params.values():
                            p.grad = None
                    backward(loss, tape)
                    grads_by_node[nid] = clip_gradients(
                        {
                            k: (p.grad if p.grad is not None else np.zeros_like(p.value))
                            for k, p in param_vars[nid].items()
                        },
                        config.grad_clip,
                    )
            lr = config.lr_at(step)
            step += 1
            for nid in node_ids:
                # the training loss already carries the gamma penalty, so the
                # optimizer runs without decoupled decay (no double counting).
                adam_step(
                    adam[nid], param_vars[nid], grads_by_node[nid],
                    lr=lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
                    weight_decay=0.0,
                )

        cv_losses = dataset_mse(scenario, _plain_models(dims, param_vars), cv_rows)
        cv_mean = float(np.mean(list(cv_losses.values())))
        if not np.isfinite(cv_mean):
            raise TrainingDiverged(f"non-finite cross-validation loss at epoch {epoch}")
        for nid in node_ids:
            history.append(
                {
                    "epoch": epoch,
                    "node": nid,
                    "train_loss": float(np.mean(epoch_losses[nid])),
                    "cv_loss": cv_losses[nid],
                }
            )
        if cv_mean < best_cv:
            best_cv = cv_mean
            best_epoch = epoch
            best_models = {
                nid: m.copy() for nid, m in _plain_models(dims, param_vars).items()
            }
        if log is not None:
            log(
                f"epoch {epoch:3d}  train={np.mean([h['train_loss'] for h in history if h['epoch'] == epoch]):.4g}  "
                f"cv={cv_mean:.4g}{'  *' if best_epoch == epoch else ''}"
            )

    return TrainOutcome(best_models, history, best_epoch, best_cv)
