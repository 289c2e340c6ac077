"""Model distribution over the sensor network.

An internodal transform ``T_j`` (``m_j x m``) picks sensor *j*'s locally
relevant state components (or combinations) out of the global state.  This
module derives everything the decentralized filter needs from the set of
transforms: Moore-Penrose pseudo-inverses, localized motion and measurement
Jacobians, the node-to-node transforms ``T_ij = T_j @ pinv(T_i)``, and the
communication graph they induce (two nodes talk iff their information spaces
overlap, i.e. ``T_ij`` or ``T_ji`` is nonzero).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InternodalTransform",
    "CommunicationGraph",
    "RankDeficiencyWarning",
    "pseudo_inverse",
    "internodal",
    "localize_motion",
    "localize_measurement_jacobian",
    "build_graph",
]

# Singular values below SVD_RCOND * sigma_max are treated as zero.
SVD_RCOND = 1e-10

# Entries of a node-to-node transform below this are considered exact zeros
# (the shipped transforms are exact 0/1 matrices; this guards round-off).
NONZERO_ATOL = 1e-12


class RankDeficiencyWarning(UserWarning):
    """A localized measurement Jacobian lost row rank numerically."""


def pseudo_inverse(m) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD (batched over leading axes).

    Singular values below ``SVD_RCOND * sigma_max`` are truncated to zero,
    so rank-deficient inputs are handled.
    """
    m = np.asarray(m, dtype=float)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    cutoff = SVD_RCOND * np.max(s, axis=-1, keepdims=True)
    inv_s = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return np.swapaxes(vt, -1, -2) @ (inv_s[..., None] * np.swapaxes(u, -1, -2))


@dataclass(frozen=True, eq=False)
class InternodalTransform:
    """Sensor ``sensor_id``'s selection matrix from global to local state."""

    sensor_id: int
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if mat.shape[0] > mat.shape[1]:
            raise ValueError("local dimension m_j must not exceed the global m")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "pinv", pseudo_inverse(mat))

    # set in __post_init__; declared for type checkers
    pinv: np.ndarray = None  # type: ignore[assignment]

    @property
    def m_local(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def m_global(self) -> int:
        return int(self.matrix.shape[1])

    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.matrix, tol=None))

    def require_rank(self, n_meas: int) -> None:
        """Check the fusion precondition rank(T_j) >= n_j for the owning sensor."""
        if self.rank() < n_meas:
            raise ValueError(
                f"transform of sensor {self.sensor_id} has rank {self.rank()} "
                f"< measurement dimension {n_meas}"
            )


def internodal(ti: InternodalTransform, tj: InternodalTransform) -> np.ndarray:
    """Node-to-node transform ``T_ij = T_j @ pinv(T_i)`` (maps i-local to j-local)."""
    if ti.m_global != tj.m_global:
        raise ValueError("transforms live in different global spaces")
    return tj.matrix @ ti.pinv


def localize_motion(
    t_now: InternodalTransform, t_prev: InternodalTransform, jacobian_f: np.ndarray
) -> np.ndarray:
    """Local motion Jacobian ``T_k @ F @ pinv(T_{k-1})``."""
    return t_now.matrix @ np.asarray(jacobian_f, dtype=float) @ t_prev.pinv


def localize_measurement_jacobian(t: InternodalTransform, jacobian_h) -> np.ndarray:
    """Local measurement Jacobian ``grad_c = grad_h @ pinv(T)``, shape (n_j, m_j)."""
    out = jacobian_h @ t.pinv
    if isinstance(out, np.ndarray) and out.ndim == 2:
        s = np.linalg.svd(out, compute_uv=False)
        if s[-1] <= SVD_RCOND * s[0]:
            warnings.warn(
                f"localized Jacobian for sensor {t.sensor_id} is numerically "
                "rank-deficient; fusion weights may be unreliable",
                RankDeficiencyWarning,
                stacklevel=2,
            )
    return out


class CommunicationGraph:
    """Immutable communication structure induced by the internodal transforms.

    Holds the directed transforms ``T_ij`` for every ordered pair (self pairs
    included) and the undirected edge set: nodes i and j communicate iff at
    least one of ``T_ij``, ``T_ji`` has an entry above ``NONZERO_ATOL``.
    """

    def __init__(self, transforms: list[InternodalTransform]):
        if not transforms:
            raise ValueError("need at least one transform")
        ids = [t.sensor_id for t in transforms]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sensor ids")
        self._by_id = {t.sensor_id: t for t in transforms}
        self._pair: dict[tuple[int, int], np.ndarray] = {}
        for ti in transforms:
            for tj in transforms:
                self._pair[(ti.sensor_id, tj.sensor_id)] = internodal(ti, tj)
        self._edges = frozenset(
            (min(i, j), max(i, j))
            for i in ids
            for j in ids
            if i != j and (self._nonzero(i, j) or self._nonzero(j, i))
        )

    def _nonzero(self, i: int, j: int) -> bool:
        return bool(np.max(np.abs(self._pair[(i, j)])) > NONZERO_ATOL)

    @property
    def sensor_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._by_id))

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return self._edges

    def transform(self, sensor_id: int) -> InternodalTransform:
        return self._by_id[sensor_id]

    def pair_transform(self, i: int, j: int) -> np.ndarray:
        """``T_ij`` mapping node i's local space into node j's."""
        return self._pair[(i, j)]

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Sensors that communicate with node i (excluding i itself), sorted."""
        return tuple(
            j for j in self.sensor_ids if j != i and (min(i, j), max(i, j)) in self._edges
        )


def build_graph(transforms: list[InternodalTransform]) -> CommunicationGraph:
    """Build the communication graph for a list of internodal transforms."""
    return CommunicationGraph(transforms)
