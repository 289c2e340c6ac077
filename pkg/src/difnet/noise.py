"""Stacked measurement-noise model with a shared jammer disturbance.

Each sensor sees its own white noise plus ``beta_j * S_j @ w0``, where ``w0``
is a common jammer signal with covariance ``R0`` and ``S_j`` maps jammer space
into the sensor's measurement space.  Stacking all sensors gives a full
covariance whose off-diagonal blocks carry the cross-correlation:

    block(i, j) = beta_i * beta_j * S_i @ R0 @ S_j.T        (i != j)
    block(j, j) = R_j + beta_j^2 * S_j @ R0 @ S_j.T

A multiplicative time-varying scale ``1 + sigma * cos(2*pi*k/period)`` models
slowly breathing noise levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "JammerSpec",
    "StackedCovariance",
    "stacked_covariance",
    "time_varying_scale",
    "sample_correlated",
]


@dataclass(frozen=True, eq=False)
class JammerSpec:
    """Shared-jammer description: covariance, per-sensor couplings and selectors."""

    r0: np.ndarray
    betas: dict[int, float]
    selectors: dict[int, np.ndarray]

    def __post_init__(self):
        r0 = np.asarray(self.r0, dtype=float)
        object.__setattr__(self, "r0", r0)
        if r0.ndim != 2 or r0.shape[0] != r0.shape[1]:
            raise ValueError("R0 must be square")
        try:
            np.linalg.cholesky(r0)
        except np.linalg.LinAlgError:
            raise ValueError("R0 must be positive definite") from None
        selectors = {k: np.asarray(v, dtype=float) for k, v in self.selectors.items()}
        object.__setattr__(self, "selectors", selectors)
        if set(self.betas) != set(selectors):
            raise ValueError("betas and selectors must cover the same sensors")
        for sid, sel in selectors.items():
            if sel.shape[1] != r0.shape[0]:
                raise ValueError(
                    f"selector of sensor {sid} has {sel.shape[1]} columns, "
                    f"expected dim(R0) = {r0.shape[0]}"
                )


class StackedCovariance:
    """Symmetric PSD covariance of the stacked measurement noise.

    Stores the full matrix along with the per-sensor block layout.  Whole-
    matrix symmetry (``block(i,j) == block(j,i).T``) is enforced; indefinite
    inputs are rejected, but singular-PSD ones (e.g. the all-zero noise used
    by noise-free simulations) are allowed.
    """

    def __init__(self, sensor_dims: dict[int, int], matrix: np.ndarray):
        self._dims = dict(sensor_dims)
        self._order = sorted(self._dims)
        offsets = {}
        start = 0
        for sid in self._order:
            offsets[sid] = slice(start, start + self._dims[sid])
            start += self._dims[sid]
        self._slices = offsets
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (start, start):
            raise ValueError(f"matrix shape {matrix.shape} != stacked dim {start}")
        scale = max(float(np.max(np.abs(matrix))), 1.0)
        if np.max(np.abs(matrix - matrix.T)) > 1e-9 * scale:
            raise ValueError("stacked covariance must be symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
        if eigs[0] < -1e-9 * max(np.trace(matrix), 1.0):
            raise ValueError("stacked covariance is indefinite")
        self._matrix = matrix

    @classmethod
    def from_blocks(cls, blocks: dict[tuple[int, int], np.ndarray]) -> "StackedCovariance":
        dims = {i: np.asarray(b).shape[0] for (i, j), b in blocks.items() if i == j}
        order = sorted(dims)
        total = sum(dims.values())
        out = np.zeros((total, total))
        start = {sid: sum(dims[s] for s in order[: order.index(sid)]) for sid in order}
        for i in order:
            for j in order:
                block = blocks.get((i, j))
                if block is None:
                    block = np.asarray(blocks[(j, i)]).T if (j, i) in blocks else 0.0
                si, sj = start[i], start[j]
                out[si : si + dims[i], sj : sj + dims[j]] = block
        return cls(dims, out)

    @classmethod
    def block_diagonal(cls, blocks: dict[int, np.ndarray]) -> "StackedCovariance":
        return cls.from_blocks({(i, i): b for i, b in blocks.items()})

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    @property
    def sensor_ids(self) -> tuple[int, ...]:
        return tuple(self._order)

    def block(self, i: int, j: int) -> np.ndarray:
        return self._matrix[self._slices[i], self._slices[j]]

    def sensor_slice(self, sensor_id: int) -> slice:
        return self._slices[sensor_id]

    def scaled(self, factor: float) -> "StackedCovariance":
        return StackedCovariance(self._dims, factor * self._matrix)

    def diagonal_blocks(self) -> dict[int, np.ndarray]:
        return {sid: self.block(sid, sid).copy() for sid in self._order}


def stacked_covariance(jammer: JammerSpec, sensors) -> StackedCovariance:
    """Stacked covariance of the jammer-correlated noise across ``sensors``."""
    by_id = {s.sensor_id: s for s in sensors}
    if set(by_id) != set(jammer.betas):
        raise ValueError("jammer spec does not cover the sensor set")
    blocks: dict[tuple[int, int], np.ndarray] = {}
    for i, si in by_id.items():
        seli = jammer.selectors[i]
        if seli.shape[0] != si.n_meas:
            raise ValueError(
                f"jammer selector of sensor {i} has {seli.shape[0]} rows, "
                f"expected n_j = {si.n_meas}"
            )
        for j, sj in by_id.items():
            common = jammer.betas[i] * jammer.betas[j] * (
                seli @ jammer.r0 @ jammer.selectors[j].T
            )
            if i == j:
                common = si.noise_cov + common
            blocks[(i, j)] = common
    return StackedCovariance.from_blocks(blocks)


def time_varying_scale(
    base: StackedCovariance, k: int, sigma: float, period: int
) -> StackedCovariance:
    """Scale every block by ``1 + sigma * cos(2*pi*k/period)``.

    Requires |sigma| < 1 (otherwise the scale can reach zero or below and the
    result loses positive definiteness) and period >= 1.
    """
    if not abs(sigma) < 1.0:
        raise ValueError("|sigma| must be < 1")
    if period < 1:
        raise ValueError("period must be >= 1")
    return base.scaled(1.0 + sigma * np.cos(2.0 * np.pi * k / period))


def sample_correlated(cov: StackedCovariance, rng: np.random.Generator) -> np.ndarray:
    """One zero-mean Gaussian draw with covariance ``cov``.

    Uses the lower-triangular Cholesky factor; deterministic given the
    generator state.  An identically-zero covariance yields the zero vector;
    any other factorization failure signals a non-PD covariance.
    """
    matrix = cov.matrix
    if not matrix.any():
        return np.zeros(cov.dim)
    try:
        lower = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "stacked covariance is not positive definite; cannot sample"
        ) from None
    return lower @ rng.standard_normal(cov.dim)
