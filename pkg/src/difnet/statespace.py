"""Target motion models and per-sensor measurement models.

The global state vector is ``[x, xdot, y, ydot, z, zdot]`` in meters and
meters/second.  Two motion models are provided: constant velocity, and a
planar coordinated turn with known rate (the z axis stays constant
velocity).  Measurement models come in three kinds:

* ``linear-selector`` -- a 0/1 row-selection of state components,
* ``azimuth-speed``   -- bearing to the target and horizontal speed,
* ``range-speed``     -- horizontal distance to the sensor and horizontal speed.

Angles are radians everywhere inside the library; degree-to-radian
conversion is a configuration-loading concern.

All functions are pure.  They accept plain arrays (with optional leading
batch dimensions, vectors as ``(..., n, 1)`` columns) or tape variables,
so the same code serves both filtering and gradient-based training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arrayops as ao

__all__ = [
    "STATE_DIM",
    "SMALL_TURN",
    "GaussianBelief",
    "MotionModel",
    "SensorMeasurementModel",
    "SingularGeometryError",
    "cv_transition_matrix",
    "ct_transition_matrix",
    "cv_transition",
    "ct_transition",
    "process_noise_cov",
    "measure",
    "measurement_jacobian",
    "angular_components",
]

STATE_DIM = 6

# |omega * dt| below this switches the turn entries to their analytic limits.
SMALL_TURN = 1e-8


class SingularGeometryError(ValueError):
    """Target geometry makes a nonlinear measurement (or its Jacobian) undefined."""


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """A mean vector with symmetric PSD covariance; the currency of every filter step.

    ``mean`` is ``(d,)`` and ``cov`` is ``(d, d)`` at the public API; the
    internal pipeline carries batched column-vector variants of the same data.
    """

    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return int(np.shape(self.mean)[-1])

    def validate(self, rtol: float = 1e-9) -> "GaussianBelief":
        """Check symmetry and PSD-ness (eigenvalues >= -rtol * trace)."""
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape[-1] != cov.shape[-2] or cov.shape[-1] != mean.shape[-1]:
            raise ValueError(f"inconsistent belief shapes {mean.shape} / {cov.shape}")
        scale = max(float(np.max(np.abs(cov))), 1.0)
        if np.max(np.abs(cov - np.swapaxes(cov, -1, -2))) > rtol * scale:
            raise ValueError("covariance is not symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (cov + np.swapaxes(cov, -1, -2)))
        trace = np.abs(np.trace(cov, axis1=-2, axis2=-1))
        if np.min(eigs) < -rtol * max(float(np.max(trace)), 1.0):
            raise ValueError("covariance is not PSD")
        return self


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Discrete-time target motion model.

    Args:
        kind: ``"constant-velocity"`` or ``"coordinated-turn"``.
        dt: sampling interval in seconds.
        q: process-noise standard deviation.
        omega: turn rate in rad/s (coordinated-turn only).
    """

    kind: str
    dt: float
    q: float
    omega: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant-velocity", "coordinated-turn"):
            raise ValueError(f"unknown motion model kind {self.kind!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.q < 0:
            raise ValueError("q must be non-negative")

    def transition_matrix(self) -> np.ndarray:
        if self.kind == "constant-velocity":
            return cv_transition_matrix(self.dt)
        return ct_transition_matrix(self.omega, self.dt)

    def noise_cov(self) -> np.ndarray:
        return process_noise_cov(self)


def cv_transition_matrix(dt: float) -> np.ndarray:
    """Constant-velocity transition: position += velocity * dt per axis."""
    block = np.array([[1.0, dt], [0.0, 1.0]])
    return np.kron(np.eye(3), block)


def ct_transition_matrix(omega: float, dt: float) -> np.ndarray:
    """Coordinated-turn transition (turn in the x-y plane, CV in z).

    Uses the analytic small-angle limit when |omega * dt| < SMALL_TURN, where
    sin(wT)/w -> T and (1 - cos(wT))/w -> 0.
    """
    if abs(omega * dt) < SMALL_TURN:
        s_w = dt
        c_w = 0.0
        sin_wt = 0.0
        cos_wt = 1.0
    else:
        sin_wt = np.sin(omega * dt)
        cos_wt = np.cos(omega * dt)
        s_w = sin_wt / omega
        c_w = (1.0 - cos_wt) / omega
    f = np.eye(STATE_DIM)
    f[0, 1] = s_w
    f[0, 3] = -c_w
    f[1, 1] = cos_wt
    f[1, 3] = -sin_wt
    f[2, 1] = c_w
    f[2, 3] = s_w
    f[3, 1] = sin_wt
    f[3, 3] = cos_wt
    f[4, 5] = dt
    return f


def cv_transition(state, dt: float):
    """Apply the constant-velocity transition to a state (vector or column batch)."""
    return _apply_matrix(cv_transition_matrix(dt), state)


def ct_transition(state, omega: float, dt: float):
    """Apply the coordinated-turn transition to a state (vector or column batch)."""
    return _apply_matrix(ct_transition_matrix(omega, dt), state)


def _apply_matrix(f: np.ndarray, state):
    if isinstance(state, (list, tuple)):
        state = np.asarray(state, dtype=float)
    if isinstance(state, np.ndarray) and state.ndim == 1:
        return f @ state
    return f @ state


def process_noise_cov(model: MotionModel) -> np.ndarray:
    """Process-noise covariance of ``model``; symmetric PSD."""
    dt, q, omega = model.dt, model.q, model.omega
    cv_block = np.array(
        [[dt**4 / 3.0, dt**3 / 2.0], [dt**3 / 2.0, dt**2]]
    )
    if model.kind == "constant-velocity":
        return q**2 * np.kron(np.eye(3), cv_block)

    # Coordinated turn: coupled x-y block plus the CV z block.
    if abs(omega * dt) < SMALL_TURN:
        a = dt**3 / 3.0
        b = dt**2 / 2.0
        c = 0.0
    else:
        a = 2.0 * (omega * dt - np.sin(omega * dt)) / omega**3
        b = (1.0 - np.cos(omega * dt)) / omega**2
        c = (omega * dt - np.sin(omega * dt)) / omega**2
    xy = np.array(
        [
            [a, b, 0.0, c],
            [b, dt, -c, 0.0],
            [0.0, -c, a, b],
            [c, 0.0, b, dt],
        ]
    )
    out = np.zeros((STATE_DIM, STATE_DIM))
    out[:4, :4] = xy
    out[4:, 4:] = cv_block
    return q**2 * out


@dataclass(frozen=True, eq=False)
class SensorMeasurementModel:
    """One sensor's measurement function, noise, and analytic Jacobian.

    ``selector`` (linear kind) must consist of distinct unit rows.  Nonlinear
    kinds need a 3-vector ``position`` in meters; only its horizontal part
    enters the geometry.  ``noise_cov`` is the sensor's own-noise covariance
    (symmetric positive definite).
    """

    sensor_id: int
    kind: str
    noise_cov: np.ndarray
    selector: np.ndarray | None = None
    position: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("linear-selector", "azimuth-speed", "range-speed"):
            raise ValueError(f"unknown sensor kind {self.kind!r}")
        noise = np.asarray(self.noise_cov, dtype=float)
        object.__setattr__(self, "noise_cov", noise)
        if noise.ndim != 2 or noise.shape[0] != noise.shape[1]:
            raise ValueError("noise_cov must be square")
        if np.max(np.abs(noise - noise.T)) > 1e-9 * max(np.max(np.abs(noise)), 1.0):
            raise ValueError("noise_cov must be symmetric")
        try:
            np.linalg.cholesky(noise)
        except np.linalg.LinAlgError:
            raise ValueError("noise_cov must be positive definite") from None
        if self.kind == "linear-selector":
            if self.selector is None:
                raise ValueError("linear-selector sensors need a selector matrix")
            sel = np.asarray(self.selector, dtype=float)
            object.__setattr__(self, "selector", sel)
            rows = []
            for row in sel:
                nz = np.nonzero(row)[0]
                if len(nz) != 1 or row[nz[0]] != 1.0:
                    raise ValueError("selector rows must be unit rows")
                rows.append(nz[0])
            if len(set(rows)) != len(rows):
                raise ValueError("selector rows must be distinct")
            if sel.shape[0] != noise.shape[0]:
                raise ValueError("selector row count must match noise dimension")
        else:
            if self.position is None:
                raise ValueError(f"{self.kind} sensors need a position")
            pos = np.asarray(self.position, dtype=float)
            if pos.shape != (3,):
                raise ValueError("position must be a 3-vector")
            object.__setattr__(self, "position", pos)
            if noise.shape[0] != 2:
                raise ValueError(f"{self.kind} sensors produce 2-D measurements")

    @property
    def n_meas(self) -> int:
        return int(self.noise_cov.shape[0])


def angular_components(sensor: SensorMeasurementModel) -> tuple[int, ...]:
    """Indices of measurement components that are angles (need wrapping)."""
    return (0,) if sensor.kind == "azimuth-speed" else ()


def _comp(state, i: int):
    """Component ``i`` of a column state as a (..., 1, 1) block."""
    return state[..., i : i + 1, :]


def _check_geometry(r2_value: np.ndarray, what: str) -> None:
    if np.any(ao.asvalue(r2_value) < 1e-12):
        raise SingularGeometryError(
            f"target horizontally coincident with the sensor: {what} undefined"
        )


def measure(sensor: SensorMeasurementModel, state):
    """Noise-free measurement mean ``h(state)``.

    Accepts a flat ``(m,)`` vector or a ``(..., m, 1)`` column (batched, or a
    tape variable); the return matches the input convention.
    """
    flat = isinstance(state, (list, tuple)) or (
        isinstance(state, np.ndarray) and np.ndim(state) == 1
    )
    col = np.asarray(state, dtype=float)[:, None] if flat else state
    out = _measure_col(sensor, col)
    return out[:, 0] if flat else out


def _measure_col(sensor: SensorMeasurementModel, state):
    if sensor.kind == "linear-selector":
        return sensor.selector @ state
    sx, sy = sensor.position[0], sensor.position[1]
    dx = _comp(state, 0) - sx
    dy = _comp(state, 2) - sy
    vx = _comp(state, 1)
    vy = _comp(state, 3)
    speed = ao.sqrt(vx * vx + vy * vy)
    r2 = dx * dx + dy * dy
    _check_geometry(ao.asvalue(r2), sensor.kind)
    if sensor.kind == "azimuth-speed":
        first = ao.atan2(dy, dx)
    else:
        first = ao.sqrt(r2)
    return ao.concat([first, speed], axis=-2)


def measurement_jacobian(sensor: SensorMeasurementModel, state):
    """Analytic Jacobian of :func:`measure` at ``state`` (shape ``(..., n, m)``)."""
    flat = isinstance(state, (list, tuple)) or (
        isinstance(state, np.ndarray) and np.ndim(state) == 1
    )
    col = np.asarray(state, dtype=float)[:, None] if flat else state
    if sensor.kind == "linear-selector":
        return sensor.selector.copy()
    sx, sy = sensor.position[0], sensor.position[1]
    dx = _comp(col, 0) - sx
    dy = _comp(col, 2) - sy
    vx = _comp(col, 1)
    vy = _comp(col, 3)
    r2 = dx * dx + dy * dy
    _check_geometry(ao.asvalue(r2), sensor.kind)
    s2 = vx * vx + vy * vy
    if np.any(ao.asvalue(s2) < 1e-12):
        raise SingularGeometryError("zero horizontal speed: speed row is singular")
    speed = ao.sqrt(s2)
    zero = dx * 0.0
    if sensor.kind == "azimuth-speed":
        row1 = ao.concat([-dy / r2, zero, dx / r2, zero, zero, zero], axis=-1)
    else:
        rng = ao.sqrt(r2)
        row1 = ao.concat([dx / rng, zero, dy / rng, zero, zero, zero], axis=-1)
    row2 = ao.concat([zero, vx / speed, zero, vy / speed, zero, zero], axis=-1)
    return ao.concat([row1, row2], axis=-2)
