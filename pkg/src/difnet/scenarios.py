"""Built-in simulation scenarios and the filter-parameter variants they carry.

Three scenarios ship with the package:

* ``linear-cv``     -- constant-velocity target, four selector sensors, a
  shared jammer coupling all measurement noises (beta = 0.5 each).
* ``nonlinear-ct``  -- coordinated-turn target; bearing/speed, range/speed,
  full-state and z-selector sensors; jammer couplings beta = 2.
* ``timevarying``   -- the linear scenario with the stacked noise covariance
  breathed by ``1 + sigma * cos(2*pi*k/period)`` during data generation.

Each scenario also defines the deliberately wrong filter parameters used by
the inexact-model runs: process-noise std ``q' = 5`` and a block-diagonal
noise covariance made of the element-wise square roots of the sensors' own
covariances.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .distribution import CommunicationGraph, InternodalTransform, build_graph
from .noise import JammerSpec, StackedCovariance, stacked_covariance
from .statespace import MotionModel, SensorMeasurementModel

__all__ = [
    "Scenario",
    "FilterParams",
    "builtin_scenario",
    "BUILTIN_SCENARIOS",
    "DEG2RAD",
]

DEG2RAD = np.pi / 180.0


@dataclass(frozen=True, eq=False)
class FilterParams:
    """What a filter run believes about the world (may differ from truth)."""

    label: str
    q: float
    r_blocks: dict[int, np.ndarray]
    r_stacked: StackedCovariance


@dataclass(frozen=True, eq=False)
class Scenario:
    """Complete experiment description: truth model, sensors, noise, priors."""

    name: str
    motion: MotionModel
    sensors: list[SensorMeasurementModel]
    transforms: list[InternodalTransform]
    jammer: JammerSpec
    x0: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray
    steps: int = 50
    inexact_q: float = 5.0
    inexact_noise: str = "interpreted"
    sigma: float = 0.0
    noise_period: int = 50
    split_sizes: tuple[int, int, int] = (100, 20, 40)
    # Reduced/custom models (testing, non-6D states): transition matrix and
    # unit-q process noise; when set they replace the MotionModel matrices.
    custom_transition: np.ndarray | None = None
    custom_unit_noise: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "init_mean", np.asarray(self.init_mean, dtype=float))
        object.__setattr__(self, "init_cov", np.asarray(self.init_cov, dtype=float))
        if self.steps < 1:
            raise ValueError("trajectory length must be >= 1")
        if self.inexact_noise not in ("interpreted", "literal"):
            raise ValueError("inexact_noise must be 'interpreted' or 'literal'")
        if not -1.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (-1, 1)")
        ids = [s.sensor_id for s in self.sensors]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValueError("sensors must be listed with distinct ascending ids")
        if [t.sensor_id for t in self.transforms] != ids:
            raise ValueError("transforms must match the sensor list")
        for s, t in zip(self.sensors, self.transforms):
            t.require_rank(s.n_meas)

    # -- derived structure ---------------------------------------------------

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def state_dim(self) -> int:
        return int(self.x0.shape[0])

    def transition_matrix(self) -> np.ndarray:
        if self.custom_transition is not None:
            return np.asarray(self.custom_transition, dtype=float)
        return self.motion.transition_matrix()

    def unit_noise_cov(self) -> np.ndarray:
        """Process-noise covariance for q = 1 (scale by q**2 for other q)."""
        if self.custom_unit_noise is not None:
            return np.asarray(self.custom_unit_noise, dtype=float)
        from .statespace import process_noise_cov

        return process_noise_cov(replace(self.motion, q=1.0))

    def graph(self) -> CommunicationGraph:
        return build_graph(list(self.transforms))

    def true_stacked_cov(self) -> StackedCovariance:
        return stacked_covariance(self.jammer, self.sensors)

    def inexact_stacked_cov(self) -> StackedCovariance:
        """Block-diagonal element-wise-sqrt covariance of the inexact runs."""
        own = {s.sensor_id: s.noise_cov for s in self.sensors}
        ids = sorted(own)
        if self.inexact_noise == "interpreted":
            sequence = [own[i] for i in ids]
        else:
            # Literal reading repeats the first sensor's block and drops the
            # last one; in the linear scenario its dimensions cannot match.
            sequence = [own[ids[0]]] + [own[i] for i in ids[:-1]]
        blocks = {}
        for sid, block in zip(ids, sequence):
            if block.shape[0] != own[sid].shape[0]:
                raise ValueError(
                    "literal inexact-noise layout is dimensionally inconsistent "
                    f"for sensor {sid}: block is {block.shape[0]}-dimensional, "
                    f"measurement is {own[sid].shape[0]}-dimensional"
                )
            blocks[sid] = np.sqrt(block)
        return StackedCovariance.block_diagonal(blocks)

    # -- filter-parameter variants --------------------------------------------

    def exact_params(self) -> FilterParams:
        r = self.true_stacked_cov()
        return FilterParams("exact", self.motion.q, r.diagonal_blocks(), r)

    def inexact_params(self) -> FilterParams:
        r = self.inexact_stacked_cov()
        return FilterParams("inexact", self.inexact_q, r.diagonal_blocks(), r)

    def cumn_params(self) -> FilterParams:
        """Own-noise blocks are exact; cross-correlation is ignored."""
        true = self.true_stacked_cov()
        blocks = true.diagonal_blocks()
        return FilterParams(
            "cumn", self.motion.q, blocks, StackedCovariance.block_diagonal(blocks)
        )

    # -- identity --------------------------------------------------------------

    def fingerprint(self) -> str:
        """Stable hash of everything that determines generated data."""
        digest = hashlib.sha256()
        digest.update(self.name.encode())
        digest.update(self.motion.kind.encode())
        for value in (
            self.motion.dt,
            self.motion.q,
            self.motion.omega,
            self.inexact_q,
            self.sigma,
            float(self.noise_period),
            float(self.steps),
        ):
            digest.update(np.float64(value).tobytes())
        for arr in (self.x0, self.init_mean, self.init_cov, self.jammer.r0):
            digest.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        for arr in (self.custom_transition, self.custom_unit_noise):
            if arr is not None:
                digest.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        for s, t in zip(self.sensors, self.transforms):
            digest.update(s.kind.encode())
            digest.update(np.ascontiguousarray(s.noise_cov, dtype=float).tobytes())
            if s.selector is not None:
                digest.update(np.ascontiguousarray(s.selector).tobytes())
            if s.position is not None:
                digest.update(np.ascontiguousarray(s.position).tobytes())
            digest.update(np.ascontiguousarray(t.matrix).tobytes())
            digest.update(np.float64(self.jammer.betas[s.sensor_id]).tobytes())
            digest.update(
                np.ascontiguousarray(self.jammer.selectors[s.sensor_id]).tobytes()
            )
        digest.update(str(self.split_sizes).encode())
        return digest.hexdigest()


# ---------------------------------------------------------------------------
# Built-in scenarios


def _diag(*values: float) -> np.ndarray:
    return np.diag(np.asarray(values, dtype=float))


def _standard_transforms() -> list[InternodalTransform]:
    return [
        InternodalTransform(1, np.hstack([np.eye(4), np.zeros((4, 2))])),
        InternodalTransform(2, np.hstack([np.eye(4), np.zeros((4, 2))])),
        InternodalTransform(3, np.eye(6)),
        InternodalTransform(4, np.hstack([np.zeros((2, 4)), np.eye(2)])),
    ]


def _linear_cv(sigma: float = 0.0) -> Scenario:
    transforms = _standard_transforms()
    r_own = {
        1: _diag(100**2, 10**2, 100**2, 10**2),
        2: _diag(200**2, 20**2, 200**2, 20**2),
        3: _diag(200**2, 20**2, 200**2, 20**2, 200**2, 20**2),
        4: _diag(100**2, 10**2),
    }
    sensors = [
        SensorMeasurementModel(i, "linear-selector", r_own[i], selector=t.matrix)
        for i, t in zip((1, 2, 3, 4), transforms)
    ]
    jammer = JammerSpec(
        r0=_diag(100**2, 10**2, 100**2, 10**2, 100**2, 10**2),
        betas={i: 0.5 for i in (1, 2, 3, 4)},
        selectors={t.sensor_id: t.matrix for t in transforms},
    )
    return Scenario(
        name="linear-cv" if sigma == 0.0 else "timevarying",
        motion=MotionModel("constant-velocity", dt=1.0, q=1.0),
        sensors=sensors,
        transforms=transforms,
        jammer=jammer,
        x0=[0.0, 100.0, 0.0, 100.0, 0.0, 100.0],
        init_mean=[100.0] * 6,
        init_cov=10_000.0 * np.eye(6),
        sigma=sigma,
    )


def _nonlinear_ct() -> Scenario:
    transforms = _standard_transforms()
    deg2 = DEG2RAD**2
    r_own = {
        1: _diag(deg2, 15**2),
        2: _diag(250**2, 25**2),
        3: _diag(200**2, 20**2, 200**2, 20**2, 200**2, 20**2),
        4: _diag(100**2, 10**2),
    }
    # Listed positions map in order to sensors 1-4; only the bearing and
    # range sensors actually read theirs.
    positions = {
        1: np.array([-5500.0, 1000.0, 0.0]),
        2: np.array([-5000.0, 0.0, 0.0]),
        3: np.array([500.0, 300.0, 0.0]),
        4: np.array([50.0, 500.0, 0.0]),
    }
    sensors = [
        SensorMeasurementModel(1, "azimuth-speed", r_own[1], position=positions[1]),
        SensorMeasurementModel(2, "range-speed", r_own[2], position=positions[2]),
        SensorMeasurementModel(
            3, "linear-selector", r_own[3], selector=transforms[2].matrix
        ),
        SensorMeasurementModel(
            4, "linear-selector", r_own[4], selector=transforms[3].matrix
        ),
    ]
    jammer_selectors = {
        1: np.array(
            [
                [1, 0, 0, 0, 0, 0, 0, 0, 0],
                [0, 0, 1, 0, 0, 0, 0, 0, 0],
            ],
            dtype=float,
        ),
        2: np.array(
            [
                [0, 1, 0, 0, 0, 0, 0, 0, 0],
                [0, 0, 1, 0, 0, 0, 0, 0, 0],
            ],
            dtype=float,
        ),
        3: np.hstack([np.zeros((6, 3)), np.eye(6)]),
        4: np.hstack([np.zeros((2, 7)), np.eye(2)]),
    }
    jammer = JammerSpec(
        r0=_diag(
            deg2, 150**2, 15**2, 100**2, 10**2, 100**2, 10**2, 100**2, 10**2
        ),
        betas={i: 2.0 for i in (1, 2, 3, 4)},
        selectors=jammer_selectors,
    )
    return Scenario(
        name="nonlinear-ct",
        motion=MotionModel("coordinated-turn", dt=1.0, q=1.0, omega=0.05),
        sensors=sensors,
        transforms=transforms,
        jammer=jammer,
        x0=[0.0, 100.0, 0.0, 100.0, 0.0, 100.0],
        init_mean=[275.0, 10.0, 275.0, 10.0, 275.0, 10.0],
        init_cov=100.0**2 * np.eye(6),
    )


BUILTIN_SCENARIOS = ("linear-cv", "nonlinear-ct", "timevarying")


def builtin_scenario(name: str, sigma: float | None = None) -> Scenario:
    """Construct a built-in scenario by name.

    ``sigma`` overrides the time-varying amplitude (the ``timevarying``
    builtin defaults to 0.5).
    """
    if name == "linear-cv":
        scn = _linear_cv()
    elif name == "nonlinear-ct":
        scn = _nonlinear_ct()
    elif name == "timevarying":
        scn = _linear_cv(sigma=0.5)
    else:
        raise KeyError(
            f"unknown scenario {name!r}; available: {', '.join(BUILTIN_SCENARIOS)}"
        )
    if sigma is not None:
        scn = replace(scn, sigma=float(sigma))
    return scn
