"""Shared fixtures: scenarios sized for fast tests and a reduced 2-D model."""

from __future__ import annotations

import numpy as np
import pytest

from difnet.datasets import generate_dataset
from difnet.distribution import InternodalTransform
from difnet.noise import JammerSpec
from difnet.scenarios import Scenario, builtin_scenario
from difnet.statespace import MotionModel, SensorMeasurementModel


def build_reduced_scenario(steps: int = 10, split_sizes=(3, 1, 2)) -> Scenario:
    """m=2, N=2 constant-velocity scenario for gradient and smoke tests."""
    f = np.array([[1.0, 1.0], [0.0, 1.0]])
    q_unit = np.array([[1.0 / 3.0, 0.5], [0.5, 1.0]])
    t1 = InternodalTransform(1, np.eye(2))
    t2 = InternodalTransform(2, np.array([[1.0, 0.0]]))
    sensors = [
        SensorMeasurementModel(
            1, "linear-selector", np.diag([25.0, 4.0]), selector=np.eye(2)
        ),
        SensorMeasurementModel(
            2, "linear-selector", np.array([[16.0]]), selector=np.array([[1.0, 0.0]])
        ),
    ]
    jammer = JammerSpec(
        np.diag([36.0, 9.0]),
        {1: 0.7, 2: 0.4},
        {1: np.eye(2), 2: np.array([[1.0, 0.0]])},
    )
    return Scenario(
        name="reduced",
        motion=MotionModel("constant-velocity", dt=1.0, q=1.0),
        sensors=sensors,
        transforms=[t1, t2],
        jammer=jammer,
        x0=[0.0, 1.0],
        init_mean=[0.5, 0.8],
        init_cov=4.0 * np.eye(2),
        steps=steps,
        inexact_q=2.0,
        split_sizes=split_sizes,
        custom_transition=f,
        custom_unit_noise=q_unit,
    )


@pytest.fixture(scope="session")
def linear_scenario():
    return builtin_scenario("linear-cv")


@pytest.fixture(scope="session")
def nonlinear_scenario():
    return builtin_scenario("nonlinear-ct")


@pytest.fixture(scope="session")
def small_linear_dataset(linear_scenario):
    return generate_dataset(linear_scenario, seed=7, split_sizes=(6, 2, 4))


@pytest.fixture(scope="session")
def reduced_scenario():
    return build_reduced_scenario()


@pytest.fixture(scope="session")
def reduced_dataset(reduced_scenario):
    return generate_dataset(reduced_scenario, seed=3)
