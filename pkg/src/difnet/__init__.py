"""Decentralized information-filter fusion with cross-correlated measurement
noise, plus a learned-fusion-weight variant and its experiment harness.

Layout:

- ``statespace``    motion models, sensors, Jacobians
- ``distribution``  internodal transforms, pseudo-inverse, communication graph
- ``noise``         jammer-correlated stacked noise model and sampling
- ``filters``       local EKF, information contributions, fusion, oracle
- ``pipeline``      per-trajectory decentralized/centralized runners
- ``autodiff``      reverse-mode tape used for training
- ``network``       recurrent fusion-weight network and checkpoints
- ``training``      squared-error loss with L2 penalty, Adam, BPTT loop
- ``scenarios``     built-in experiment definitions
- ``datasets``      trajectory simulation and CSV persistence
- ``evaluation``    RMSE reports, sigma sweep, fusion timing
- ``cli``           command-line entry point (``difnet ...``)
"""

from .statespace import (
    GaussianBelief,
    MotionModel,
    SensorMeasurementModel,
    cv_transition,
    ct_transition,
    measure,
    measurement_jacobian,
    process_noise_cov,
)
from .distribution import (
    CommunicationGraph,
    InternodalTransform,
    build_graph,
    internodal,
    localize_measurement_jacobian,
    localize_motion,
    pseudo_inverse,
)
from .noise import JammerSpec, StackedCovariance, sample_correlated, stacked_covariance, time_varying_scale
from .filters import (
    FusionWeightSet,
    InfoContribution,
    LocalFilterState,
    ccmn_weight_global,
    ccmn_weight_local,
    centralized_update,
    ekf_predict,
    ekf_update,
    fuse_global,
    fuse_local,
    info_contribution,
    verify_assimilation,
)
from .network import DifnetModel, encode_inputs, forward, gru_cell, load_checkpoint, save_checkpoint
from .scenarios import Scenario, builtin_scenario
from .datasets import Dataset, generate_dataset, load_dataset, save_dataset
from .training import TrainingConfig, adam_step, train
from .evaluation import bench_fusion_time, evaluate_methods, run_method, sigma_sweep

__version__ = "0.1.0"
