"""Secure beamforming and subcarrier allocation for an MC-NOMA ISAC downlink.

A base station with a uniform linear array serves NOMA user clusters on
orthogonal subcarriers while sensing a point target, in the presence of an
active eavesdropper that jams the users and intercepts confidential streams.
The optimizer maximizes the minimum user rate subject to per-user leakage
caps (graded security), a sensing CRB budget, and a total power budget, via
an iterative fractional-programming / SCA pipeline over a semidefinite
relaxation.
"""

__version__ = "0.1.0"

from .config import SystemConfig, Geometry, preset_config, dbm_to_watt, watt_to_dbm
from .scenario import (
    ChannelRealization,
    build_scenario,
    path_loss,
    sample_csi_error,
    steering_vector,
    steering_vector_derivative,
)
from .metrics import BeamSolution
from .fpcore import AuxState
from .optimizer import SolveReport, initialize, run, run_baseline

__all__ = [
    "SystemConfig",
    "Geometry",
    "preset_config",
    "dbm_to_watt",
    "watt_to_dbm",
    "ChannelRealization",
    "build_scenario",
    "path_loss",
    "sample_csi_error",
    "steering_vector",
    "steering_vector_derivative",
    "BeamSolution",
    "AuxState",
    "SolveReport",
    "initialize",
    "run",
    "run_baseline",
]
