"""Detection and correction of sensor movement for IMU-based knee angle estimation."""

from .axisest import AxisEstimate, EstimatorOptions, NoConvergence, NotEnoughExcitation, Window, estimate_axes
from .calib import SweepConfig, SweepResult, ThresholdTable, optimal_threshold, run_sweep
from .detector import Detector, DetectorConfig, DetectionReport, evaluate
from .kinsim import GaitTrajectory, ImuStream, MountingConfig, MovementEvent, gen_gait, synth_imu
from .metrics import MetricVector, WindowPair, compute_all

__version__ = "0.1.0"

__all__ = [
    "AxisEstimate",
    "Detector",
    "DetectorConfig",
    "DetectionReport",
    "EstimatorOptions",
    "GaitTrajectory",
    "ImuStream",
    "MetricVector",
    "MountingConfig",
    "MovementEvent",
    "NoConvergence",
    "NotEnoughExcitation",
    "SweepConfig",
    "SweepResult",
    "ThresholdTable",
    "Window",
    "WindowPair",
    "compute_all",
    "estimate_axes",
    "evaluate",
    "gen_gait",
    "optimal_threshold",
    "run_sweep",
    "synth_imu",
]
