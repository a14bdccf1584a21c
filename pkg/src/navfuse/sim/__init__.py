"""Deterministic ground-truth world and sensor synthesizer."""

from .scenario import (DelaySpec, GnssSpec, LidarSpec, MapSurveySpec, Scenario,
                       TrajectorySpec, WorldSpec, load_scenario, preset,
                       save_scenario)
from .rng import stream_rng
from .truth import TruthTrajectory, generate_truth
from .world import World
from .sensors import (ImuSynthesis, synthesize_gnss, synthesize_imu,
                      synthesize_scan)
from .dataset import Dataset, load_dataset, save_dataset, simulate_dataset

__all__ = [
    "DelaySpec", "GnssSpec", "LidarSpec", "MapSurveySpec", "Scenario",
    "TrajectorySpec", "WorldSpec", "load_scenario", "preset", "save_scenario",
    "stream_rng", "TruthTrajectory", "generate_truth", "World",
    "ImuSynthesis", "synthesize_gnss", "synthesize_imu", "synthesize_scan",
    "Dataset", "load_dataset", "save_dataset", "simulate_dataset",
]
