"""Scenario specification: one structured config drives the whole simulation."""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..errors import ScenarioError


@dataclass
class TrajectorySpec:
    kind: str = "waypoints"            # waypoints | straight | circle | static
    waypoints: list = field(default_factory=list)   # [(x, y)] map meters
    speed_knots: list = field(default_factory=list)  # [(t, v)] m/s
    speed: float = 10.0                # used when speed_knots is empty
    start: tuple = (0.0, 0.0)
    heading: float = 0.0               # rad, straight/static kinds
    length: float = 200.0              # straight
    radius: float = 60.0               # circle
    arc: float = 2.0 * np.pi           # circle, rad
    duration: float = 30.0             # static


@dataclass
class WorldSpec:
    texture_corr_length: float = 2.5   # m, 1/e autocorrelation distance
    texture_sd: float = 35.0
    texture_mean: float = 120.0
    corridor_half_width: float = 26.0  # m of mapped band around the path
    curb_offset: float = 8.0           # m from centerline; 0 disables
    curb_height: float = 0.12
    curb_width: float = 0.5
    crossing_period: float = 150.0     # curb gaps (intersections)
    crossing_length: float = 12.0
    wall_offset: float = 12.0          # 0 disables
    wall_height: float = 0.42
    wall_width: float = 0.5
    wall_gap_period: float = 60.0
    wall_gap_length: float = 8.0
    altitude_roughness: float = 0.008  # m
    change_interval: tuple = ()        # (s0, s1) along-track; empty disables
    change_fraction: float = 0.0       # intensity decorrelation probability
    change_new_wall: bool = False
    change_wall_offset: float = 9.5
    change_wall_height: float = 0.45


@dataclass
class ImuSpec:
    rate: float = 200.0
    sigma_gyro: float = 5.8e-5         # rad/s/sqrt(Hz)
    sigma_accel: float = 8.3e-4        # m/s^2/sqrt(Hz)
    sigma_bg_walk: float = 2.0e-8
    sigma_ba_walk: float = 2.0e-6
    bg_init: float = 2.4e-5            # rad/s
    ba_init: float = 4.9e-3            # m/s^2


@dataclass
class LidarSpec:
    rate: float = 10.0
    range: float = 22.0                # m
    sparsity: float = 0.02             # occupied fraction of footprint cells
    sigma_intensity: float = 4.0
    sigma_altitude: float = 0.03       # m


@dataclass
class GnssSpec:
    rate: float = 5.0
    n_sats: int = 10
    sigma_range: float = 0.5
    sigma_phase: float = 0.003
    base_offset: tuple = (-400.0, 250.0)   # base station, map meters
    min_elevation: float = 0.26            # rad
    outage_windows: list = field(default_factory=list)     # [(t0, t1)]
    multipath_windows: list = field(default_factory=list)  # [(t0, t1, factor)]
    slip_injections: list = field(default_factory=list)    # [(t, sat, cycles)]
    clock_offset: float = 30.0         # m, initial relative receiver clock
    clock_drift: float = 0.5           # m/s


@dataclass
class DelaySpec:
    lidar_mean: float = 0.08
    lidar_jitter: float = 0.04
    gnss_mean: float = 0.06
    gnss_jitter: float = 0.03


@dataclass
class MapSurveySpec:
    obs_per_cell: int = 3
    sigma_intensity: float = 4.0
    sigma_altitude: float = 0.03


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 1
    anchor_lon_deg: float = 116.35
    anchor_lat_deg: float = 31.80
    flat_earth: bool = False
    resolution: float = 0.125
    tile_dim: int = 256
    change_time: float = 0.0           # scans at t >= change_time see changes
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    world: WorldSpec = field(default_factory=WorldSpec)
    imu: ImuSpec = field(default_factory=ImuSpec)
    lidar: LidarSpec = field(default_factory=LidarSpec)
    gnss: GnssSpec = field(default_factory=GnssSpec)
    delays: DelaySpec = field(default_factory=DelaySpec)
    survey: MapSurveySpec = field(default_factory=MapSurveySpec)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        nested = {
            "trajectory": TrajectorySpec, "world": WorldSpec, "imu": ImuSpec,
            "lidar": LidarSpec, "gnss": GnssSpec, "delays": DelaySpec,
            "survey": MapSurveySpec,
        }
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                kwargs[key] = nested[key](**value) if isinstance(value, dict) else value
            else:
                kwargs[key] = value
        unknown = set(kwargs) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**kwargs)


def save_scenario(scenario, path):
    Path(path).write_text(yaml.safe_dump(_plain(scenario.to_dict()),
                                         sort_keys=True), encoding="utf-8")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def load_scenario(path):
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ScenarioError(f"scenario file {path} is not a mapping")
    return Scenario.from_dict(data)


# ---------------------------------------------------------------------------
# Presets used by the CLI and the acceptance suite
# ---------------------------------------------------------------------------

def _s_curve_waypoints(length, amplitude=60.0, period=700.0):
    xs = np.linspace(0.0, length, max(int(length / 50.0), 8))
    ys = amplitude * np.sin(2.0 * np.pi * xs / period)
    return [(float(x), float(y)) for x, y in zip(xs, ys)]


def preset(name, seed=None):
    """Built-in scenarios; ``name`` may also be a YAML file path."""
    if name == "nominal":
        scn = Scenario(
            name="nominal",
            seed=7,
            trajectory=TrajectorySpec(kind="waypoints",
                                      waypoints=_s_curve_waypoints(2000.0),
                                      speed=15.0),
        )
    elif name == "tunnel":
        scn = Scenario(
            name="tunnel",
            seed=11,
            trajectory=TrajectorySpec(kind="waypoints",
                                      waypoints=_s_curve_waypoints(1400.0, 35.0, 900.0),
                                      speed=12.0),
            world=WorldSpec(wall_offset=10.0, wall_gap_period=45.0,
                            wall_gap_length=6.0),
            gnss=GnssSpec(outage_windows=[(25.0, 85.0)]),
        )
    elif name == "env_change":
        scn = Scenario(
            name="env_change",
            seed=13,
            trajectory=TrajectorySpec(kind="waypoints",
                                      waypoints=_s_curve_waypoints(900.0, 40.0, 800.0),
                                      speed=12.0),
            world=WorldSpec(change_interval=(280.0, 620.0),
                            change_fraction=0.4,
                            change_new_wall=True),
        )
    elif name == "smoke":
        scn = Scenario(
            name="smoke",
            seed=3,
            trajectory=TrajectorySpec(kind="straight", start=(0.0, 0.0),
                                      heading=np.pi / 2.0, length=120.0,
                                      speed=10.0),
            lidar=LidarSpec(range=18.0, sparsity=0.025),
        )
    elif Path(name).exists():
        scn = load_scenario(name)
    else:
        raise ScenarioError(f"unknown scenario {name!r}")
    if seed is not None:
        scn.seed = int(seed)
    return scn
