"""Dataset container plus the on-disk formats consumed by the CLI.

Files written by ``simulate``:

* ``scenario.yaml``  resolved scenario including the seed
* ``truth.csv``      t, lon, lat, alt, vE, vN, vU, roll, pitch, yaw
* ``imu.csv``        t, wx, wy, wz, fx, fy, fz (SI, body frame)
* ``scans.bin``      packed records (t f64, x f32, y f32, z f32, intensity f32)
* ``gnss.csv``       t, sat, sx, sy, sz, sd_range, sd_phase, wavelength, elevation
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..quat import att_to_quat, quat_to_att
from ..rtk import GnssEpoch
from ..sins import ImuSample
from .scenario import Scenario, load_scenario, save_scenario
from .sensors import ScanSynthesizer, build_constellation, synthesize_gnss, synthesize_imu
from .truth import TruthTrajectory, generate_truth, scenario_frame
from .world import World

_SCAN_DTYPE = np.dtype([("t", "<f8"), ("x", "<f4"), ("y", "<f4"),
                        ("z", "<f4"), ("intensity", "<f4")])


@dataclass
class Dataset:
    scenario: Scenario
    truth: TruthTrajectory
    imu: list                  # ImuSample
    scans: list                # (t, (n, 4) body-frame points)
    gnss: list                 # GnssEpoch
    base_ecef: np.ndarray
    gnss_truth: object = None  # debug bookkeeping, not serialized

    @property
    def frame(self):
        return self.truth.frame


def simulate_dataset(scenario, with_imu_noise=True):
    """Generate the full sensor suite for one scenario, in memory."""
    frame = scenario_frame(scenario)
    truth = generate_truth(scenario, frame)
    world = World(scenario, truth.xy)
    imu = synthesize_imu(truth, scenario.imu, scenario.seed, noise=with_imu_noise)

    synth = ScanSynthesizer(scenario, world)
    step = max(int(round((1.0 / scenario.lidar.rate) / truth.dt)), 1)
    scans = []
    for si, k in enumerate(range(0, truth.t.shape[0], step)):
        t = float(truth.t[k])
        pts = synth.scan(si, truth.xy[k, 0], truth.xy[k, 1],
                         float(truth.r[k, 2]), float(truth.heading[k]), t)
        scans.append((t, pts))

    epochs, base_ecef, gtruth = synthesize_gnss(
        scenario, truth, build_constellation(scenario, frame))
    return Dataset(scenario, truth, imu.samples, scans, epochs, base_ecef, gtruth)


def save_dataset(ds, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_scenario(ds.scenario, directory / "scenario.yaml")
    save_truth_csv(ds.truth, directory / "truth.csv")

    with open(directory / "imu.csv", "w", encoding="utf-8") as fh:
        fh.write("t,wx,wy,wz,fx,fy,fz\n")
        for s in ds.imu:
            fh.write(f"{s.t:.9f},{s.omega[0]:.12e},{s.omega[1]:.12e},"
                     f"{s.omega[2]:.12e},{s.f[0]:.12e},{s.f[1]:.12e},{s.f[2]:.12e}\n")

    total = sum(p.shape[0] for _, p in ds.scans)
    rec = np.empty(total, dtype=_SCAN_DTYPE)
    pos = 0
    for t, pts in ds.scans:
        m = pts.shape[0]
        rec["t"][pos:pos + m] = t
        rec["x"][pos:pos + m] = pts[:, 0]
        rec["y"][pos:pos + m] = pts[:, 1]
        rec["z"][pos:pos + m] = pts[:, 2]
        rec["intensity"][pos:pos + m] = pts[:, 3]
        pos += m
    rec.tofile(directory / "scans.bin")

    with open(directory / "gnss.csv", "w", encoding="utf-8") as fh:
        fh.write("t,sat,sx,sy,sz,sd_range,sd_phase,wavelength,elevation\n")
        for ep in ds.gnss:
            for i in range(ep.n_sats):
                fh.write(f"{ep.t:.9f},{int(ep.sats[i])},"
                         f"{ep.sat_pos[i, 0]:.6f},{ep.sat_pos[i, 1]:.6f},"
                         f"{ep.sat_pos[i, 2]:.6f},{ep.sd_range[i]:.6f},"
                         f"{ep.sd_phase[i]:.6f},{ep.wavelength[i]:.12f},"
                         f"{ep.elevation[i]:.9f}\n")
    np.savetxt(directory / "base_ecef.csv", ds.base_ecef[None, :],
               delimiter=",", header="x,y,z", comments="")


def save_truth_csv(truth, path):
    n = truth.t.shape[0]
    att = np.array([quat_to_att(truth.q[k]) for k in range(n)])
    cols = np.column_stack([truth.t, truth.r, truth.v,
                            att[:, 2], att[:, 1], att[:, 0]])
    header = "t,lon,lat,alt,vE,vN,vU,roll,pitch,yaw"
    np.savetxt(path, cols, delimiter=",", header=header, comments="",
               fmt="%.12e")


def load_dataset(directory):
    directory = Path(directory)
    scenario = load_scenario(directory / "scenario.yaml")
    frame = scenario_frame(scenario)

    truth_cols = np.loadtxt(directory / "truth.csv", delimiter=",", skiprows=1)
    q = np.array([att_to_quat(h, p, r)
                  for r, p, h in zip(truth_cols[:, 7], truth_cols[:, 8],
                                     truth_cols[:, 9])])
    r = truth_cols[:, 1:4]
    if frame.model.is_flat:
        xy = r[:, 0:2].copy()
    else:
        xs, ys = frame.projection.forward(r[:, 0], r[:, 1])
        xy = np.stack([xs, ys], axis=1)
    heading = truth_cols[:, 9]
    truth = TruthTrajectory(truth_cols[:, 0], r, truth_cols[:, 4:7], q, xy,
                            heading, frame)

    imu_cols = np.loadtxt(directory / "imu.csv", delimiter=",", skiprows=1)
    imu = [ImuSample(float(row[0]), row[1:4].copy(), row[4:7].copy())
           for row in np.atleast_2d(imu_cols)]

    rec = np.fromfile(directory / "scans.bin", dtype=_SCAN_DTYPE)
    scans = []
    if rec.size:
        boundaries = np.nonzero(np.diff(rec["t"]) != 0.0)[0] + 1
        for chunk in np.split(rec, boundaries):
            pts = np.column_stack([chunk["x"], chunk["y"], chunk["z"],
                                   chunk["intensity"]]).astype(float)
            scans.append((float(chunk["t"][0]), pts))

    gnss = []
    raw = np.loadtxt(directory / "gnss.csv", delimiter=",", skiprows=1)
    if raw.size:
        raw = np.atleast_2d(raw)
        boundaries = np.nonzero(np.diff(raw[:, 0]) != 0.0)[0] + 1
        for chunk in np.split(raw, boundaries):
            gnss.append(GnssEpoch(
                t=float(chunk[0, 0]),
                sats=chunk[:, 1].astype(np.int64),
                sat_pos=chunk[:, 2:5].copy(),
                sd_range=chunk[:, 5].copy(),
                sd_phase=chunk[:, 6].copy(),
                wavelength=chunk[:, 7].copy(),
                elevation=chunk[:, 8].copy(),
            ))
    base = np.loadtxt(directory / "base_ecef.csv", delimiter=",", skiprows=1)
    return Dataset(scenario, truth, imu, scans, gnss, base.reshape(3))
