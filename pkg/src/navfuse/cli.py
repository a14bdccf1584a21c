"""Command-line interface: build-map, simulate, localize, evaluate.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import NavfuseError, ScenarioError
from .evaluate import evaluate_tracks
from .gridmap import LidarMap
from .pipeline import MODES, PipelineConfig, build_map_for_scenario, run_localization
from .sim import load_dataset, preset, save_dataset, simulate_dataset
from .sim.truth import scenario_frame

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _load_config(path):
    cfg = PipelineConfig()
    if path is None:
        path = os.environ.get("NAVFUSE_CONFIG")
    if path is None:
        return cfg
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    lidar = data.get("lidar", {})
    for key, value in lidar.items():
        if not hasattr(cfg.lidar, key):
            raise ScenarioError(f"unknown lidar config key {key!r}")
        setattr(cfg.lidar, key, value)
    for key in ("lidar_alt_var", "lidar_heading_var", "log_decimation"):
        if key in data:
            setattr(cfg, key, data[key])
    return cfg


def cmd_build_map(args):
    scenario = preset(args.scenario, args.seed)
    lidar_map = build_map_for_scenario(scenario)
    lidar_map.save(args.out)
    print(f"map: {len(lidar_map.tiles)} tiles -> {args.out}")
    return EXIT_OK


def cmd_simulate(args):
    scenario = preset(args.scenario, args.seed)
    ds = simulate_dataset(scenario)
    save_dataset(ds, args.out)
    print(f"dataset: {len(ds.imu)} imu samples, {len(ds.scans)} scans, "
          f"{len(ds.gnss)} gnss epochs -> {args.out}")
    return EXIT_OK


def cmd_localize(args):
    ds = load_dataset(args.dataset)
    lidar_map = LidarMap.load(args.map) if args.map else None
    if lidar_map is None and args.mode != "gnss-only":
        print("error: --map is required for LiDAR modes", file=sys.stderr)
        return EXIT_INPUT
    cfg = _load_config(args.config)
    run = run_localization(ds, lidar_map, mode=args.mode, cfg=cfg)
    arr = run.as_array()
    header = "t,lon,lat,alt,vE,vN,vU,roll,pitch,yaw,sE,sN,sU"
    np.savetxt(args.out, arr, delimiter=",", header=header, comments="",
               fmt="%.12e")
    print(f"trajectory: {arr.shape[0]} rows -> {args.out}")
    for key, value in sorted(run.stats.items()):
        print(f"  {key}: {value}")
    return EXIT_OK


def cmd_evaluate(args):
    est = np.loadtxt(args.trajectory, delimiter=",", skiprows=1)
    truth = np.loadtxt(args.truth, delimiter=",", skiprows=1)
    est = np.atleast_2d(est)
    truth = np.atleast_2d(truth)
    if args.dataset:
        ds = load_dataset(args.dataset)
        frame = ds.frame
    else:
        # anchor from the truth file start point
        from .geodesy import GeoFrame
        if np.max(np.abs(truth[:, 1:3])) > 2.0 * np.pi:
            frame = GeoFrame.flat()
        else:
            frame = GeoFrame.wgs84(truth[0, 1], truth[0, 2])
    if frame.model.is_flat:
        est_xy = est[:, 1:3]
        truth_xy = truth[:, 1:3]
    else:
        xs, ys = frame.projection.forward(est[:, 1], est[:, 2])
        est_xy = np.stack([xs, ys], axis=1)
        xs, ys = frame.projection.forward(truth[:, 1], truth[:, 2])
        truth_xy = np.stack([xs, ys], axis=1)
    heading = truth[:, 9]
    report = evaluate_tracks(est[:, 0], est_xy, truth[:, 0], truth_xy, heading)
    print(report.summary())
    if args.out:
        np.savetxt(args.out, report.per_epoch_array(), delimiter=",",
                   header="t,longitudinal,lateral,horizontal", comments="",
                   fmt="%.9e")
        print(f"per-epoch errors -> {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="navfuse",
        description="Multi-sensor vehicle localization pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", help="survey a scenario world into map tiles")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("simulate", help="generate a sensor dataset")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("localize", help="replay a dataset through a fusion mode")
    p.add_argument("--dataset", required=True)
    p.add_argument("--map", default=None)
    p.add_argument("--mode", default="3sys", choices=MODES)
    p.add_argument("--config", default=None,
                   help="YAML pipeline config (or NAVFUSE_CONFIG env var)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="compare a trajectory against truth")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--dataset", default=None,
                   help="dataset directory supplying the projection anchor")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (FileNotFoundError, ScenarioError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NavfuseError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
