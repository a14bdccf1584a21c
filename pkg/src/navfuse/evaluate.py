"""Trajectory evaluation against ground truth.

Errors are decomposed in the truth-heading frame: longitudinal along the
forward axis, lateral along the right axis, so the squared components sum
to the squared horizontal error exactly.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NavfuseError

logger = logging.getLogger(__name__)

ALIGN_TOLERANCE = 0.010   # s


@dataclass
class EvaluationReport:
    t: np.ndarray
    longitudinal: np.ndarray
    lateral: np.ndarray
    horizontal: np.ndarray
    horiz_rms: float
    horiz_max: float
    long_rms: float
    lat_rms: float
    frac_below_030: float
    skipped_epochs: int

    def summary(self):
        return (f"Horiz RMS {self.horiz_rms:.3f} m | Horiz Max "
                f"{self.horiz_max:.3f} m | Long RMS {self.long_rms:.3f} m | "
                f"Lat RMS {self.lat_rms:.3f} m | <0.3 m "
                f"{100.0 * self.frac_below_030:.2f}%")

    def per_epoch_array(self):
        return np.column_stack([self.t, self.longitudinal, self.lateral,
                                self.horizontal])


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x)))) if x.size else 0.0


def evaluate_tracks(est_t, est_xy, truth_t, truth_xy, truth_heading,
                    window=None):
    """Compare planar tracks aligned by timestamp.

    ``window`` optionally restricts evaluation to a (t0, t1) interval.
    Epochs without a truth sample within the alignment tolerance are skipped
    with a warning.
    """
    est_t = np.asarray(est_t, dtype=float)
    if est_t.size == 0:
        raise NavfuseError("empty estimate track")
    order = np.argsort(truth_t)
    truth_t = np.asarray(truth_t, dtype=float)[order]
    truth_xy = np.asarray(truth_xy, dtype=float)[order]
    truth_heading = np.asarray(truth_heading, dtype=float)[order]

    idx = np.searchsorted(truth_t, est_t)
    idx = np.clip(idx, 0, truth_t.size - 1)
    idx_lo = np.clip(idx - 1, 0, truth_t.size - 1)
    pick = np.where(np.abs(truth_t[idx_lo] - est_t)
                    < np.abs(truth_t[idx] - est_t), idx_lo, idx)
    dt = np.abs(truth_t[pick] - est_t)
    ok = dt <= ALIGN_TOLERANCE
    if window is not None:
        ok &= (est_t >= window[0]) & (est_t <= window[1])
    skipped = int(np.count_nonzero((dt > ALIGN_TOLERANCE)
                                   & ((est_t >= window[0]) & (est_t <= window[1])
                                      if window is not None else True)))
    if skipped:
        logger.warning("skipped %d epochs without aligned truth", skipped)
    if not ok.any():
        raise NavfuseError("no aligned epochs to evaluate")

    err = np.asarray(est_xy, dtype=float)[ok] - truth_xy[pick[ok]]
    h = truth_heading[pick[ok]]
    fwd = np.stack([np.sin(h), np.cos(h)], axis=1)
    right = np.stack([np.cos(h), -np.sin(h)], axis=1)
    e_long = np.sum(err * fwd, axis=1)
    e_lat = np.sum(err * right, axis=1)
    e_horiz = np.hypot(e_long, e_lat)
    return EvaluationReport(
        t=est_t[ok],
        longitudinal=e_long,
        lateral=e_lat,
        horizontal=e_horiz,
        horiz_rms=_rms(e_horiz),
        horiz_max=float(e_horiz.max()),
        long_rms=_rms(e_long),
        lat_rms=_rms(e_lat),
        frac_below_030=float(np.mean(e_horiz < 0.3)),
        skipped_epochs=skipped,
    )


def evaluate_run(run, truth, frame, window=None):
    """Evaluate a LocalizationRun against a TruthTrajectory."""
    arr = run.as_array()
    if frame.model.is_flat:
        est_xy = arr[:, 1:3]
    else:
        xs, ys = frame.projection.forward(arr[:, 1], arr[:, 2])
        est_xy = np.stack([xs, ys], axis=1)
    return evaluate_tracks(arr[:, 0], est_xy, truth.t, truth.xy,
                           truth.heading, window=window)
