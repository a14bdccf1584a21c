"""Multi-sensor vehicle localization.

LiDAR grid-map matching, RTK GNSS and strapdown inertial navigation fused
by an error-state Kalman filter, plus a deterministic simulator and an
evaluation harness.
"""

from .errors import (AmbiguityError, FilterError, GeometryError,
                     LocalizationError, MapError, NavfuseError, ScenarioError)
from .geodesy import FlatEarthModel, GeoFrame, LocalTmProjection, Wgs84Model
from .gridmap import (GridCellStats, GridConfig, LidarMap, MapAccumulator,
                      OnlineGrid, Pose, accumulate_scan, finalize_map,
                      rasterize_online)
from .lidarloc import (HistogramPosterior, LidarFix, LidarLocConfig,
                       LidarLocalizer, localize)
from .sins import ImuSample, NavState, apply_correction, invert_mechanize, mechanize
from .eskf import (FilterConfig, FusionEngine, GnssPositionMeas, ImuNoise,
                   LidarPoseMeas, TimedMeasurement, build_F_G, process_stream,
                   propagate)
from .rtk import (GnssEpoch, RtkConfig, RtkEngine, detect_cycle_slips,
                  float_solution, sd_to_dd, solve_epoch)
from .ambiguity import resolve_ambiguities

__version__ = "0.1.0"
