"""Counter-based random streams keyed by (seed, stream, extras).

Every consumer of randomness derives its own generator from the scenario
seed plus a named stream (and optional extras such as a tile index or a
scan number), so outputs are bitwise reproducible regardless of generation
order or thread count.
"""

import numpy as np

_STREAMS = {
    "world_texture": 1,
    "world_texture_change": 2,
    "world_change_mask": 3,
    "world_roughness": 4,
    "imu_noise": 5,
    "imu_bias": 6,
    "lidar_scan": 7,
    "gnss_epoch": 8,
    "gnss_constellation": 9,
    "gnss_clock": 10,
    "gnss_ambiguity": 11,
    "delay_lidar": 12,
    "delay_gnss": 13,
    "map_survey": 14,
    "init_error": 15,
}


def stream_rng(seed, stream, *extras):
    """Generator for one named stream; extras distinguish sub-streams."""
    sid = _STREAMS[stream]
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, sid]
    entropy += [int(e) & 0xFFFFFFFFFFFFFFFF for e in extras]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
