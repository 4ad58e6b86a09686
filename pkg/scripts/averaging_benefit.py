"""
Range error with and without neighbour averaging on synthetic terrain.

    python scripts/averaging_benefit.py --seeds 20
"""

import argparse

import numpy as np

from radcloud.pipeline import PipelineConfig, run_pipeline
from radcloud.synth import SceneSpec, generate_scene

from _scenes import avtis_geometry, half_metre_chirp

SCENES = {
    "plane facing radar": ("plane", {"distance_m": 1400.0}),
    "ramp, 30 deg": ("ramp", {"boresight_range_m": 1400.0, "slope_deg": 30.0}),
    "ramp, 60 deg": ("ramp", {"boresight_range_m": 1400.0, "slope_deg": 60.0}),
}


def errors(cube, truth, gating):
    res = run_pipeline(cube, PipelineConfig(gating=gating))
    s = res.spherical
    return s.range_m - truth.ranges[s.phi_index, s.theta_index, 0], len(s)


def main():
    ap = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--snr-db", type=float, default=20.0)
    args = ap.parse_args()
    g, ch = avtis_geometry(20, 16), half_metre_chirp()
    print(f"{'scene':<20} {'gating':<10} {'mean err (m)':>12} {'std (m)':>9} {'points':>7}  averaging wins")
    for name, (kind, params) in SCENES.items():
        stats = {"force_on": [], "force_off": []}
        for seed in range(args.seeds):
            cube, truth = generate_scene(SceneSpec(g, ch, kind, params, seed=seed, terrain_snr_db=args.snr_db))
            for gating in stats:
                e, n = errors(cube, truth, gating)
                stats[gating].append((e.mean(), e.std(), n))
        on, off = np.array(stats["force_on"]), np.array(stats["force_off"])
        wins = int(np.sum(on[:, 1] < off[:, 1]))
        for gating, a in (("on", on), ("off", off)):
            print(f"{name:<20} {gating:<10} {a[:, 0].mean():>12.3f} {a[:, 1].mean():>9.3f} {a[:, 2].mean():>7.0f}"
                  + (f"  {wins}/{args.seeds}" if gating == "on" else ""))


if __name__ == "__main__":
    main()
