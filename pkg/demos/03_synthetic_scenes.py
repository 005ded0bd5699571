"""Generate labeled top-down road scenes and save them as viewable images.

Each sample carries a grayscale image, an exact binary lane-edge map, and
the quadratic coefficients of every lane. The "hard" generator adds strong
curvature, fully dashed paint, more distractors, and heavier noise.

Run: python3 demos/03_synthetic_scenes.py  (writes PGM/PPM files to ./demo_out)
"""

import pathlib

import numpy as np

from lanedet.evaluate import render_overlay
from lanedet.images import write_pgm16
from lanedet.scenes import easy_spec, generate_scene, hard_spec

out = pathlib.Path("demo_out")
out.mkdir(exist_ok=True)

for name, spec in (("easy", easy_spec()), ("hard", hard_spec())):
    sample = generate_scene(spec, np.random.default_rng(42))
    write_pgm16(sample.image[0], out / f"scene_{name}.pgm")
    write_pgm16(sample.edge_map[0], out / f"edges_{name}.pgm")
    render_overlay(sample.image, sample.lanes, out / f"labels_{name}.ppm")
    print(f"{name}: {len(sample.lanes)} lanes, "
          f"{int(sample.edge_map.sum())} edge pixels "
          f"({100 * sample.edge_map.mean():.2f}% of the image)")
    for i, lane in enumerate(sample.lanes):
        print(f"  lane {i}: x(y) = {lane.p2:+.5f} y^2 {lane.p1:+.3f} y {lane.p0:+.1f}")

print(f"\nwrote images to {out}/ — scene_*.pgm (input), edges_*.pgm (target),")
print("labels_*.ppm (ground-truth lanes drawn over the scene)")
