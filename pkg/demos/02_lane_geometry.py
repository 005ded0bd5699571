"""Lane curves, key values, and the bird's-eye-view warp.

A lane in the top-down image is a quadratic x(y) = p2*y^2 + p1*y + p0.
Rather than regress the polynomial coefficients directly (they live on
wildly different scales), the localizer predicts three "key values": the
lane's x-position at the top, middle, and bottom of the image. The two
parameterizations are linked by an invertible 3x3 matrix.

Run: python3 demos/02_lane_geometry.py
"""

import numpy as np

from lanedet.geometry import (
    Homography,
    QuadraticLane,
    homography_from_correspondences,
    ipm_warp,
    keys_to_params,
    params_to_keys,
    warp_point,
)

h = 128.0
lane = QuadraticLane(p2=-0.002, p1=0.45, p0=60.0)
keys = params_to_keys(lane, h)
print(f"lane coefficients: p2={lane.p2}, p1={lane.p1}, p0={lane.p0}")
print(f"key values at y=0, {h/2:.0f}, {h:.0f}:  "
      f"k1={keys.k1:.2f}, k2={keys.k2:.2f}, k3={keys.k3:.2f}")
print("(each key is just the lane's x at that height — directly in pixels)")

back = keys_to_params(keys, h)
print("\nround-trip back to coefficients:",
      np.round([back.p2, back.p1, back.p0], 10))

# the keys are exact curve samples
for y, k in ((0.0, keys.k1), (h / 2, keys.k2), (h, keys.k3)):
    assert abs(lane.x_at(y) - k) < 1e-9

# --- bird's-eye view -------------------------------------------------------
# A camera's front view maps to the top-down view with a homography fitted
# from four ground-plane correspondences.
src = [(40.0, 60.0), (216.0, 60.0), (-80.0, 128.0), (336.0, 128.0)]
dst = [(64.0, 0.0), (192.0, 0.0), (64.0, 128.0), (192.0, 128.0)]
H = homography_from_correspondences(src, dst)
print("\nfitted homography:")
print(np.round(H.matrix, 4))

for s, d in zip(src, dst):
    wx, wy = warp_point(s, H)
    assert abs(wx - d[0]) < 1e-6 and abs(wy - d[1]) < 1e-6
print("all four correspondences reproduce exactly")

# warp a synthetic front-view image into the top-down frame
front = np.zeros((1, 128, 256))
front[0, 60:128, 100:108] = 1.0  # a wedge of road paint
top = ipm_warp(front, H, (128, 256))
print(f"\nwarped image: shape {top.shape}, "
      f"paint occupies {int((top > 0.5).sum())} top-down pixels")
