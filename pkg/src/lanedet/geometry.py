"""Lane parameterizations, key-value transform, homography, and IPM warp.

A lane is the quadratic x(y) = p2*y^2 + p1*y + p0 in top-down (IPM) pixel
coordinates, y increasing downward. Its key values are the x positions where
it crosses the top, middle, and bottom horizontal lines of the image; the two
parameterizations are related by an invertible 3x3 linear map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadraticLane",
    "KeyValues",
    "Homography",
    "key_matrix",
    "inverse_key_matrix",
    "params_to_keys",
    "keys_to_params",
    "horizontal_distance",
    "homography_from_correspondences",
    "warp_point",
    "ipm_warp",
    "HorizonError",
    "SingularSystemError",
]


@dataclass(frozen=True)
class QuadraticLane:
    p2: float
    p1: float
    p0: float

    def x_at(self, y):
        return self.p2 * y * y + self.p1 * y + self.p0

    def as_array(self):
        return np.array([self.p2, self.p1, self.p0])


@dataclass(frozen=True)
class KeyValues:
    k1: float  # x at y = 0
    k2: float  # x at y = h/2
    k3: float  # x at y = h

    def as_array(self):
        return np.array([self.k1, self.k2, self.k3])


class HorizonError(ValueError):
    """Projective map sent a point to (or past) the plane at infinity."""


class SingularSystemError(ValueError):
    """Degenerate correspondences: homography system has no unique solution."""


def key_matrix(h: float) -> np.ndarray:
    """Matrix M with [k1,k2,k3] = [p2,p1,p0] @ M.

    Columns evaluate the quadratic at y = 0, h/2, h; the bottom row of ones
    carries the constant term, which makes M invertible for any h > 0.
    """
    if h <= 0:
        raise ValueError("image height must be positive")
    return np.array(
        [
            [0.0, (h / 2.0) ** 2, h * h],
            [0.0, h / 2.0, h],
            [1.0, 1.0, 1.0],
        ]
    )


def inverse_key_matrix(h: float) -> np.ndarray:
    return np.linalg.inv(key_matrix(h))


def params_to_keys(lane: QuadraticLane, h: float) -> KeyValues:
    k = lane.as_array() @ key_matrix(h)
    return KeyValues(*k)


def keys_to_params(keys: KeyValues, h: float) -> QuadraticLane:
    p = keys.as_array() @ inverse_key_matrix(h)
    return QuadraticLane(*p)


def horizontal_distance(point, lane: QuadraticLane) -> float:
    """|x - x_lane(y)| for a point (x, y) in pixels."""
    x, y = point
    return abs(x - lane.x_at(y))


@dataclass(frozen=True)
class Homography:
    """3x3 projective map from front-view pixels to IPM pixels."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if abs(np.linalg.det(m)) <= 1e-9:
            raise SingularSystemError("homography is not invertible")
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


def warp_point(point, hom: Homography):
    x, y = point
    v = hom.matrix @ np.array([x, y, 1.0])
    if abs(v[2]) < 1e-12:
        raise HorizonError(f"point {point} maps to the horizon")
    return (v[0] / v[2], v[1] / v[2])


def homography_from_correspondences(src, dst) -> Homography:
    """DLT solve of the 8-DOF system mapping 4 src points to 4 dst points."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly 4 source and 4 destination points")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        sol = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("degenerate correspondence quad") from exc
    m = np.append(sol, 1.0).reshape(3, 3)
    return Homography(m)


def ipm_warp(image: np.ndarray, hom: Homography, out_size) -> np.ndarray:
    """Inverse-map warp with bilinear sampling; out-of-source pixels are 0.

    image: (C, H, W); hom maps source pixel coords to output pixel coords;
    out_size: (H_out, W_out).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError("image must be (C, H, W)")
    c, h, w = image.shape
    h_out, w_out = out_size
    inv = np.linalg.inv(hom.matrix)

    ys, xs = np.meshgrid(np.arange(h_out), np.arange(w_out), indexing="ij")
    ones = np.ones_like(xs, dtype=np.float64)
    pts = np.stack([xs, ys, ones])  # (3, H_out, W_out)
    mapped = np.tensordot(inv, pts, axes=1)
    zdiv = mapped[2]
    if np.any(np.abs(zdiv) < 1e-12):
        raise HorizonError("output grid crosses the horizon of the inverse map")
    sx = mapped[0] / zdiv
    sy = mapped[1] / zdiv

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    out = np.zeros((c, h_out, w_out))
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xi_c = np.clip(xi, 0, w - 1)
            yi_c = np.clip(yi, 0, h - 1)
            sample = image[:, yi_c, xi_c] * np.where(valid, wgt, 0.0)
            out += sample
    return out
