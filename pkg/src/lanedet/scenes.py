"""Synthetic top-down road scenes with exact lane-edge ground truth.

Scenes are generated directly in IPM space: each lane is a bright band of
constant width around a quadratic center line x(y). The edge map marks the
two band boundaries with 1-px columns per row. Distractors (arrow-like
triangles, text-like blobs, vehicle-like boxes) appear in the image only,
never in the edge map, and dashed lanes keep their full continuous quadratic
as the label even where the paint is missing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import QuadraticLane

__all__ = [
    "SceneSpec",
    "Sample",
    "generate_scene",
    "generate_dataset",
    "write_dataset",
    "read_dataset",
    "easy_spec",
    "hard_spec",
    "GenerationError",
    "DatasetFormatError",
]


class GenerationError(RuntimeError):
    """Lane layout constraints could not be satisfied."""


class DatasetFormatError(ValueError):
    """Corrupt dataset file; message carries the failing byte offset."""


@dataclass
class SceneSpec:
    size: tuple = (128, 256)  # (h, w)
    lane_count_range: tuple = (1, 4)
    p2_range: tuple = (-0.0015, 0.0015)
    slope_range: tuple = (-0.25, 0.25)  # (x_top - x_bottom) / h
    lane_width_range: tuple = (4, 8)
    min_gap: float = 36.0  # between center lines at y = h
    dash_probability: float = 0.3
    dash_period: int = 16
    arrow_count: int = 1
    blob_count: int = 2
    box_count: int = 1
    noise_sigma: float = 0.03
    background: float = 0.15
    lane_brightness_range: tuple = (0.7, 1.0)


def easy_spec(**overrides) -> SceneSpec:
    return SceneSpec(**overrides)


def hard_spec(**overrides) -> SceneSpec:
    base = dict(
        p2_range=(-0.004, 0.004),
        dash_probability=1.0,
        arrow_count=3,
        blob_count=4,
        box_count=2,
        noise_sigma=0.07,
    )
    base.update(overrides)
    return SceneSpec(**base)


@dataclass
class Sample:
    image: np.ndarray  # (1, h, w) float in [0, 1]
    edge_map: np.ndarray  # (1, h, w) binary
    lanes: list = field(default_factory=list)  # list[QuadraticLane]; may be empty for weak samples
    weak_count: int = 0
    has_full_labels: bool = True

    def as_weak(self) -> "Sample":
        return Sample(
            image=self.image,
            edge_map=self.edge_map,
            lanes=[],
            weak_count=self.weak_count,
            has_full_labels=False,
        )


def _sample_lanes(spec: SceneSpec, rng: np.random.Generator):
    h, w = spec.size
    count = int(rng.integers(spec.lane_count_range[0], spec.lane_count_range[1] + 1))
    margin = max(spec.lane_width_range) + 2
    for _ in range(100):
        bottoms = np.sort(rng.uniform(margin, w - margin, size=count))
        if count > 1 and np.min(np.diff(bottoms)) < spec.min_gap:
            continue
        lanes = []
        for xb in bottoms:
            p2 = rng.uniform(*spec.p2_range)
            slope = rng.uniform(*spec.slope_range)
            xt = xb + slope * h
            # quadratic through (0, xt) and (h, xb) with curvature p2
            p0 = xt
            p1 = (xb - xt - p2 * h * h) / h
            lanes.append(QuadraticLane(p2, p1, p0))
        ys = np.arange(h)
        ok = all(
            np.all(lane.x_at(ys) > -margin) and np.all(lane.x_at(ys) < w + margin)
            for lane in lanes
        )
        if ok:
            return lanes
    raise GenerationError("could not place lanes satisfying the gap constraint")


def _draw_lane(image, edge_map, lane, spec, rng):
    h, w = spec.size
    width = float(rng.uniform(*spec.lane_width_range))
    brightness = float(rng.uniform(*spec.lane_brightness_range))
    dashed = rng.uniform() < spec.dash_probability
    phase = int(rng.integers(0, spec.dash_period)) if dashed else 0
    for y in range(h):
        if dashed and ((y + phase) // spec.dash_period) % 2 == 1:
            continue
        c = lane.x_at(y)
        left = int(round(c - width / 2.0))
        right = int(round(c + width / 2.0))
        lo, hi = max(left, 0), min(right + 1, w)
        if lo < hi:
            image[y, lo:hi] = brightness
        if 0 <= left < w:
            edge_map[y, left] = 1.0
        if 0 <= right < w:
            edge_map[y, right] = 1.0


def _draw_triangle(image, rng, h, w):
    cy, cx = rng.integers(10, h - 10), rng.integers(15, w - 15)
    size = int(rng.integers(4, 9))
    val = rng.uniform(0.6, 0.95)
    for dy in range(size):
        half = (size - dy) // 2 + 1
        y = cy + dy
        if 0 <= y < h:
            image[y, max(cx - half, 0) : min(cx + half + 1, w)] = val


def _draw_blob(image, rng, h, w):
    cy, cx = rng.integers(5, h - 8), rng.integers(8, w - 12)
    bh, bw = int(rng.integers(2, 5)), int(rng.integers(3, 9))
    image[cy : cy + bh, cx : cx + bw] = rng.uniform(0.5, 0.9)


def _draw_box(image, rng, h, w):
    cy, cx = rng.integers(5, h - 16), rng.integers(10, w - 24)
    bh, bw = int(rng.integers(8, 14)), int(rng.integers(12, 20))
    body = rng.uniform(0.25, 0.45)
    edge = rng.uniform(0.75, 1.0)
    image[cy : cy + bh, cx : cx + bw] = body
    image[cy, cx : cx + bw] = edge
    image[cy + bh - 1, cx : cx + bw] = edge
    image[cy : cy + bh, cx] = edge
    image[cy : cy + bh, cx + bw - 1] = edge


def generate_scene(spec: SceneSpec, rng: np.random.Generator) -> Sample:
    """Render one labeled scene; a pure function of (spec, rng state)."""
    h, w = spec.size
    image = np.full((h, w), spec.background)
    image += rng.uniform(-0.02, 0.02, size=(h, w))  # mild pavement texture
    edge_map = np.zeros((h, w))

    lanes = _sample_lanes(spec, rng)
    for _ in range(spec.arrow_count):
        _draw_triangle(image, rng, h, w)
    for _ in range(spec.blob_count):
        _draw_blob(image, rng, h, w)
    for _ in range(spec.box_count):
        _draw_box(image, rng, h, w)
    for lane in lanes:
        _draw_lane(image, edge_map, lane, spec, rng)

    if spec.noise_sigma > 0:
        image += rng.normal(0.0, spec.noise_sigma, size=(h, w))
    # quantize to f32 so the dataset file round-trips bit-exactly
    image = np.clip(image, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return Sample(
        image=image[None],
        edge_map=edge_map[None],
        lanes=lanes,
        weak_count=len(lanes),
    )


def generate_dataset(spec: SceneSpec, count: int, seed: int) -> list:
    """Independent samples with per-sample derived seeds (seed + index)."""
    return [
        generate_scene(spec, np.random.default_rng(seed + i)) for i in range(count)
    ]


# ---------------------------------------------------------------------------
# dataset file (magic "LNDS")

_MAGIC = b"LNDS"
_VERSION = 1


def write_dataset(samples, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(samples)))
        for s in samples:
            h, w = s.image.shape[-2:]
            fh.write(struct.pack("<HH", h, w))
            fh.write(s.image.reshape(h, w).astype("<f4").tobytes())
            bits = np.packbits(
                s.edge_map.reshape(h * w).astype(np.uint8), bitorder="big"
            )
            fh.write(bits.tobytes())
            fh.write(struct.pack("<BB", s.weak_count, 1 if s.has_full_labels else 0))
            if s.has_full_labels:
                for lane in s.lanes:
                    fh.write(struct.pack("<3d", lane.p2, lane.p1, lane.p0))


def read_dataset(path) -> list:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise DatasetFormatError(f"bad magic at byte 0: {blob[:4]!r}")
    if len(blob) < 12:
        raise DatasetFormatError(f"truncated header at byte {len(blob)}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported version {version} at byte 4")
    off = 12
    samples = []
    for _ in range(count):
        try:
            h, w = struct.unpack_from("<HH", blob, off)
            off += 4
            if off + 4 * h * w > len(blob):
                raise DatasetFormatError(f"truncated image at byte {off}")
            img = np.frombuffer(blob, dtype="<f4", count=h * w, offset=off)
            off += 4 * h * w
            nbytes = (h * w + 7) // 8
            if off + nbytes > len(blob):
                raise DatasetFormatError(f"truncated edge map at byte {off}")
            bits = np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=off)
            off += nbytes
            lane_count, flag = struct.unpack_from("<BB", blob, off)
            off += 2
            lanes = []
            if flag:
                for _ in range(lane_count):
                    p2, p1, p0 = struct.unpack_from("<3d", blob, off)
                    off += 24
                    lanes.append(QuadraticLane(p2, p1, p0))
            edge = np.unpackbits(bits, bitorder="big")[: h * w]
            samples.append(
                Sample(
                    image=img.astype(np.float64).reshape(1, h, w),
                    edge_map=edge.astype(np.float64).reshape(1, h, w),
                    lanes=lanes,
                    weak_count=lane_count,
                    has_full_labels=bool(flag),
                )
            )
        except struct.error as exc:
            raise DatasetFormatError(f"truncated record at byte {off}") from exc
    return samples
