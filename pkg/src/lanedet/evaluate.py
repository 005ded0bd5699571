"""TPR/FPR lane-detection evaluator, throughput benchmark, and overlay renderer.

Matching rule: predicted and ground-truth lanes pair up greedily in ascending
order of mean horizontal distance, sampled at 9 fixed heights; a pair counts
as a detection iff that distance is at most tau_match, and each lane on
either side is used at most once (a duplicate detection of the same lane is
a false positive).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import QuadraticLane
from .localizer import LocalizerConfig, predict_lanes
from .proposal import ProposalNetConfig, extract_points, proposal_forward
from .tensor import Tensor

__all__ = [
    "EvalReport",
    "lane_distance",
    "match_lanes",
    "evaluate",
    "Detector",
    "fps_benchmark",
    "render_overlay",
    "PALETTE",
]

N_SAMPLES_Y = 9

PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
)


@dataclass
class EvalReport:
    split: str
    targets: int
    detected: int
    false_positives: int
    tau_match: float
    diagnostics: list = field(default_factory=list)  # per image: (targets, detected, fp)

    @property
    def tpr(self) -> float:
        return self.detected / self.targets if self.targets else 0.0

    @property
    def fpr(self) -> float:
        return self.false_positives / self.targets if self.targets else 0.0

    def as_tsv(self) -> str:
        return (
            f"{self.split}\t{self.targets}\t{self.detected}\t"
            f"{self.tpr:.4f}\t{self.fpr:.4f}\t{self.tau_match:g}"
        )


def lane_distance(a: QuadraticLane, b: QuadraticLane, h: float) -> float:
    ys = np.linspace(0.0, h, N_SAMPLES_Y)
    return float(np.mean(np.abs(a.x_at(ys) - b.x_at(ys))))


def match_lanes(pred, gt, h: float, tau_match: float):
    """Greedy distance-ascending one-to-one matching; returns (detected, fp)."""
    pairs = sorted(
        ((lane_distance(p, g, h), i, j) for i, p in enumerate(pred) for j, g in enumerate(gt)),
        key=lambda t: (t[0], t[1], t[2]),
    )
    used_p, used_g = set(), set()
    detected = 0
    for d, i, j in pairs:
        if d > tau_match:
            break
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        detected += 1
    return detected, len(pred) - detected


def evaluate(detector, samples, tau_match: float = 8.0, split: str = "test") -> EvalReport:
    """Run ``detector(sample) -> list[QuadraticLane]`` over a labeled dataset."""
    if not samples:
        raise ValueError("cannot evaluate on an empty dataset")
    report = EvalReport(split=split, targets=0, detected=0, false_positives=0, tau_match=tau_match)
    for s in samples:
        h = s.image.shape[-2]
        pred = detector(s)
        det, fp = match_lanes(pred, s.lanes, h, tau_match)
        report.targets += len(s.lanes)
        report.detected += det
        report.false_positives += fp
        report.diagnostics.append((len(s.lanes), det, fp))
    return report


class Detector:
    """Full two-stage pipeline: proposal map -> points -> lane prediction."""

    def __init__(
        self,
        prop_params,
        prop_cfg: ProposalNetConfig,
        loc_params,
        loc_cfg: LocalizerConfig,
        threshold: float = 0.5,
        max_points: int = 512,
        seed: int = 0,
    ):
        self.prop_params = prop_params
        self.prop_cfg = prop_cfg
        self.loc_params = loc_params
        self.loc_cfg = loc_cfg
        self.threshold = threshold
        self.max_points = max_points
        self.seed = seed

    def propose(self, image: np.ndarray) -> np.ndarray:
        with T.no_grad():
            probs = proposal_forward(Tensor(image[None]), self.prop_cfg, self.prop_params)
        return probs.data[0]

    def predict(self, image: np.ndarray):
        """image: (1, h, w) in [0,1]. Returns a LanePrediction."""
        points = extract_points(
            self.propose(image), self.threshold, self.max_points, self.seed
        )
        return predict_lanes(points, self.loc_cfg, self.loc_params)

    def __call__(self, sample):
        pred = self.predict(sample.image)
        return pred.lanes(sample.image.shape[-2])


def _percentile(values, q):
    return float(np.percentile(np.asarray(values), q))


def fps_benchmark(detector: Detector, sample, iterations: int = 20, warmup: int = 3):
    """Median/p95 latency and FPS per stage and end-to-end, single-threaded."""
    if warmup < 3:
        raise ValueError("need at least 3 warm-up iterations")
    image = sample.image
    stage1, stage2, total = [], [], []
    points = None
    for it in range(warmup + iterations):
        t0 = time.perf_counter()
        probs = detector.propose(image)
        t1 = time.perf_counter()
        points = extract_points(probs, detector.threshold, detector.max_points, detector.seed)
        predict_lanes(points, detector.loc_cfg, detector.loc_params)
        t2 = time.perf_counter()
        if it >= warmup:
            stage1.append(t1 - t0)
            stage2.append(t2 - t1)
            total.append(t2 - t0)

    def stats(lat):
        med = _percentile(lat, 50)
        return {
            "median_s": med,
            "p95_s": _percentile(lat, 95),
            "fps": 1.0 / med if med > 0 else float("inf"),
        }

    result = {
        "stage1": stats(stage1),
        "stage2": stats(stage2),
        "end_to_end": stats(total),
    }
    result["stage2_over_stage1_speed_ratio"] = (
        result["stage2"]["fps"] / result["stage1"]["fps"]
    )
    return result


def render_overlay(image: np.ndarray, lanes, path=None) -> np.ndarray:
    """Draw each lane as a 3-px colored polyline over the grayscale image.

    ``lanes`` is a list of QuadraticLane (or a LanePrediction, whose lanes
    are recovered at the image height). Writes binary PPM when a path is
    given; returns the RGB array either way.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[0]
    h, w = img.shape
    rgb = np.repeat(np.clip(img, 0, 1)[:, :, None] * 255.0, 3, axis=2).astype(np.uint8)
    if hasattr(lanes, "lanes"):
        lanes = lanes.lanes(h)
    ys = np.arange(h)
    for k, lane in enumerate(lanes):
        if not np.all(np.isfinite(lane.as_array())):
            raise ValueError(f"lane {k} has non-finite coefficients")
        color = PALETTE[k % len(PALETTE)]
        xs = np.round(lane.x_at(ys)).astype(int)
        for dx in (-1, 0, 1):
            xi = xs + dx
            ok = (xi >= 0) & (xi < w)
            rgb[ys[ok], xi[ok]] = color
    if path is not None:
        from .images import write_ppm

        write_ppm(rgb, path)
    return rgb
