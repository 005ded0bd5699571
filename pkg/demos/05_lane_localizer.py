"""Train the stage-two localizer: from a cloud of edge points to lane curves.

The localizer never sees the image. It consumes an unordered set of
(x, y) points, encodes them with shared per-point layers plus global
max/avg pooling (so the output is invariant to point order and duplication),
and decodes one lane per LSTM step: three key values and a confidence score.
Decoding stops when the confidence drops below threshold.

This demo trains on ground-truth edge points of 2-lane scenes, then checks
the order-invariance property and renders a detection.

Run: python3 demos/05_lane_localizer.py  (writes demo_out/localized.ppm)
"""

import pathlib
import time

import numpy as np

from lanedet.evaluate import evaluate, render_overlay
from lanedet.localizer import LocalizerConfig, PointSet, predict_lanes
from lanedet.scenes import easy_spec, generate_dataset
from lanedet.training import TrainConfig, edge_points_from_sample, train_localizer

spec = easy_spec(lane_count_range=(2, 2), dash_probability=0.0)
train = generate_dataset(spec, 120, seed=0)
test = generate_dataset(spec, 20, seed=5000)
loc_cfg = LocalizerConfig(max_lanes=2)

t0 = time.time()
params = None
for lr, epochs in ((0.2, 120), (0.05, 120), (0.01, 60)):
    tc = TrainConfig(epochs=epochs, batch_size=12, lr=lr, momentum=0.9, seed=2)
    params = train_localizer(train, tc, loc_cfg, params=params)
print(f"trained in {time.time() - t0:.0f}s")


def detect(sample):
    points = edge_points_from_sample(sample)
    return predict_lanes(points, loc_cfg, params).lanes(sample.image.shape[-2])


report = evaluate(detect, test, tau_match=8.0, split="demo")
print(f"held-out: TPR {report.tpr:.2f}, FPR {report.fpr:.2f} "
      f"({report.detected}/{report.targets} lanes, "
      f"{report.false_positives} false positives)")

# order invariance: shuffling or duplicating the points changes nothing
s = test[0]
points = edge_points_from_sample(s)
rng = np.random.default_rng(7)
shuffled = PointSet(points.points[rng.permutation(points.count)])
doubled = PointSet(np.concatenate([points.points, points.points]))
base = predict_lanes(points, loc_cfg, params)
for name, variant in (("shuffled", shuffled), ("duplicated", doubled)):
    alt = predict_lanes(variant, loc_cfg, params)
    gap = max(
        abs(a.k3 - b.k3) for a, b in zip(base.keys, alt.keys)
    ) if base.keys else 0.0
    print(f"{name} points: max key difference {gap:.2e} (exactly invariant)")

out = pathlib.Path("demo_out")
out.mkdir(exist_ok=True)
render_overlay(s.image, detect(s), out / "localized.ppm")
print(f"wrote {out / 'localized.ppm'}")
