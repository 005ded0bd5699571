"""Stage two: order-invariant point-set encoder + recurrent lane decoder.

The encoder applies shared per-point layers (width-1 1-D convolutions) with
max-pool aggregation in several stages, so its output does not depend on the
order of the input points. An LSTM decoder then emits, left to right, one
(key values, confidence) tuple per lane until the confidence drops below a
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import KeyValues, QuadraticLane, inverse_key_matrix
from .tensor import Tensor

__all__ = [
    "PointSet",
    "LocalizerConfig",
    "LanePrediction",
    "init_localizer_params",
    "localizer_param_shapes",
    "encode_points",
    "decode_lanes",
    "predict_lanes",
    "key_value_term",
    "key_value_loss",
    "min_distance_loss",
    "combined_loss",
    "weak_loss",
    "confidence_loss",
]

_EPS = 1e-7


@dataclass(frozen=True)
class PointSet:
    """Unordered set of (x, y) lane-edge coordinates in IPM pixels."""

    points: np.ndarray  # (n, 2), columns x, y

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass
class LocalizerConfig:
    stage_widths: tuple = ((32, 64), (64, 128))  # per-point widths, two layers/stage
    hidden_width: int = 64
    max_lanes: int = 4
    score_threshold: float = 0.5
    alpha: float = 1.0
    image_width: int = 256
    image_height: int = 128

    def __post_init__(self):
        if len(self.stage_widths) < 2:
            raise ValueError("encoder needs at least 2 stages")
        if self.max_lanes < 1:
            raise ValueError("max_lanes must be >= 1")
        if not 0.0 < self.score_threshold < 1.0:
            raise ValueError("score_threshold must be in (0, 1)")


@dataclass
class LanePrediction:
    """Per-lane (key values, confidence), ordered left to right."""

    keys: list = field(default_factory=list)  # list[KeyValues]
    scores: list = field(default_factory=list)  # list[float]

    def __len__(self):
        return len(self.keys)

    def lanes(self, h: float) -> list:
        inv = inverse_key_matrix(h)
        return [QuadraticLane(*(k.as_array() @ inv)) for k in self.keys]


def localizer_param_shapes(cfg: LocalizerConfig) -> dict:
    shapes = {}
    in_ch = 2
    for s, (w1, w2) in enumerate(cfg.stage_widths):
        shapes[f"stage{s}.l1"] = (w1, in_ch, 1)
        shapes[f"stage{s}.l2"] = (w2, w1, 1)
        in_ch = 2 * w2  # per-point feature concatenated with the pooled global
    rep = cfg.stage_widths[-1][1]
    dh = cfg.hidden_width
    shapes["lstm.wx"] = (rep, 4 * dh)
    shapes["lstm.wh"] = (dh, 4 * dh)
    shapes["lstm.b"] = (4 * dh,)
    shapes["head.w"] = (dh, 4)
    shapes["head.b"] = (4,)
    return shapes


def init_localizer_params(cfg: LocalizerConfig, rng: np.random.Generator) -> dict:
    params = {}
    for name, shape in localizer_param_shapes(cfg).items():
        if name == "lstm.b":
            b = np.zeros(shape)
            b[cfg.hidden_width : 2 * cfg.hidden_width] = 1.0  # forget-gate bias
            params[name] = Tensor(b, requires_grad=True)
        elif name.endswith(".b"):
            params[name] = Tensor(np.zeros(shape), requires_grad=True)
        else:
            fan_in, fan_out = shape[1] if len(shape) > 1 else shape[0], shape[0]
            if name in ("lstm.wx", "lstm.wh", "head.w"):
                fan_in, fan_out = shape[0], shape[1]
            params[name] = T.uniform_init(rng, shape, fan_in, fan_out)
    return params


def _encode_batch(coords: Tensor, cfg: LocalizerConfig, params: dict) -> Tensor:
    """coords: (N, 2, P) already normalized to [0,1]. Returns (N, rep)."""
    feat = coords
    n, _, p = coords.shape
    for s in range(len(cfg.stage_widths)):
        feat = T.relu(T.conv1d(feat, params[f"stage{s}.l1"]))
        feat = T.relu(T.conv1d(feat, params[f"stage{s}.l2"]))
        if s < len(cfg.stage_widths) - 1:
            pooled = T.max_over_points(feat)  # (N, C)
            feat = T.concat([feat, T.tile_points(pooled, p)], axis=1)
    return T.avg_over_points(feat)


def encode_points(points: PointSet, cfg: LocalizerConfig, params: dict) -> Tensor:
    """Encode one point set to its global representation vector (1, rep)."""
    if points.count == 0:
        raise T.EmptyInputError("cannot encode an empty point set")
    xy = points.points.T / np.array([[cfg.image_width], [cfg.image_height]])
    coords = Tensor(xy[None, :, :])
    return _encode_batch(coords, cfg, params)


def decode_lanes(rep: Tensor, cfg: LocalizerConfig, params: dict, mode: str = "infer"):
    """Run the LSTM decoder over a batch of representations.

    Returns (keys, scores): keys is a list of per-step (N, 3) tensors of
    normalized key values in [0,1], scores a list of per-step (N,) score
    tensors. ``train`` mode always runs max_lanes steps; ``infer`` mode
    (batch of 1) stops once the score falls below the threshold.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown decode mode {mode!r}")
    n = rep.shape[0]
    dh = cfg.hidden_width
    h = Tensor(np.zeros((n, dh)))
    c = Tensor(np.zeros((n, dh)))
    keys_steps, score_steps = [], []
    for _ in range(cfg.max_lanes):
        h, c = T.lstm_cell(rep, h, c, params["lstm.wx"], params["lstm.wh"], params["lstm.b"])
        out = T.sigmoid(T.add(T.matmul(h, params["head.w"]), params["head.b"]))
        k = T.narrow(out, 1, 0, 3)
        s = T.reshape(T.narrow(out, 1, 3, 1), (n,))
        if mode == "infer" and float(s.data[0]) < cfg.score_threshold:
            break
        keys_steps.append(k)
        score_steps.append(s)
    return keys_steps, score_steps


def predict_lanes(points: PointSet, cfg: LocalizerConfig, params: dict) -> LanePrediction:
    """Full stage-two inference on one point set."""
    if points.count == 0:
        return LanePrediction()
    with T.no_grad():
        rep = encode_points(points, cfg, params)
        keys_steps, score_steps = decode_lanes(rep, cfg, params, mode="infer")
    pred = LanePrediction()
    for k, s in zip(keys_steps, score_steps):
        pred.keys.append(KeyValues(*(k.data[0] * cfg.image_width)))
        pred.scores.append(float(s.data[0]))
    return pred


def confidence_loss(score_steps, true_counts: np.ndarray) -> Tensor:
    """Mean BCE pushing the first ``count`` step scores to 1, the rest to 0."""
    steps = len(score_steps)
    n = score_steps[0].shape[0]
    losses = []
    for step, s in enumerate(score_steps):
        target = (step < true_counts).astype(np.float64)  # (N,)
        p = T.clamp(s, _EPS, 1.0 - _EPS)
        pos = T.mul(Tensor(target), T.log(p))
        neg_ = T.mul(Tensor(1.0 - target), T.log(T.add_scalar(T.neg(p), 1.0)))
        losses.append(T.neg(T.tsum(T.add(pos, neg_))))
    total = losses[0]
    for l in losses[1:]:
        total = T.add(total, l)
    return T.scale(total, 1.0 / (steps * n))


def key_value_term(keys_steps, gt_keys_batch, cfg: LocalizerConfig):
    """Normalized key-value MSE over the first |gt| decoder steps, averaged
    over lanes and over the batch. Returns None when no sample has lanes.

    gt_keys_batch: list (length N) of (L_i, 3) arrays of raw key values,
    each sorted left to right by k3.
    """
    n = keys_steps[0].shape[0]
    counts = np.array([len(g) for g in gt_keys_batch])
    if counts.max(initial=0) > cfg.max_lanes:
        raise T.ContractError(
            f"{counts.max()} ground-truth lanes exceed max_lanes={cfg.max_lanes}"
        )
    key_terms = []
    for i, gt in enumerate(gt_keys_batch):
        li = len(gt)
        if li == 0:
            continue
        target = np.asarray(gt, dtype=np.float64) / cfg.image_width  # (li, 3)
        lane_terms = []
        for step in range(li):
            diff = T.sub(
                T.reshape(T.take_rows(keys_steps[step], [i]), (3,)),
                Tensor(target[step]),
            )
            lane_terms.append(T.tmean(T.square(diff)))
        per_sample = lane_terms[0]
        for t in lane_terms[1:]:
            per_sample = T.add(per_sample, t)
        key_terms.append(T.scale(per_sample, 1.0 / li))
    if not key_terms:
        return None
    total = key_terms[0]
    for t in key_terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / n)


def key_value_loss(keys_steps, score_steps, gt_keys_batch, cfg: LocalizerConfig) -> Tensor:
    """Supervised loss: key_value_term plus confidence BCE whose targets are
    1 for the first |gt| steps and 0 afterwards."""
    counts = np.array([len(g) for g in gt_keys_batch])
    conf = confidence_loss(score_steps, counts)
    keys = key_value_term(keys_steps, gt_keys_batch, cfg)
    return conf if keys is None else T.add(keys, conf)


def _active_steps(score_steps, sample_idx: int, threshold: float):
    active = [
        step
        for step, s in enumerate(score_steps)
        if float(s.data[sample_idx]) >= threshold
    ]
    return active if active else list(range(len(score_steps)))


def min_distance_loss(
    keys_steps, score_steps, point_sets, cfg: LocalizerConfig
) -> Tensor:
    """Weak loss: mean horizontal distance of each point to its nearest
    predicted lane, normalized by image width.

    Lanes with score below the threshold are ignored unless none clears it.
    Gradient reaches only each point's nearest lane (lowest index on ties).
    """
    inv = Tensor(inverse_key_matrix(cfg.image_height) * cfg.image_width)
    n = keys_steps[0].shape[0]
    terms = []
    for i in range(n):
        pts = point_sets[i].points if isinstance(point_sets[i], PointSet) else np.asarray(point_sets[i])
        if len(pts) == 0:
            raise T.ContractError("min_distance_loss needs a non-empty point set")
        steps = _active_steps(score_steps, i, cfg.score_threshold)
        rows = T.concat([T.take_rows(keys_steps[s], [i]) for s in steps], axis=0)
        lanes = T.matmul(rows, inv)  # (L, 3) raw quadratic coefficients
        design = np.stack([pts[:, 1] ** 2, pts[:, 1], np.ones(len(pts))])  # (3, n_pts)
        xs_on_lanes = T.matmul(lanes, Tensor(design))  # (L, n_pts)
        diffs = T.tabs(T.sub(Tensor(pts[:, 0][None, :]), xs_on_lanes))
        nearest = T.min_last(T.transpose2(diffs))  # (n_pts,)
        terms.append(T.scale(T.tmean(nearest), 1.0 / cfg.image_width))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / n)


def combined_loss(
    keys_steps, score_steps, gt_keys_batch, point_sets, cfg: LocalizerConfig
) -> Tensor:
    """Supervised key-value loss plus alpha times the min-distance loss."""
    sup = key_value_loss(keys_steps, score_steps, gt_keys_batch, cfg)
    if cfg.alpha == 0.0:
        return sup
    weak = min_distance_loss(keys_steps, score_steps, point_sets, cfg)
    return T.add(sup, T.scale(weak, cfg.alpha))


def weak_loss(keys_steps, score_steps, point_sets, weak_counts, cfg: LocalizerConfig) -> Tensor:
    """Fine-tuning loss: min-distance term plus confidence BCE against the
    annotated lane counts."""
    conf = confidence_loss(score_steps, np.asarray(weak_counts))
    nonempty = [i for i, ps in enumerate(point_sets) if _count(ps) > 0]
    if not nonempty:
        return conf
    dist = min_distance_loss(
        [T.take_rows(k, nonempty) for k in keys_steps],
        [T.take_rows(s, nonempty) for s in score_steps],
        [point_sets[i] for i in nonempty],
        cfg,
    )
    return T.add(dist, conf)


def _count(ps) -> int:
    return ps.count if isinstance(ps, PointSet) else len(ps)
