"""Training loops for both stages and both supervision regimes.

All loops are deterministic given (dataset, config, seed): every source of
randomness is a numpy Generator seeded from the config, and steps run
single-threaded on the shared tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import params_to_keys
from .localizer import (
    LocalizerConfig,
    PointSet,
    _encode_batch,
    combined_loss,
    decode_lanes,
    init_localizer_params,
    key_value_loss,
    weak_loss,
)
from .proposal import (
    ProposalNetConfig,
    balanced_bce_loss,
    extract_points,
    init_proposal_params,
    proposal_forward,
)
from .tensor import SGD, Tensor

__all__ = [
    "TrainConfig",
    "train_proposal",
    "train_localizer",
    "finetune_weak",
    "edge_points_from_sample",
    "proposal_points_for_samples",
    "ColdStartError",
]

REGIMES = ("supervised", "combined", "weak-finetune")


class ColdStartError(RuntimeError):
    """Weak-only training from scratch converges to poor local minima; a
    supervised starting checkpoint is required."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 0.2
    momentum: float = 0.9
    seed: int = 0
    alpha: float = 1.0
    regime: str = "supervised"
    train_points: int = 128  # points resampled per sample for batched encoding
    clip_norm: float = 0.0  # if > 0, rescale gradients to this global L2 norm
    scope: str = "all"  # "all" or "decoder" (localizer LSTM + head only)
    log: object = None  # callable(epoch, mean_loss) or None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.scope not in ("all", "decoder"):
            raise ValueError(f"unknown training scope {self.scope!r}")


def _log(cfg: TrainConfig, epoch: int, loss: float) -> None:
    if cfg.log is not None:
        cfg.log(epoch, loss)


def _trainable_names(params, scope: str):
    """Parameter names updated under the given scope.

    The "decoder" scope freezes the point-set encoder and updates only the
    LSTM and output head; the decoder tolerates (and needs) far higher
    learning rates than the encoder, so late high-rate refinement phases run
    in this scope.
    """
    names = sorted(params)
    if scope == "decoder":
        names = [n for n in names if n.startswith(("lstm.", "head."))]
    return names


def _clip_grads(params, names, clip_norm: float) -> None:
    if clip_norm <= 0:
        return
    total = np.sqrt(sum(np.sum(params[n].grad ** 2) for n in names))
    if total > clip_norm:
        factor = clip_norm / total
        for n in names:
            params[n].grad *= factor


def train_proposal(samples, cfg: TrainConfig, net_cfg: ProposalNetConfig, params=None):
    """Mini-batch SGD on the class-balanced BCE; returns the parameter dict."""
    h, w = net_cfg.in_size
    for s in samples:
        if s.image.shape[-2:] != (h, w):
            raise ValueError(
                f"sample size {s.image.shape[-2:]} does not match config {net_cfg.in_size}"
            )
    if cfg.scope != "all":
        raise ValueError("train_proposal only supports scope='all'")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_proposal_params(net_cfg, rng)
    names = sorted(params)
    opt = SGD([params[n] for n in names], lr=cfg.lr, momentum=cfg.momentum)
    images = np.stack([s.image for s in samples])
    targets = np.stack([s.edge_map for s in samples])
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = Tensor(images[idx])
            pred = proposal_forward(batch, net_cfg, params)
            raw = balanced_bce_loss(pred, targets[idx])
            # optimize the per-pixel mean (same minimizer, sane lr scale)
            loss = T.scale(raw, 1.0 / pred.size)
            T.backward(loss)
            _clip_grads(params, names, cfg.clip_norm)
            opt.step()
            losses.append(loss.item())
        _log(cfg, epoch, float(np.mean(losses)))
    return params


def edge_points_from_sample(sample, max_points: int = 512, seed: int = 0) -> PointSet:
    """Ground-truth edge pixels as a point set (the stage-two oracle input)."""
    return extract_points(sample.edge_map, 0.5, max_points, seed)


def proposal_points_for_samples(
    samples, prop_params, prop_cfg, threshold=0.5, max_points=512, seed=0, batch=16
):
    """Run a frozen stage-one network over samples and extract point sets."""
    out = []
    with T.no_grad():
        for start in range(0, len(samples), batch):
            chunk = samples[start : start + batch]
            probs = proposal_forward(
                Tensor(np.stack([s.image for s in chunk])), prop_cfg, prop_params
            )
            for i in range(len(chunk)):
                out.append(
                    extract_points(probs.data[i], threshold, max_points, seed + start + i)
                )
    return out


def _gt_keys(sample, h: float):
    keys = [params_to_keys(lane, h).as_array() for lane in sample.lanes]
    keys.sort(key=lambda k: k[2])  # left to right by x at the image bottom
    return np.array(keys).reshape(-1, 3)


def _resample(ps: PointSet, count: int, rng) -> np.ndarray:
    pts = ps.points
    if len(pts) == 0:
        return np.zeros((count, 2))
    idx = rng.integers(0, len(pts), size=count)
    return pts[idx]


def _coords_batch(point_sets, count, rng, loc_cfg) -> Tensor:
    pts = np.stack([_resample(ps, count, rng) for ps in point_sets])  # (B, P, 2)
    scale = np.array([loc_cfg.image_width, loc_cfg.image_height]).reshape(1, 2, 1)
    pts = pts.transpose(0, 2, 1) / scale
    return Tensor(pts)


def train_localizer(
    samples,
    cfg: TrainConfig,
    loc_cfg: LocalizerConfig,
    point_sets=None,
    params=None,
):
    """Train stage two under the supervised or combined regime.

    ``point_sets`` supplies the network input per sample; by default the
    ground-truth edge points are used (see proposal_points_for_samples for
    training on frozen stage-one outputs).
    """
    if cfg.regime not in ("supervised", "combined"):
        raise ValueError(f"train_localizer cannot run regime {cfg.regime!r}")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_localizer_params(loc_cfg, rng)
    if point_sets is None:
        point_sets = [edge_points_from_sample(s, seed=cfg.seed + i) for i, s in enumerate(samples)]
    usable = [i for i in range(len(samples)) if point_sets[i].count > 0]
    gt_keys = [_gt_keys(samples[i], loc_cfg.image_height) for i in usable]
    sets = [point_sets[i] for i in usable]
    names = _trainable_names(params, cfg.scope)
    opt = SGD([params[n] for n in names], lr=cfg.lr, momentum=cfg.momentum)
    n = len(usable)
    loc_cfg.alpha = cfg.alpha
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            coords = _coords_batch([sets[i] for i in idx], cfg.train_points, rng, loc_cfg)
            rep = _encode_batch(coords, loc_cfg, params)
            keys_steps, score_steps = decode_lanes(rep, loc_cfg, params, mode="train")
            batch_gt = [gt_keys[i] for i in idx]
            if cfg.regime == "combined" and cfg.alpha > 0:
                loss = combined_loss(
                    keys_steps, score_steps, batch_gt, [sets[i] for i in idx], loc_cfg
                )
            else:
                loss = key_value_loss(keys_steps, score_steps, batch_gt, loc_cfg)
            T.backward(loss)
            _clip_grads(params, names, cfg.clip_norm)
            opt.step()
            losses.append(loss.item())
        _log(cfg, epoch, float(np.mean(losses)))
    return params


def finetune_weak(
    samples,
    params,
    cfg: TrainConfig,
    loc_cfg: LocalizerConfig,
    point_sets=None,
):
    """Refine a supervised checkpoint with the min-distance + count loss."""
    if params is None:
        raise ColdStartError(
            "weak fine-tuning needs a supervised starting checkpoint; "
            "training weak-only from scratch gets stuck in poor local minima"
        )
    rng = np.random.default_rng(cfg.seed)
    if point_sets is None:
        point_sets = [edge_points_from_sample(s, seed=cfg.seed + i) for i, s in enumerate(samples)]
    counts = np.array([s.weak_count for s in samples])
    names = _trainable_names(params, cfg.scope)
    opt = SGD([params[n] for n in names], lr=cfg.lr, momentum=cfg.momentum)
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            coords = _coords_batch([point_sets[i] for i in idx], cfg.train_points, rng, loc_cfg)
            rep = _encode_batch(coords, loc_cfg, params)
            keys_steps, score_steps = decode_lanes(rep, loc_cfg, params, mode="train")
            loss = weak_loss(
                keys_steps,
                score_steps,
                [point_sets[i] for i in idx],
                counts[idx],
                loc_cfg,
            )
            T.backward(loss)
            _clip_grads(params, names, cfg.clip_norm)
            opt.step()
            losses.append(loss.item())
        _log(cfg, epoch, float(np.mean(losses)))
    return params
