"""Stage one: encoder-decoder lane-edge proposal network.

Encoder blocks stack three depthwise 3x3 convolutions (dilations 1, 2, 4,
stride 2 on the first) each followed by a pointwise convolution and ReLU.
The decoder recovers resolution with pointwise conv + pixel shuffle stages
and additive skip connections; a sigmoid head emits a per-pixel lane-edge
probability map the same size as the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .localizer import PointSet
from .tensor import Tensor

__all__ = [
    "ProposalNetConfig",
    "ProposalMap",
    "init_proposal_params",
    "proposal_param_shapes",
    "proposal_forward",
    "balanced_bce_loss",
    "extract_points",
    "DegenerateBalanceError",
]

_EPS = 1e-7
_DILATIONS = (1, 2, 4)


class DegenerateBalanceError(ValueError):
    """Batch is all-positive or all-negative; the balance weight is undefined."""


@dataclass
class ProposalNetConfig:
    in_size: tuple = (128, 256)  # (h, w)
    in_channels: int = 1
    widths: tuple = (16, 32, 64)
    upsample: int = 2

    def __post_init__(self):
        h, w = self.in_size
        b = len(self.widths)
        if h % (2**b) or w % (2**b):
            raise ValueError(f"input size {self.in_size} not divisible by 2^{b}")

    @property
    def blocks(self) -> int:
        return len(self.widths)

    def decoder_widths(self) -> tuple:
        # target width at each upsampled resolution: mirror of the encoder,
        # with the full-resolution stage reusing the first encoder width
        rev = list(self.widths[-2::-1])
        return tuple(rev + [self.widths[0]])


@dataclass(frozen=True)
class ProposalMap:
    """Per-pixel lane-edge probabilities, same spatial size as the input."""

    probabilities: np.ndarray  # (1, h, w), values in [0, 1]

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != 1:
            raise ValueError(f"proposal map must be (1, h, w), got {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("proposal map values must lie in [0, 1]")
        object.__setattr__(self, "probabilities", p)


def proposal_param_shapes(cfg: ProposalNetConfig) -> dict:
    shapes = {}
    in_ch = cfg.in_channels
    for b, width in enumerate(cfg.widths):
        ch = in_ch
        for j in range(3):
            shapes[f"enc{b}.dw{j}"] = (ch, 1, 3, 3)
            shapes[f"enc{b}.pw{j}.w"] = (width, ch, 1, 1)
            shapes[f"enc{b}.pw{j}.b"] = (width,)
            ch = width
        in_ch = width
    r2 = cfg.upsample**2
    cur = cfg.widths[-1]
    skip_sources = list(cfg.widths[-2::-1]) + [cfg.in_channels]
    for i, tgt in enumerate(cfg.decoder_widths()):
        shapes[f"dec{i}.up.w"] = (r2 * tgt, cur, 1, 1)
        shapes[f"dec{i}.up.b"] = (r2 * tgt,)
        shapes[f"dec{i}.skip.w"] = (tgt, skip_sources[i], 1, 1)
        shapes[f"dec{i}.skip.b"] = (tgt,)
        cur = tgt
    shapes["head.w"] = (1, cur, 1, 1)
    shapes["head.b"] = (1,)
    return shapes


def init_proposal_params(cfg: ProposalNetConfig, rng: np.random.Generator) -> dict:
    params = {}
    for name, shape in proposal_param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = Tensor(np.zeros(shape), requires_grad=True)
        else:
            c_out, c_in = shape[0], shape[1]
            k = shape[2] * shape[3]
            params[name] = T.uniform_init(rng, shape, c_in * k, c_out * k)
    return params


def _pw(x: Tensor, params: dict, name: str) -> Tensor:
    out = T.conv2d(x, params[f"{name}.w"])
    b = params[f"{name}.b"]
    return T.add(out, T.reshape(b, (1, b.shape[0], 1, 1)))


def proposal_forward(image: Tensor, cfg: ProposalNetConfig, params: dict) -> Tensor:
    """Forward pass; returns probabilities as a Tensor (N, 1, h, w)."""
    n, c, h, w = image.shape
    if (h, w) != tuple(cfg.in_size) or c != cfg.in_channels:
        raise T.DimensionError(
            f"input {image.shape} does not match configured size {cfg.in_size}"
        )
    feat = image
    skips = [image]
    for b in range(cfg.blocks):
        for j, dil in enumerate(_DILATIONS):
            stride = 2 if j == 0 else 1
            feat = T.conv2d(
                feat,
                params[f"enc{b}.dw{j}"],
                stride=stride,
                dilation=dil,
                groups=feat.shape[1],
                padding=T.same_padding(3, dil),
            )
            feat = T.relu(_pw(feat, params, f"enc{b}.pw{j}"))
        skips.append(feat)
    # decoder: deepest skip is the encoder output itself, so start one level up
    skip_feats = skips[-2::-1]
    for i in range(cfg.blocks):
        up = T.pixel_shuffle(_pw(feat, params, f"dec{i}.up"), cfg.upsample)
        skip = _pw(skip_feats[i], params, f"dec{i}.skip")
        feat = T.relu(T.add(up, skip))
    return T.sigmoid(_pw(feat, params, "head"))


def to_proposal_map(probs: Tensor, index: int = 0) -> ProposalMap:
    return ProposalMap(probs.data[index])


def balanced_bce_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Class-balanced binary cross-entropy, summed over batch and pixels.

    The negative-pixel term is weighted by beta = (#positive) / (#negative),
    computed over the whole batch, to offset the scarcity of edge pixels.
    """
    y = np.asarray(target, dtype=np.float64)
    if y.shape != pred.shape:
        raise T.DimensionError(f"target shape {y.shape} != prediction {pred.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("target must be binary")
    pos = y.sum()
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise DegenerateBalanceError(
            "balanced BCE needs at least one positive and one negative pixel"
        )
    beta = pos / neg
    p = T.clamp(pred, _EPS, 1.0 - _EPS)
    pos_term = T.mul(Tensor(y), T.log(p))
    neg_term = T.mul(Tensor(1.0 - y), T.log(T.add_scalar(T.neg(p), 1.0)))
    return T.neg(T.tsum(T.add(pos_term, T.scale(neg_term, beta))))


def extract_points(
    prob_map,
    threshold: float = 0.5,
    max_points: int = 512,
    seed: int = 0,
) -> PointSet:
    """Threshold the proposal map into an (x, y) point set.

    Above ``max_points`` supra-threshold pixels, a seeded uniform subsample
    without replacement is kept. Below, the true count is kept unpadded; an
    empty set signals "no lanes here" to the caller.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    probs = prob_map.probabilities if isinstance(prob_map, ProposalMap) else np.asarray(prob_map)
    probs = probs.reshape(probs.shape[-2], probs.shape[-1])
    ys, xs = np.nonzero(probs >= threshold)
    if len(xs) > max_points:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(xs), size=max_points, replace=False))
        xs, ys = xs[keep], ys[keep]
    return PointSet(np.stack([xs, ys], axis=1).astype(np.float64))
