"""Shared test oracles: finite differences, brute-force references, matching."""

from __future__ import annotations

import itertools
import math

import numpy as np

from lanedet import tensor as T


def analytic_grads(make_loss, params):
    """Build the loss once, backprop, return grads keyed like params."""
    for p in params:
        p.grad = None
    loss = make_loss()
    T.backward(loss)
    T.tape.clear()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    return float(loss.data), grads


def fd_grad_entry(make_loss, param, index, eps=1e-5):
    orig = param.data[index]
    with T.no_grad():
        param.data[index] = orig + eps
        up = float(make_loss().data)
        param.data[index] = orig - eps
        down = float(make_loss().data)
        param.data[index] = orig
    return (up - down) / (2.0 * eps)


def max_rel_grad_error(make_loss, params, rng=None, max_entries_per_param=6, eps=1e-5):
    """Compare analytic vs central finite-difference grads on a random subset
    of entries per parameter; returns the max relative error."""
    _, grads = analytic_grads(make_loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = list(np.ndindex(p.data.shape))
        if rng is not None and len(flat) > max_entries_per_param:
            picks = rng.choice(len(flat), size=max_entries_per_param, replace=False)
            flat = [flat[i] for i in picks]
        for idx in flat:
            num = fd_grad_entry(make_loss, p, idx, eps)
            ana = g[idx]
            err = abs(ana - num) / max(abs(ana) + abs(num), 1e-6)
            worst = max(worst, err)
    return worst


def conv2d_loops(x, w, stride=1, dilation=1, groups=1, padding=0):
    """Direct nested-loop cross-correlation reference."""
    n, c_in, h, width = x.shape
    c_out, c_in_g, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    w_out = (width + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    co_per_g = c_out // groups
    for b in range(n):
        for co in range(c_out):
            g = co // co_per_g
            for oy in range(h_out):
                for ox in range(w_out):
                    acc = 0.0
                    for ci in range(c_in_g):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    w[co, ci, u, v]
                                    * xp[
                                        b,
                                        g * c_in_g + ci,
                                        oy * stride + u * dilation,
                                        ox * stride + v * dilation,
                                    ]
                                )
                    out[b, co, oy, ox] = acc
    return out


def balanced_bce_loops(pred, target, beta=None, eps=1e-7):
    """Scalar double-loop balanced BCE reference."""
    pred = np.asarray(pred).reshape(-1)
    target = np.asarray(target).reshape(-1)
    pos = target.sum()
    neg = target.size - pos
    if beta is None:
        beta = pos / neg
    total = 0.0
    for p, y in zip(pred, target):
        p = min(max(p, eps), 1.0 - eps)
        total += y * math.log(p) + beta * (1.0 - y) * math.log(1.0 - p)
    return -total


def min_distance_loops(lanes, points, w):
    """Brute-force mean over points of the nearest-lane horizontal distance."""
    total = 0.0
    for x, y in points:
        best = min(abs(x - (p2 * y * y + p1 * y + p0)) for p2, p1, p0 in lanes)
        total += best / w
    return total / len(points)


def optimal_matching(pred, gt, h, tau):
    """Exhaustive best one-to-one matching count (small instances only)."""
    from lanedet.evaluate import lane_distance

    np_, ng = len(pred), len(gt)
    best = 0
    k = min(np_, ng)
    for subset in itertools.permutations(range(ng), k):
        count = sum(
            1
            for i, j in zip(range(k), subset)
            if lane_distance(pred[i], gt[j], h) <= tau
        )
        best = max(best, count)
    # permutations over which preds participate
    if np_ > ng:
        for pred_subset in itertools.permutations(range(np_), ng):
            for perm in itertools.permutations(range(ng)):
                count = sum(
                    1
                    for pi, gj in zip(pred_subset, perm)
                    if lane_distance(pred[pi], gt[gj], h) <= tau
                )
                best = max(best, count)
    return best, np_ - best
