"""Umbrella command-line interface.

Subcommands: generate-data, train-proposal, propose, train-localizer,
finetune-weak, detect, evaluate, benchmark, render.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import load_config
from .evaluate import Detector, evaluate, fps_benchmark, render_overlay
from .geometry import params_to_keys
from .images import read_pgm, write_pgm16
from .localizer import LocalizerConfig, localizer_param_shapes, predict_lanes
from .proposal import ProposalNetConfig, extract_points, proposal_param_shapes, proposal_forward
from .scenes import SceneSpec, easy_spec, hard_spec, generate_dataset, read_dataset, write_dataset
from .tensor import Tensor, load_checkpoint, no_grad, save_checkpoint
from .training import (
    TrainConfig,
    finetune_weak,
    proposal_points_for_samples,
    train_localizer,
    train_proposal,
)


def _scene_spec(cfg: dict) -> SceneSpec:
    split = cfg.get("split", "easy")
    maker = hard_spec if split == "hard" else easy_spec
    kwargs = {}
    if "image_size" in cfg:
        h, w = (int(v) for v in cfg["image_size"].replace(",", " ").split())
        kwargs["size"] = (h, w)
    for key in ("noise_sigma", "dash_probability", "min_gap"):
        if key in cfg:
            kwargs[key] = float(cfg[key])
    if "max_lanes" in cfg:
        kwargs["lane_count_range"] = (1, int(cfg["max_lanes"]))
    return maker(**kwargs)


def _net_cfgs(cfg: dict):
    h = int(cfg.get("image_height", 128))
    w = int(cfg.get("image_width", 256))
    widths = tuple(int(v) for v in cfg.get("proposal_widths", "16 32 64").replace(",", " ").split())
    prop = ProposalNetConfig(in_size=(h, w), widths=widths)
    loc = LocalizerConfig(
        hidden_width=int(cfg.get("localizer_hidden", 64)),
        max_lanes=int(cfg.get("max_lanes", 4)),
        score_threshold=float(cfg.get("score_threshold", 0.5)),
        alpha=float(cfg.get("alpha", 1.0)),
        image_width=w,
        image_height=h,
    )
    return prop, loc


def _train_cfg(cfg: dict, args, regime: str) -> TrainConfig:
    verbose = getattr(args, "verbose", False)

    def log(epoch, loss):
        print(f"epoch {epoch}: loss {loss:.6f}", file=sys.stderr)

    return TrainConfig(
        epochs=int(cfg.get("epochs", 10)),
        batch_size=int(cfg.get("batch_size", 8)),
        lr=float(cfg.get("lr", 0.2)),
        momentum=float(cfg.get("momentum", 0.9)),
        seed=args.seed,
        alpha=float(cfg.get("alpha", 1.0)),
        regime=regime,
        log=log if verbose else None,
    )


def _load_cfg(args) -> dict:
    return load_config(args.config) if args.config else {}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lanedet", description=__doc__)
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render a synthetic dataset")
    p.add_argument("--spec", help="scene spec config file (overrides --config)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weak", action="store_true", help="strip lane labels, keep counts")

    p = sub.add_parser("train-proposal", help="train the stage-one network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("propose", help="run stage one on a PGM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-localizer", help="train the stage-two network")
    p.add_argument("--data", required=True)
    p.add_argument("--proposal-ckpt", help="frozen stage-one checkpoint as point source")
    p.add_argument("--gt-edges", action="store_true", help="train on ground-truth edge points")
    p.add_argument("--regime", choices=("supervised", "combined"), default="supervised")
    p.add_argument("--out", required=True)

    p = sub.add_parser("finetune-weak", help="refine the localizer on weak labels")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="full pipeline on one PGM image")
    p.add_argument("--proposal-ckpt", required=True)
    p.add_argument("--localizer-ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", help="overlay PPM path")
    p.add_argument("--json", help="lane list output: p2 p1 p0 k1 k2 k3 score per line")

    p = sub.add_parser("evaluate", help="TPR/FPR on a labeled dataset")
    p.add_argument("--proposal-ckpt", required=True)
    p.add_argument("--localizer-ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--tau-match", type=float, default=8.0)
    p.add_argument("--out", help="TSV report path (default stdout)")

    p = sub.add_parser("benchmark", help="per-stage throughput")
    p.add_argument("--proposal-ckpt", required=True)
    p.add_argument("--localizer-ckpt", required=True)
    p.add_argument("--iterations", type=int, default=20)

    p = sub.add_parser("render", help="overlay ground-truth lanes of a dataset sample")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    cfg = _load_cfg(args)
    prop_cfg, loc_cfg = _net_cfgs(cfg)

    if args.command == "generate-data":
        spec_cfg = load_config(args.spec) if args.spec else cfg
        spec = _scene_spec(spec_cfg)
        samples = generate_dataset(spec, args.count, args.seed)
        if args.weak:
            samples = [s.as_weak() for s in samples]
        write_dataset(samples, args.out)
        print(f"wrote {len(samples)} samples to {args.out}")
        return 0

    if args.command == "train-proposal":
        samples = read_dataset(args.data)
        params = train_proposal(samples, _train_cfg(cfg, args, "supervised"), prop_cfg)
        save_checkpoint(params, args.out)
        print(f"saved proposal checkpoint to {args.out}")
        return 0

    if args.command == "propose":
        params = load_checkpoint(args.checkpoint, proposal_param_shapes(prop_cfg))
        image = read_pgm(args.image)
        with no_grad():
            probs = proposal_forward(Tensor(image[None, None]), prop_cfg, params)
        write_pgm16(probs.data[0, 0], args.out)
        print(f"wrote probability map to {args.out}")
        return 0

    if args.command == "train-localizer":
        samples = read_dataset(args.data)
        point_sets = None
        if args.proposal_ckpt and not args.gt_edges:
            prop_params = load_checkpoint(args.proposal_ckpt, proposal_param_shapes(prop_cfg))
            point_sets = proposal_points_for_samples(samples, prop_params, prop_cfg, seed=args.seed)
        params = train_localizer(
            samples, _train_cfg(cfg, args, args.regime), loc_cfg, point_sets=point_sets
        )
        save_checkpoint(params, args.out)
        print(f"saved localizer checkpoint to {args.out}")
        return 0

    if args.command == "finetune-weak":
        samples = read_dataset(args.data)
        params = load_checkpoint(args.ckpt, localizer_param_shapes(loc_cfg))
        params = finetune_weak(samples, params, _train_cfg(cfg, args, "weak-finetune"), loc_cfg)
        save_checkpoint(params, args.out)
        print(f"saved fine-tuned checkpoint to {args.out}")
        return 0

    if args.command in ("detect", "evaluate", "benchmark"):
        prop_params = load_checkpoint(args.proposal_ckpt, proposal_param_shapes(prop_cfg))
        loc_params = load_checkpoint(args.localizer_ckpt, localizer_param_shapes(loc_cfg))
        detector = Detector(prop_params, prop_cfg, loc_params, loc_cfg, seed=args.seed)

        if args.command == "detect":
            image = read_pgm(args.image)[None]
            pred = detector.predict(image)
            h = image.shape[-2]
            lanes = pred.lanes(h)
            if args.json:
                with open(args.json, "w", encoding="utf-8") as fh:
                    for lane, keys, score in zip(lanes, pred.keys, pred.scores):
                        fh.write(
                            f"{lane.p2:.9g} {lane.p1:.9g} {lane.p0:.9g} "
                            f"{keys.k1:.9g} {keys.k2:.9g} {keys.k3:.9g} {score:.9g}\n"
                        )
            if args.out:
                render_overlay(image, lanes, args.out)
            print(f"detected {len(lanes)} lanes")
            return 0

        if args.command == "evaluate":
            samples = read_dataset(args.data)
            report = evaluate(detector, samples, args.tau_match, split=args.split)
            line = report.as_tsv()
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write("split\ttargets\tdetected\tTPR\tFPR\ttau_match\n")
                    fh.write(line + "\n")
            print(line)
            return 0

        spec = _scene_spec(cfg)
        spec.size = prop_cfg.in_size
        sample = generate_dataset(spec, 1, args.seed)[0]
        result = fps_benchmark(detector, sample, iterations=args.iterations)
        print(json.dumps(result, indent=2))
        return 0

    if args.command == "render":
        samples = read_dataset(args.data)
        s = samples[args.index]
        render_overlay(s.image, s.lanes, args.out)
        print(f"wrote overlay to {args.out}")
        return 0

    raise AssertionError("unreachable")


if __name__ == "__main__":
    raise SystemExit(main())
