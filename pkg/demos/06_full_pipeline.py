"""The whole two-stage detector, end to end, through the command-line interface.

Everything the library does is also reachable via `lanedet <subcommand>`:
data generation, both training stages, weak fine-tuning, detection on a
single image, evaluation, benchmarking, and rendering. This demo drives the
same entry points programmatically on a small configuration.

Run: python3 demos/06_full_pipeline.py  (writes to ./demo_out)
"""

import pathlib

from lanedet.cli import main
from lanedet.images import write_pgm16
from lanedet.scenes import read_dataset

out = pathlib.Path("demo_out")
out.mkdir(exist_ok=True)

cfg = out / "pipeline.cfg"
cfg.write_text(
    "\n".join(
        [
            "image_height = 64",
            "image_width = 128",
            "image_size = 64 128",
            "proposal_widths = 8 16 32",
            "localizer_hidden = 64",
            "max_lanes = 2",
            "min_gap = 24",
            "epochs = 8",
            "batch_size = 12",
            "lr = 1.0",
            "momentum = 0.9",
        ]
    )
)

base = ["--config", str(cfg)]


def run(*args):
    print(f"\n$ lanedet {' '.join(args)}")
    assert main(base + list(args)) == 0


run("generate-data", "--count", "80", "--out", str(out / "train.lnds"))
run("generate-data", "--count", "20", "--out", str(out / "test.lnds"))
run("train-proposal", "--data", str(out / "train.lnds"),
    "--out", str(out / "proposal.ck"))
run("train-localizer", "--data", str(out / "train.lnds"), "--gt-edges",
    "--out", str(out / "localizer.ck"))

# single-image detection needs a plain PGM input
sample = read_dataset(out / "test.lnds")[0]
write_pgm16(sample.image[0], out / "scene.pgm")
run("detect", "--proposal-ckpt", str(out / "proposal.ck"),
    "--localizer-ckpt", str(out / "localizer.ck"),
    "--image", str(out / "scene.pgm"),
    "--out", str(out / "detection.ppm"), "--json", str(out / "lanes.txt"))
print("\nlane file contents (p2 p1 p0 k1 k2 k3 score per line):")
print((out / "lanes.txt").read_text().rstrip() or "(no lanes above threshold)")

run("evaluate", "--proposal-ckpt", str(out / "proposal.ck"),
    "--localizer-ckpt", str(out / "localizer.ck"),
    "--data", str(out / "test.lnds"), "--split", "demo",
    "--out", str(out / "report.tsv"))
run("benchmark", "--proposal-ckpt", str(out / "proposal.ck"),
    "--localizer-ckpt", str(out / "localizer.ck"), "--iterations", "10")
