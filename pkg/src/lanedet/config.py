"""Plain-text config: one ``key = value`` per line, '#' starts a comment."""

from __future__ import annotations

import numpy as np

__all__ = ["parse_config", "load_config", "ConfigError", "get_floats", "get_ipm"]


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def get_floats(cfg: dict, key: str, count: int | None = None):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    vals = [float(v) for v in cfg[key].replace(",", " ").split()]
    if count is not None and len(vals) != count:
        raise ConfigError(f"{key!r} needs {count} numbers, got {len(vals)}")
    return vals


def get_ipm(cfg: dict):
    """IPM block: 4 src points, 4 dst points, output size (h, w)."""
    src = np.array(get_floats(cfg, "ipm_src", 8)).reshape(4, 2)
    dst = np.array(get_floats(cfg, "ipm_dst", 8)).reshape(4, 2)
    h, w = get_floats(cfg, "ipm_out_size", 2)
    return src, dst, (int(h), int(w))
