"""Flat ``key = value`` experiment configuration files.

UTF-8 text, ``#`` starts a comment, blank lines ignored. Keys are dotted
paths mirroring the dataclass fields they set, e.g.::

    link.n_fft = 12
    link.n_ch = 4
    ch.snr_db = 10
    jam.enabled = true
    jam.jsr_db = 15
    train.n_ep = 40
    sweep.snr_grid_db = -5, -2.5, 0, 2.5, 5, 7.5, 10

Values parse as bool (true/false), int, float, inf, or comma-separated
lists thereof; anything else stays a string.
"""

from __future__ import annotations

import math
from dataclasses import fields

from .errors import ConfigError
from .gan import GanConfig
from .phy import ChannelParams, JammerParams, LinkConfig
from .training import TrainConfig


def _parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    if low in ("-inf", "-infinity"):
        return -math.inf
    if low in ("none", "null"):
        return None
    try:
        return int(t, 0)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def parse_value(text: str):
    if "," in text:
        return [_parse_scalar(p) for p in text.split(",") if p.strip()]
    return _parse_scalar(text)


def read_config(path: str) -> dict:
    """Parse a config file into a flat {dotted.key: value} dict."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = parse_value(value)
    return out


def _build(cls, table: dict, prefix: str, **overrides):
    names = {f.name for f in fields(cls)}
    kwargs = dict(overrides)
    for key, value in table.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1:]
        if name not in names:
            raise ConfigError(f"unknown key {key!r} (no field {name!r} on {cls.__name__})")
        kwargs[name] = value
    return cls(**kwargs)


def link_config(table: dict) -> LinkConfig:
    return _build(LinkConfig, table, "link")


def channel_params(table: dict, prefix: str = "ch") -> ChannelParams:
    return _build(ChannelParams, table, prefix)


def jammer_params(table: dict, prefix: str = "jam") -> JammerParams | None:
    """None unless any ``jam.*`` key is present and jam.enabled is not false."""
    keys = [k for k in table if k.startswith(prefix + ".")]
    if not keys:
        return None
    jam = _build(JammerParams, table, prefix)
    return jam if jam.enabled else None


def train_config(table: dict, seed: int | None = None) -> TrainConfig:
    ch = channel_params(table)
    jam = jammer_params(table, "train_jam")
    overrides = {"ch": ch, "train_jam": jam}
    if seed is not None:
        overrides["seed"] = seed
    cfg = _build(TrainConfig, table, "train", **overrides)
    return cfg


def gan_config(table: dict, seed: int | None = None) -> GanConfig:
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    return _build(GanConfig, table, "gan", **overrides)
