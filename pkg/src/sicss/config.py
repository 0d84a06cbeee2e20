"""Flat sectioned key/value configuration files.

Example::

    [frame]
    sample_rate = 16000
    frame_shift = 256
    frame_length = 512

    [geometry]
    file = array.txt        ; or: radius = 0.0425, num_circle = 6, center_mic = yes

    [separation]
    estimator = baseline
    lookahead = 4
    buffer_length = 150

    [ssl]
    window = 50
    stride = 10
    margin = 20
    epsilon = 1e-3
    grid_step = 5
    policy = budget

    [enhancement]
    postfilter = mask-reuse
    bank = beams.json       ; omit to design on start
    loading = 1e-2
"""
from __future__ import annotations

import configparser
import os

from .geometry import circular_array, default_geometry, load_geometry
from .pipeline import PipelineConfig
from .signal_core import FrameConfig
from .ssl import SslSchedule

KNOWN = {
    "frame": {"sample_rate", "frame_shift", "frame_length", "window"},
    "geometry": {"file", "radius", "num_circle", "center_mic", "speed_of_sound"},
    "separation": {"estimator", "lookahead", "buffer_length"},
    "ssl": {"window", "stride", "margin", "epsilon", "grid_step", "policy"},
    "enhancement": {"postfilter", "bank", "loading"},
}


def load_config(path=None, **overrides):
    """Build a :class:`PipelineConfig` from a file; missing keys keep the defaults.

    Keyword overrides (``estimator``, ``postfilter``, ``bank_path``, ...) are
    applied last.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    base = os.getcwd()
    if path:
        with open(path) as fh:
            cp.read_file(fh)
        base = os.path.dirname(os.path.abspath(path))
    for section in cp.sections():
        if section not in KNOWN:
            raise ValueError(f"unknown config section [{section}]")
        unknown = set(cp[section]) - KNOWN[section]
        if unknown:
            raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")

    def get(section, key, conv, default):
        if cp.has_option(section, key):
            return conv(cp.get(section, key))
        return default

    frame = FrameConfig(
        get("frame", "sample_rate", int, 16000),
        get("frame", "frame_shift", int, 256),
        get("frame", "frame_length", int, 512),
        get("frame", "window", str, "sqrt_hann"),
    )
    if cp.has_option("geometry", "file"):
        file = cp.get("geometry", "file")
        geometry = load_geometry(file if os.path.isabs(file) else os.path.join(base, file))
    elif cp.has_section("geometry"):
        geometry = circular_array(
            get("geometry", "num_circle", int, 6),
            get("geometry", "radius", float, 0.0425),
            cp.getboolean("geometry", "center_mic", fallback=True),
        )
    else:
        geometry = default_geometry()
    schedule = SslSchedule(
        get("ssl", "window", int, 50),
        get("ssl", "stride", int, 10),
        get("ssl", "margin", int, 20),
        get("ssl", "epsilon", float, 1e-3),
    )
    bank = get("enhancement", "bank", str, None)
    if bank and not os.path.isabs(bank):
        bank = os.path.join(base, bank)
    kwargs = dict(
        frame=frame,
        geometry=geometry,
        schedule=schedule,
        ssl_grid_step=get("ssl", "grid_step", float, 5.0),
        ssl_policy=get("ssl", "policy", str, "budget"),
        bank_path=bank,
        loading=get("enhancement", "loading", float, 1e-2),
        estimator=get("separation", "estimator", str, "baseline"),
        lookahead=get("separation", "lookahead", int, 4),
        buffer_length=get("separation", "buffer_length", int, 150),
        postfilter=get("enhancement", "postfilter", str, "mask-reuse"),
    )
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**kwargs)
