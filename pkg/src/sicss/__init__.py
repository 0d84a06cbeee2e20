"""Low-latency speaker-independent continuous speech separation.

A streaming pipeline that turns a 7-channel meeting recording into two
overlap-free output streams: look-ahead-bounded mask estimation with double
buffering, mask-weighted cACG source localization with a decision margin,
and a fixed superdirective beam bank followed by a post-filter.
"""
from . import kernels
from .beamforming import BeamformerBank, design_bank
from .geometry import ArrayGeometry, circular_array, default_geometry
from .pipeline import PipelineConfig, causality_audit, run_pipeline
from .signal_core import FrameConfig, istft, stft

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry",
    "BeamformerBank",
    "FrameConfig",
    "PipelineConfig",
    "causality_audit",
    "circular_array",
    "default_geometry",
    "design_bank",
    "istft",
    "kernels",
    "run_pipeline",
    "stft",
]
