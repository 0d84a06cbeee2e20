"""Magnitude, IPD and directional features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SteeringTable, circular_distance

_TINY = 1e-300


@dataclass
class FeatureFrame:
    """Features of one STFT frame.

    ``ipd`` has one row per non-reference mic, in channel order with the
    reference skipped.
    """

    ref_magnitude: np.ndarray
    ipd: np.ndarray
    frame_index: int


def wrap_phase(phi):
    """Wrap to ``(-pi, pi]``."""
    out = np.angle(np.exp(1j * np.asarray(phi)))
    return np.where(out == -np.pi, np.pi, out)


def frame_features(X, ref, frame_index):
    """Features for one frame ``X`` of shape (channels, bins)."""
    M = X.shape[0]
    if not 0 <= ref < M:
        raise ValueError(f"reference index {ref} out of range for {M} channels")
    others = [m for m in range(M) if m != ref]
    # difference of phases rather than angle(X_ref conj(X_m)): identical
    # channels then give exactly zero
    ipd = np.angle(X[ref])[None, :] - np.angle(X[others])
    ipd = np.where(ipd > np.pi, ipd - 2 * np.pi, ipd)
    ipd = np.where(ipd <= -np.pi, ipd + 2 * np.pi, ipd)
    return FeatureFrame(np.abs(X[ref]), ipd, frame_index)


def extract_features(spec, ref=0):
    """Reference magnitude plus M-1 IPDs for every frame of ``spec``."""
    if spec.num_channels < 2:
        raise ValueError("feature extraction needs at least 2 channels")
    return [frame_features(spec.data[:, t], ref, t) for t in range(spec.num_frames)]


def normalized_observations(X):
    """Unit-norm observation vectors ``z_{t,f}``.

    ``X`` is (channels, frames, bins); returns (frames, bins, channels). Bins
    with zero energy map to the zero vector.
    """
    Z = np.ascontiguousarray(np.moveaxis(np.asarray(X), 0, -1))
    norm = np.sqrt(np.sum(Z.real**2 + Z.imag**2, axis=-1, keepdims=True))
    return np.divide(Z, norm, out=np.zeros_like(Z), where=norm > _TINY)


def observation_from_ipd(frame, ref, num_channels):
    """Unit-magnitude observation rebuilt from IPDs, shape (bins, channels).

    Channel ``m`` gets phase ``-ipd_m`` relative to the reference, which is the
    far-field model with equal mic gains.
    """
    F = frame.ref_magnitude.shape[0]
    z = np.empty((F, num_channels), complex)
    z[:, ref] = 1.0
    others = [m for m in range(num_channels) if m != ref]
    z[:, others] = np.exp(-1j * frame.ipd.T)
    return z / np.sqrt(num_channels)


def _steering_for(table, angle):
    idx = table.index_of(angle)
    if circular_distance(table.angle_grid[idx], angle) < 1e-9:
        return table.vectors[idx]
    freqs = table.config.bin_frequencies()
    tau = table.geometry.delays(angle)
    return np.exp(-2j * np.pi * freqs[:, None] * tau[None, :]) / np.sqrt(
        table.geometry.num_mics
    )


def cosine_feature(spec, table: SteeringTable, angle, frames=None):
    """Raw directional feature ``|z^H h|`` in [0, 1], shape (frames, bins)."""
    data = spec.data if frames is None else spec.data[:, frames]
    Z = normalized_observations(data)
    h = _steering_for(table, angle)
    c = np.abs(np.einsum("tfm,fm->tf", Z.conj(), h))
    return np.minimum(c, 1.0)


def directional_features(spec, table, target, interference, frames=None):
    """Sparsified (target, interference) features.

    Winner-take-all per bin: the target keeps its value where it is at least
    as close as the interference, the interference keeps its value where it
    is strictly closer. At most one is nonzero per bin.
    """
    ct = cosine_feature(spec, table, target, frames)
    ci = cosine_feature(spec, table, interference, frames)
    t_wins = ct >= ci
    return np.where(t_wins, ct, 0.0), np.where(t_wins, 0.0, ci)


def directional_feature(spec, table, angle, frames=None, competitors=()):
    """Directional feature at ``angle``, sparsified against ``competitors``.

    With no competitors the raw cosine feature is returned.
    """
    c = cosine_feature(spec, table, angle, frames)
    for other in competitors:
        c = np.where(c >= cosine_feature(spec, table, other, frames), c, 0.0)
    return c
