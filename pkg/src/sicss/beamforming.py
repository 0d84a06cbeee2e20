"""Fixed superdirective beamformer bank."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import ArrayGeometry, build_steering_table, circular_distance
from .signal_core import FrameConfig, MultiChannelSpectrogram

NUM_BEAMS = 18
BEAM_SPACING = 20.0
DEFAULT_LOADING = 1e-2


class SingularCoherenceError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class BeamformerBank:
    """Weights indexed ``(beam, bin, channel)``; output is ``w^H x``."""

    weights: np.ndarray
    focus_angles: np.ndarray
    geometry: ArrayGeometry
    config: FrameConfig
    diagonal_loading: float

    @property
    def num_beams(self):
        return self.weights.shape[0]

    @property
    def reference_scale(self):
        """Gain mapping a distortionless unit-norm output to reference-mic level."""
        return 1.0 / np.sqrt(self.geometry.num_mics)


def diffuse_coherence(geom, config):
    """Spherically isotropic coherence ``sinc(2 pi f d / c)`` per bin, (F, M, M)."""
    d = geom.distances()
    f = config.bin_frequencies()
    # np.sinc(x) = sin(pi x) / (pi x)
    return np.sinc(2.0 * f[:, None, None] * d[None] / geom.speed_of_sound)


def superdirective_weights(h, coherence, loading):
    """``w = G^-1 h / (h^H G^-1 h)`` with ``G = coherence + loading * I``.

    ``h`` is (..., F, M), ``coherence`` (F, M, M).
    """
    M = coherence.shape[-1]
    G = coherence + loading * np.eye(M)
    try:
        if loading <= 0:
            cond = np.linalg.cond(G)
            if np.any(~np.isfinite(cond)) or np.any(cond > 1e14):
                raise SingularCoherenceError("coherence matrix is singular")
        Gh = np.linalg.solve(G, h[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularCoherenceError(str(exc)) from exc
    denom = np.sum(h.conj() * Gh, axis=-1, keepdims=True)
    return Gh / denom.conj()


def design_bank(geom, config=None, loading=DEFAULT_LOADING, num_beams=NUM_BEAMS):
    """Design ``num_beams`` beams at ``360 / num_beams`` degree spacing.

    Each beam maximizes output SNR against spherically diffuse noise subject to
    a distortionless response toward its focus direction.
    """
    config = config or FrameConfig()
    if loading < 0:
        raise ValueError("diagonal loading must be non-negative")
    focus = np.arange(num_beams) * (360.0 / num_beams)
    table = build_steering_table(geom, focus, config)
    gamma = diffuse_coherence(geom, config)
    w = superdirective_weights(table.vectors, gamma[None], loading)
    w.setflags(write=False)
    return BeamformerBank(w, focus, geom, config, float(loading))


def apply_beam(bank, beam, spec, reference_scale=False):
    """Beamform ``spec`` with beam ``beam``; returns a single-channel spectrogram.

    With ``reference_scale`` the output of a plane wave from the focus
    direction equals the reference-mic signal rather than ``sqrt(M)`` times it.
    """
    if not 0 <= beam < bank.num_beams:
        raise IndexError(f"beam {beam} out of range [0, {bank.num_beams})")
    data = spec.data if isinstance(spec, MultiChannelSpectrogram) else np.asarray(spec)
    if data.shape[0] != bank.geometry.num_mics:
        raise ValueError(
            f"spectrogram has {data.shape[0]} channels, bank expects "
            f"{bank.geometry.num_mics}"
        )
    y = np.einsum("fm,mtf->tf", bank.weights[beam].conj(), data)
    if reference_scale:
        y = y * bank.reference_scale
    return MultiChannelSpectrogram(y[None], bank.config)


def beam_frame(bank, beam, X):
    """Reference-scaled output of one frame ``X`` (channels, bins)."""
    return np.sum(bank.weights[beam].conj() * X.T, axis=-1) * bank.reference_scale


def select_beam(bank, angle):
    """Beam whose focus is nearest to ``angle``; ties go to the lower index."""
    d = circular_distance(bank.focus_angles, angle % 360.0)
    return int(np.flatnonzero(d <= d.min() + 1e-9)[0])


def bank_diagnostics(bank):
    """Per beam/bin white-noise gain ``w^H w`` and diffuse power ``w^H G w``."""
    w = bank.weights
    gamma = diffuse_coherence(bank.geometry, bank.config)
    wng = np.sum(np.abs(w) ** 2, axis=-1)
    diffuse = np.einsum("bfm,fmn,bfn->bf", w.conj(), gamma, w).real
    table = build_steering_table(bank.geometry, bank.focus_angles, bank.config)
    response = np.abs(np.sum(w.conj() * table.vectors, axis=-1))
    return {"white_noise_gain": wng, "diffuse_power": diffuse, "focus_response": response}


def save_bank(bank, path):
    """Write the bank as JSON; weights are flat real/imag lists in C order."""
    g = bank.geometry
    doc = {
        "format": "sicss-beam-bank/1",
        "shape": list(bank.weights.shape),
        "focus_angles": bank.focus_angles.tolist(),
        "diagonal_loading": bank.diagonal_loading,
        "frame": {
            "sample_rate": bank.config.sample_rate,
            "frame_shift": bank.config.frame_shift,
            "frame_length": bank.config.frame_length,
        },
        "geometry": {
            "mic_positions": g.mic_positions.tolist(),
            "reference_index": g.reference_index,
            "speed_of_sound": g.speed_of_sound,
        },
        "weights_re": bank.weights.real.ravel().tolist(),
        "weights_im": bank.weights.imag.ravel().tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_bank(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "sicss-beam-bank/1":
        raise ValueError(f"{path}: not a beam bank file")
    shape = tuple(doc["shape"])
    w = (np.array(doc["weights_re"]) + 1j * np.array(doc["weights_im"])).reshape(shape)
    w.setflags(write=False)
    g = doc["geometry"]
    geom = ArrayGeometry(
        np.array(g["mic_positions"]), g["reference_index"], g["speed_of_sound"]
    )
    config = FrameConfig(**doc["frame"])
    return BeamformerBank(
        w, np.array(doc["focus_angles"]), geom, config, doc["diagonal_loading"]
    )
