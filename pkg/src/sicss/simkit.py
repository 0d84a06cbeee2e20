"""Synthetic multichannel scenes with ground truth, plus evaluation metrics.

Rendering is anechoic and far-field: each source reaches every mic through
an exact fractional delay applied in the frequency domain over the source's
zero-padded active span. Diffuse noise is white noise
per mic mixed per frequency by the Cholesky factor of the spherically
isotropic coherence matrix.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len

from .geometry import ArrayGeometry, circular_distance, default_geometry

log = logging.getLogger(__name__)

SI_SDR_CAP = 100.0


@dataclass
class Source:
    signal: np.ndarray
    azimuth: float
    onset: float = 0.0  # seconds
    level_db: float = -26.0  # RMS of the dry signal over its active part, dBFS
    speaker: int = 0


@dataclass
class Scenario:
    sources: list
    duration: float
    noise_db: float | None = None  # per-mic diffuse noise RMS, dBFS
    geometry: ArrayGeometry = field(default_factory=default_geometry)
    seed: int = 0
    sample_rate: int = 16000

    def __post_init__(self):
        for s in self.sources:
            if not 0 <= s.azimuth < 360:
                raise ValueError(f"azimuth {s.azimuth} outside [0, 360)")


@dataclass
class Utterance:
    speaker: int
    azimuth: float
    start: int  # samples, inclusive
    end: int  # samples, exclusive
    reference: np.ndarray  # clean reference-mic signal over [start, end)


@dataclass
class GroundTruth:
    speaker_images: np.ndarray  # (speakers, mics, samples)
    noise_image: np.ndarray  # (mics, samples)
    utterances: list
    reference_index: int
    sample_rate: int

    @property
    def num_speakers(self):
        return self.speaker_images.shape[0]

    def reference(self, speaker):
        return self.speaker_images[speaker, self.reference_index]

    def noise_reference(self):
        return self.noise_image[self.reference_index]

    def true_angles(self, config, num_frames=None):
        """Per-frame azimuth of each speaker, NaN where the speaker is silent."""
        n = num_frames or config.num_frames(self.speaker_images.shape[-1])
        out = np.full((n, self.num_speakers), np.nan)
        for u in self.utterances:
            lo = max(0, -(-(u.start - config.frame_length + 1) // config.frame_shift))
            hi = min(n, (u.end - 1) // config.frame_shift + 1)
            out[lo:hi, u.speaker] = u.azimuth
        return out

    def active_sources(self, config, num_frames=None):
        return ~np.isnan(self.true_angles(config, num_frames))


# ---------------------------------------------------------------- sources


def speech_like(duration, sample_rate=16000, f0=120.0, seed=0):
    """Voiced, syllabically modulated harmonic signal with moving formants.

    Unit RMS over the whole signal; starts and ends with a 10 ms fade.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    drift = np.cumsum(rng.normal(0, 0.002, n // 160 + 2))
    drift = np.interp(t, np.arange(drift.size) * 0.01, drift - drift.mean())
    f0_t = f0 * (1 + 0.08 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 2 * np.pi))) * np.exp(drift)
    phase = 2 * np.pi * np.cumsum(f0_t) / sample_rate

    env = np.zeros(n)
    f1 = np.zeros(n)
    f2 = np.zeros(n)
    pos = 0
    while pos < n:
        if pos and rng.random() < 0.15:
            pos += int(rng.uniform(0.04, 0.12) * sample_rate)
            continue
        length = int(rng.uniform(0.12, 0.3) * sample_rate)
        seg = slice(pos, min(n, pos + length))
        k = seg.stop - seg.start
        env[seg] = np.hanning(length + 2)[1 : k + 1] ** 0.5 * rng.uniform(0.5, 1.0)
        f1[seg] = rng.uniform(300, 800)
        f2[seg] = rng.uniform(900, 2300)
        pos += length
    kernel = np.ones(320) / 320
    f1 = np.convolve(np.where(f1 > 0, f1, 500), kernel, mode="same")
    f2 = np.convolve(np.where(f2 > 0, f2, 1500), kernel, mode="same")

    x = np.zeros(n)
    nyq_limit = 0.45 * sample_rate
    for h in range(1, int(nyq_limit / (f0 * 0.8)) + 1):
        fh = h * f0_t
        amp = (
            np.exp(-0.5 * ((fh - f1) / 90.0) ** 2)
            + 0.6 * np.exp(-0.5 * ((fh - f2) / 120.0) ** 2)
            + 0.08 / h
        )
        amp = np.where(fh < nyq_limit, amp, 0.0)
        x += amp * np.sin(h * phase)
    x *= env
    x += 0.01 * rng.normal(size=n) * env
    fade = min(160, n // 2)
    ramp = np.linspace(0, 1, fade)
    x[:fade] *= ramp
    x[n - fade :] *= ramp[::-1]
    rms = np.sqrt(np.mean(x**2))
    return x / rms if rms > 0 else x


# ---------------------------------------------------------------- rendering


def render_plane_wave(signal, geom, azimuth, num_samples, onset=0, sample_rate=16000, pad=256):
    """Place ``signal`` at sample ``onset`` and propagate it to every mic.

    Returns (mics, num_samples). Delays are relative to the reference mic and
    applied in the frequency domain over the active span plus ``pad`` zeros
    on each side, which absorbs the fractional-delay tails. With ``pad=None``
    the delay is circular over the whole scene, so the scene's DFT equals the
    source DFT times the steering phase exactly.
    """
    out = np.zeros((geom.num_mics, num_samples))
    end = min(num_samples, onset + len(signal))
    if end <= onset:
        return out
    if pad is None:
        lo, hi, pad, n = 0, num_samples, 0, num_samples
    else:
        lo, hi = max(0, onset - pad), min(num_samples, end + pad)
        n = next_fast_len(hi - lo + 2 * pad)
    x = np.zeros(n)
    x[pad + onset - lo : pad + end - lo] = signal[: end - onset]
    X = np.fft.rfft(x)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    tau = geom.delays(azimuth)
    y = np.fft.irfft(X[None, :] * np.exp(-2j * np.pi * f[None, :] * tau[:, None]), n=n, axis=-1)
    out[:, lo:hi] = y[:, pad : pad + hi - lo]
    out[geom.reference_index, :] = 0.0
    out[geom.reference_index, onset:end] = signal[: end - onset]
    return out


def diffuse_noise(geom, num_samples, rms=1.0, sample_rate=16000, rng=None, block=16384):
    """Spherically diffuse noise with per-mic RMS ``rms``, shape (mics, samples)."""
    rng = np.random.default_rng(rng)
    M = geom.num_mics
    white = rng.normal(size=(M, num_samples))
    W = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(num_samples, 1.0 / sample_rate)
    d = geom.distances()
    eye = 1e-9 * np.eye(M)
    for lo in range(0, freqs.size, block):
        f = freqs[lo : lo + block]
        gamma = np.sinc(2.0 * f[:, None, None] * d[None] / geom.speed_of_sound) + eye
        L = np.linalg.cholesky(gamma)
        W[:, lo : lo + block] = np.einsum("fmn,nf->mf", L, W[:, lo : lo + block])
    out = np.fft.irfft(W, n=num_samples, axis=-1)
    return out * (rms / np.sqrt(np.mean(out**2)))


def synthesize(scenario):
    """Render a scenario; returns ``(mixture (mics, samples), GroundTruth)``."""
    geom = scenario.geometry
    sr = scenario.sample_rate
    N = int(round(scenario.duration * sr))
    speakers = sorted({s.speaker for s in scenario.sources})
    index = {spk: i for i, spk in enumerate(speakers)}
    images = np.zeros((max(1, len(speakers)), geom.num_mics, N))
    seen = set()
    utterances = []
    for s in scenario.sources:
        key = (s.speaker, round(s.azimuth, 6))
        if any(k[1] == key[1] and k[0] != key[0] for k in seen):
            log.warning("distinct speakers share azimuth %.1f", s.azimuth)
        seen.add(key)
        onset = int(round(s.onset * sr))
        sig = np.asarray(s.signal, dtype=float)
        active = sig[np.abs(sig) > 0]
        rms = np.sqrt(np.mean(active**2)) if active.size else 1.0
        sig = sig * (10 ** (s.level_db / 20) / rms)
        img = render_plane_wave(sig, geom, s.azimuth, N, onset, sr)
        images[index[s.speaker]] += img
        end = min(N, onset + len(sig))
        utterances.append(
            Utterance(index[s.speaker], s.azimuth, onset, end, img[geom.reference_index, onset:end].copy())
        )
    if scenario.noise_db is None:
        noise = np.zeros((geom.num_mics, N))
    else:
        rng = np.random.default_rng([scenario.seed, 7])
        noise = diffuse_noise(geom, N, 10 ** (scenario.noise_db / 20), sr, rng)
    mix = images.sum(axis=0) + noise
    utterances.sort(key=lambda u: (u.start, u.speaker))
    return mix, GroundTruth(images, noise, utterances, geom.reference_index, sr)


# ---------------------------------------------------------------- scenes


def two_speaker_scenario(angles=(40.0, 160.0), duration=6.0, onset=1.0, length=None,
                         level_db=-26.0, noise_db=None, seed=0, geometry=None):
    """Two equal-level, fully overlapping utterances (0 dB mixture)."""
    length = length or duration - onset - 0.5
    sources = [
        Source(speech_like(length, f0=f0, seed=seed * 10 + i), az, onset, level_db, i)
        for i, (az, f0) in enumerate(zip(angles, (115.0, 205.0)))
    ]
    return Scenario(sources, duration, noise_db, geometry or default_geometry(), seed)


def meeting_scenario(duration=60.0, angles=((30.0,), (150.0,)), level_db=-26.0,
                     noise_db=-56.0, seed=0, geometry=None, gap=(-0.8, 0.5),
                     length=(1.5, 4.0)):
    """Alternating, partially overlapping utterances from two speaker streams.

    ``angles[s]`` lists the positions speaker stream ``s`` cycles through, one
    per utterance. ``gap`` bounds the offset between the end of one utterance
    and the start of the next (negative means overlap).
    """
    rng = np.random.default_rng(seed)
    f0s = (115.0, 205.0)
    sources = []
    t = 0.5
    last_end = [0.0, 0.0]
    spk = 0
    count = [0, 0]
    while True:
        dur = rng.uniform(*length)
        start = max(t, last_end[spk] + 0.2)
        if start + dur > duration - 0.5:
            break
        az = angles[spk][count[spk] % len(angles[spk])]
        sig = speech_like(dur, f0=f0s[spk] * rng.uniform(0.9, 1.1), seed=int(rng.integers(1 << 31)))
        sources.append(Source(sig, az, start, level_db, spk))
        count[spk] += 1
        last_end[spk] = start + dur
        t = start + dur + rng.uniform(*gap)
        spk = 1 - spk
    return Scenario(sources, duration, noise_db, geometry or default_geometry(), seed)


def read_scenario(path, geometry=None):
    """Parse a scenario file.

    ``key = value`` lines set ``duration``, ``noise_db``, ``seed`` and
    ``sample_rate``. Other lines describe one source each:
    ``path angle onset level [speaker]``. A path of the form ``synth:F0``
    generates a speech-like signal with fundamental ``F0`` Hz.
    """
    from .audio_io import read_wav

    opts, rows = {}, []
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                opts[k] = v
                continue
            parts = line.replace(",", " ").split()
            if len(parts) not in (4, 5):
                raise ValueError(f"bad source line: {raw.rstrip()!r}")
            rows.append(parts)
    seed = int(opts.get("seed", 0))
    sr = int(opts.get("sample_rate", 16000))
    sources = []
    for i, parts in enumerate(rows):
        src, angle, onset, level = parts[0], float(parts[1]), float(parts[2]), float(parts[3])
        speaker = int(parts[4]) if len(parts) == 5 else i
        if src.startswith("synth:"):
            f0 = float(src.split(":", 1)[1])
            sig = speech_like(float(opts.get("utterance_length", 3.0)), sr, f0, seed * 1000 + i)
        else:
            file = src if os.path.isabs(src) else os.path.join(base, src)
            rate, data = read_wav(file)
            if rate != sr:
                raise ValueError(f"{file}: sample rate {rate} != {sr}")
            sig = data[0] if data.ndim == 2 else data
        sources.append(Source(sig, angle, onset, level, speaker))
    if "duration" in opts:
        duration = float(opts["duration"])
    else:
        duration = max(s.onset + len(s.signal) / sr for s in sources) + 0.5
    noise = opts.get("noise_db")
    noise_db = None if noise in (None, "none", "") else float(noise)
    return Scenario(sources, duration, noise_db, geometry or default_geometry(), seed, sr)


# ---------------------------------------------------------------- metrics


def si_sdr(estimate, reference):
    """Scale-invariant SDR in dB, capped at +100 dB."""
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.shape != ref.shape:
        raise ValueError("estimate and reference lengths differ")
    energy = np.dot(ref, ref)
    if energy <= 0:
        raise ValueError("reference is silent")
    target = (np.dot(est, ref) / energy) * ref
    residual = est - target
    num, den = np.dot(target, target), np.dot(residual, residual)
    if den == 0 or num >= den * 10 ** (SI_SDR_CAP / 10):
        return SI_SDR_CAP
    if num == 0:
        return -SI_SDR_CAP
    return float(10 * np.log10(num / den))


def captured_energy(outputs, utterance):
    """Energy of each output's projection onto the utterance's clean reference."""
    r = utterance.reference
    rr = np.dot(r, r)
    seg = np.asarray(outputs)[:, utterance.start : utterance.end]
    if rr <= 0:
        return np.zeros(seg.shape[0])
    return (seg @ r) ** 2 / rr


def channel_purity(outputs, truth):
    """Per-utterance share of captured energy in the dominant output channel.

    ``outputs`` must be latency-aligned with the mixture.
    """
    out = []
    for u in truth.utterances:
        e = captured_energy(outputs, u)
        total = e.sum()
        out.append(float(e.max() / total) if total > 0 else 0.0)
    return out


def dominant_channels(outputs, truth):
    return [int(np.argmax(captured_energy(outputs, u))) for u in truth.utterances]


def si_sdr_improvements(outputs, mixture_ref, truth, min_length=1600):
    """Per-utterance SI-SDR of the dominant output minus that of the mixture."""
    rows = []
    for u, ch in zip(truth.utterances, dominant_channels(outputs, truth)):
        if u.end - u.start < min_length:
            continue
        est = np.asarray(outputs)[ch, u.start : u.end]
        base = np.asarray(mixture_ref)[u.start : u.end]
        rows.append((si_sdr(est, u.reference), si_sdr(base, u.reference)))
    return rows


def angular_errors(track_angles, truth_angles):
    """Circular error between per-frame estimates and truth, NaN where truth is NaN."""
    return np.where(np.isnan(truth_angles), np.nan, circular_distance(track_angles, truth_angles))

