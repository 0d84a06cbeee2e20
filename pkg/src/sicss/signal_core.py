"""Short-time Fourier analysis and synthesis.

Frames start at sample 0 with no padding; frame ``t`` covers samples
``[t * shift, t * shift + length)``. Spectra are one-sided.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COLA_TOL = 1e-9


class COLAError(ValueError):
    """Analysis/synthesis window pair does not overlap-add to a constant."""


def _sqrt_hann(n):
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n))


def _hann(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def window_pair(window, frame_length):
    """Resolve a window descriptor to ``(analysis, synthesis)`` arrays.

    ``window`` is either a name (``"sqrt_hann"``, ``"hann"``, ``"rect"``) or an
    explicit pair of arrays.
    """
    if isinstance(window, str):
        if window == "sqrt_hann":
            w = _sqrt_hann(frame_length)
            return w, w.copy()
        if window == "hann":
            return _hann(frame_length), np.ones(frame_length)
        if window == "rect":
            return np.ones(frame_length), np.ones(frame_length)
        raise ValueError(f"unknown window {window!r}")
    analysis, synthesis = (np.asarray(w, dtype=float) for w in window)
    if analysis.shape != (frame_length,) or synthesis.shape != (frame_length,):
        raise ValueError("window arrays must have length frame_length")
    return analysis, synthesis


@dataclass(frozen=True)
class FrameConfig:
    sample_rate: int = 16000
    frame_shift: int = 256
    frame_length: int = 512
    window: object = "sqrt_hann"

    def __post_init__(self):
        if self.frame_shift <= 0 or self.frame_length <= 0:
            raise ValueError("frame_shift and frame_length must be positive")
        if self.frame_length % self.frame_shift:
            raise ValueError("frame_shift must divide frame_length")

    @property
    def num_bins(self):
        return self.frame_length // 2 + 1

    @property
    def shift_seconds(self):
        return self.frame_shift / self.sample_rate

    def bin_frequencies(self):
        return np.arange(self.num_bins) * self.sample_rate / self.frame_length

    def windows(self):
        return window_pair(self.window, self.frame_length)

    def num_frames(self, num_samples):
        if num_samples < self.frame_length:
            return 0
        return (num_samples - self.frame_length) // self.frame_shift + 1

    def ola_gain(self):
        """Per-position overlap-add sum of ``analysis * synthesis``.

        Returns an array of length ``frame_shift``; the pair is COLA when it is
        constant.
        """
        analysis, synthesis = self.windows()
        prod = analysis * synthesis
        return prod.reshape(-1, self.frame_shift).sum(axis=0)

    def check_cola(self):
        gain = self.ola_gain()
        if gain.mean() <= 0 or np.max(np.abs(gain - gain.mean())) > COLA_TOL:
            raise COLAError(
                f"window pair is not COLA at shift {self.frame_shift} "
                f"(overlap-add gain range {gain.min():.3g}..{gain.max():.3g})"
            )
        return float(gain.mean())


@dataclass
class MultiChannelSpectrogram:
    """Complex STFT data indexed ``(channel, frame, bin)``."""

    data: np.ndarray
    config: FrameConfig = field(default_factory=FrameConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim == 2:
            self.data = self.data[np.newaxis]
        if self.data.ndim != 3:
            raise ValueError("spectrogram data must be (channel, frame, bin)")
        if self.data.shape[2] != self.config.num_bins:
            raise ValueError(
                f"expected {self.config.num_bins} bins, got {self.data.shape[2]}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def num_channels(self):
        return self.data.shape[0]

    @property
    def num_frames(self):
        return self.data.shape[1]

    @property
    def num_bins(self):
        return self.data.shape[2]

    def channel(self, index):
        return MultiChannelSpectrogram(self.data[index : index + 1], self.config)

    def frames(self, start, stop):
        return MultiChannelSpectrogram(self.data[:, start:stop], self.config)


def _as_channels(samples):
    if isinstance(samples, (list, tuple)):
        lengths = {len(np.asarray(s)) for s in samples}
        if len(lengths) > 1:
            raise ValueError(f"channel length mismatch: {sorted(lengths)}")
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[np.newaxis]
    if x.ndim != 2:
        raise ValueError("samples must be (channels, samples)")
    if x.size == 0:
        raise ValueError("empty input")
    return x


def frame_signal(x, config):
    """Return a strided ``(channel, frame, frame_length)`` view of ``x``."""
    n = config.num_frames(x.shape[-1])
    view = np.lib.stride_tricks.sliding_window_view(x, config.frame_length, axis=-1)
    return view[..., : n * config.frame_shift : config.frame_shift, :][:, :n]


def stft(samples, config=None):
    """Analyse per-channel real signals into a :class:`MultiChannelSpectrogram`."""
    config = config or FrameConfig()
    x = _as_channels(samples)
    if x.shape[1] < config.frame_length:
        raise ValueError(
            f"input shorter than one frame ({x.shape[1]} < {config.frame_length})"
        )
    analysis, _ = config.windows()
    frames = frame_signal(x, config) * analysis
    return MultiChannelSpectrogram(np.fft.rfft(frames, axis=-1), config)


def istft(spec, config=None, length=None):
    """Overlap-add synthesis of a single-channel spectrogram.

    ``spec`` may be a :class:`MultiChannelSpectrogram` with one channel or a
    ``(frame, bin)`` array. Output length is ``(frames - 1) * shift + length``
    unless ``length`` is given.
    """
    if isinstance(spec, MultiChannelSpectrogram):
        config = config or spec.config
        data = spec.data
        if data.shape[0] != 1:
            raise ValueError("istft expects a single-channel spectrogram")
        data = data[0]
    else:
        config = config or FrameConfig()
        data = np.asarray(spec)
    gain = config.check_cola()
    _, synthesis = config.windows()
    frames = np.fft.irfft(data, n=config.frame_length, axis=-1) * (synthesis / gain)
    num_frames = frames.shape[0]
    total = (num_frames - 1) * config.frame_shift + config.frame_length if num_frames else 0
    out = np.zeros(max(total, length or 0))
    hop, n = config.frame_shift, config.frame_length
    # overlap-add in frame_length/frame_shift interleaved passes
    k = n // hop
    for j in range(k):
        seg = frames[:, j * hop : (j + 1) * hop]
        start = j * hop
        out[start : start + num_frames * hop] += seg.reshape(-1)
    if length is not None:
        out = out[:length]
    return out


def reconstruction_interior(config, num_samples):
    """Sample range ``[start, stop)`` fully covered by overlapping frames."""
    n = config.num_frames(num_samples)
    start = config.frame_length - config.frame_shift
    stop = (n - 1) * config.frame_shift + config.frame_shift
    return start, max(start, stop)


class StreamingSTFT:
    """Causal analysis: buffers samples and yields complete frames.

    Tail samples shorter than one frame stay in the buffer and are dropped at
    end of stream.
    """

    def __init__(self, num_channels, config=None):
        self.config = config or FrameConfig()
        self.num_channels = num_channels
        self._analysis, _ = self.config.windows()
        self._buffer = np.zeros((num_channels, 0))
        self.frames_emitted = 0

    def push(self, samples):
        """Append samples ``(channels, n)``; return new frames ``(channels, k, bins)``."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[np.newaxis]
        if samples.shape[0] != self.num_channels:
            raise ValueError(
                f"expected {self.num_channels} channels, got {samples.shape[0]}"
            )
        self._buffer = np.concatenate([self._buffer, samples], axis=1)
        n = self.config.num_frames(self._buffer.shape[1])
        if n == 0:
            return np.zeros((self.num_channels, 0, self.config.num_bins), complex)
        frames = frame_signal(self._buffer, self.config)[:, :n] * self._analysis
        self._buffer = self._buffer[:, n * self.config.frame_shift :]
        self.frames_emitted += n
        return np.fft.rfft(frames, axis=-1)


class StreamingISTFT:
    """Causal overlap-add synthesis.

    After frame ``k`` is pushed, output samples ``[k * shift, (k + 1) * shift)``
    are final and returned.
    """

    def __init__(self, config=None):
        self.config = config or FrameConfig()
        self._gain = self.config.check_cola()
        _, self._synthesis = self.config.windows()
        self._acc = np.zeros(self.config.frame_length)

    def push(self, spectrum):
        hop = self.config.frame_shift
        frame = np.fft.irfft(spectrum, n=self.config.frame_length)
        self._acc += frame * (self._synthesis / self._gain)
        out = self._acc[:hop].copy()
        self._acc = np.concatenate([self._acc[hop:], np.zeros(hop)])
        return out

    def flush(self):
        out = self._acc[: self.config.frame_length - self.config.frame_shift].copy()
        self._acc[:] = 0.0
        return out
