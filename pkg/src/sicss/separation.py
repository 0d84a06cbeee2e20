"""Masks, mask estimators, PIT loss and the double-buffer stitcher.

A mask estimator is fed :class:`~sicss.features.FeatureFrame` objects one
at a time and returns masks for frame ``t - lookahead`` when frame ``t``
arrives. The stitcher runs two staggered estimator instances and fixes the
channel order of each new buffer on the region it shares with the previous
one.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import circular_distance

DEFAULT_BUFFER_LENGTH = 150  # 2.4 s at a 16 ms shift
DEFAULT_LOOKAHEAD = 4
IDENTITY = (0, 1)
SWAP = (1, 0)


class LookaheadViolation(RuntimeError):
    """A stage needed data beyond its declared look-ahead."""

    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class MaskSet:
    """Two speech masks ``(2, frames, bins)`` and one noise mask ``(frames, bins)``."""

    speech: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        self.speech = np.asarray(self.speech, dtype=float)
        self.noise = np.asarray(self.noise, dtype=float)
        if self.speech.ndim != 3 or self.speech.shape[0] != 2:
            raise ValueError("speech masks must be (2, frames, bins)")
        if self.noise.shape != self.speech.shape[1:]:
            raise ValueError("noise mask shape differs from speech masks")
        for m in (self.speech, self.noise):
            if m.size and (m.min() < 0.0 or m.max() > 1.0 or not np.all(np.isfinite(m))):
                raise ValueError("mask values must lie in [0, 1]")

    @property
    def num_frames(self):
        return self.speech.shape[1]

    def frames(self, start, stop):
        return MaskSet(self.speech[:, start:stop], self.noise[start:stop])

    def permuted(self, perm):
        return MaskSet(self.speech[list(perm)], self.noise)

    def frame(self, t):
        return MaskFrame(self.speech[:, t], self.noise[t], t)

    @classmethod
    def from_frames(cls, frames, num_bins=None):
        if not frames:
            F = num_bins or 0
            return cls(np.zeros((2, 0, F)), np.zeros((0, F)))
        return cls(
            np.stack([f.speech for f in frames], axis=1),
            np.stack([f.noise for f in frames]),
        )


@dataclass
class MaskFrame:
    speech: np.ndarray  # (2, bins)
    noise: np.ndarray  # (bins,)
    frame_index: int


def _as_tf(spec):
    data = getattr(spec, "data", spec)
    data = np.asarray(data)
    if data.ndim == 3:
        if data.shape[0] != 1:
            raise ValueError("expected a single-channel spectrogram")
        data = data[0]
    return data


def oracle_masks(source_specs, noise_spec, mixture_spec, eps_den=1e-10):
    """Magnitude ratio masks from known sources.

    ``source_specs`` holds up to two reference-channel spectrograms; a missing
    second source yields an all-zero mask.
    """
    mix = _as_tf(mixture_spec)
    sources = [np.abs(_as_tf(s)) for s in source_specs]
    if len(sources) > 2:
        raise ValueError("at most two speech sources")
    noise = np.zeros(mix.shape) if noise_spec is None else np.abs(_as_tf(noise_spec))
    for arr in sources + [noise]:
        if arr.shape != mix.shape:
            raise ValueError(f"shape mismatch: {arr.shape} vs {mix.shape}")
    while len(sources) < 2:
        sources.append(np.zeros(mix.shape))
    den = sources[0] + sources[1] + noise + eps_den
    live = den >= 2 * eps_den
    speech = np.stack([np.where(live, s / den, 0.0) for s in sources])
    return MaskSet(speech, np.where(live, noise / den, 0.0))


def pit_mse_loss(estimated, references):
    """Permutation-invariant MSE.

    Returns ``(loss, perm)`` where ``loss`` is the mean over outputs of
    ``MSE(estimated[i], references[perm[i]])`` minimized over permutations;
    ties resolve to the lexicographically smallest ``perm``.
    """
    est = np.asarray(estimated, dtype=float)
    ref = np.asarray(references, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    K = est.shape[0]
    if K < 1:
        raise ValueError("need at least one output")
    cost = np.empty((K, K))
    for i in range(K):
        for j in range(K):
            cost[i, j] = np.mean((est[i] - ref[j]) ** 2)
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(K)):
        total = 0.0
        for i in range(K):
            total += cost[i, perm[i]]
        loss = total / K
        if loss < best:
            best, best_perm = loss, perm
    return float(best), best_perm


def lookahead_frames(layer_lookaheads):
    """Total look-ahead of stacked layers; per-layer look-aheads add up."""
    total = 0
    for n in layer_lookaheads:
        if n < 0:
            raise ValueError("look-ahead must be non-negative")
        total += int(n)
    return total


def align_permutation(prev_tail, cur_head, ref_magnitude):
    """Order of ``cur_head``'s speech channels that best matches ``prev_tail``.

    Compares masked reference magnitudes; an exact tie keeps the identity.
    """
    if prev_tail.num_frames == 0:
        raise ValueError("empty overlap")
    if cur_head.num_frames != prev_tail.num_frames:
        raise ValueError("overlap frame counts differ")
    R = np.asarray(ref_magnitude, dtype=float)
    prev = [prev_tail.speech[i] * R for i in range(2)]
    cur = [cur_head.speech[i] * R for i in range(2)]
    same = np.mean((cur[0] - prev[0]) ** 2) + np.mean((cur[1] - prev[1]) ** 2)
    swapped = np.mean((cur[1] - prev[0]) ** 2) + np.mean((cur[0] - prev[1]) ** 2)
    return SWAP if swapped < same else IDENTITY


# ---------------------------------------------------------------- estimators


class MaskEstimator:
    """Streaming estimator base.

    Subclasses implement :meth:`_masks_for` which may read buffered feature
    frames up to ``k + lookahead``.
    """

    lookahead = 0

    def __init__(self):
        self.reset()

    def reset(self):
        self._frames = deque()
        self._next = None
        self._last = None

    def push(self, frame):
        t = frame.frame_index
        if self._next is None:
            self._next = t
        self._frames.append(frame)
        self._last = t
        out = []
        while self._next <= t - self.lookahead:
            out.append(self._emit(self._next))
        return out

    def flush(self):
        out = []
        while self._last is not None and self._next <= self._last:
            out.append(self._emit(self._next))
        return out

    def _emit(self, k):
        mf = self._masks_for(k, self._frames)
        self._next = k + 1
        while self._frames and self._frames[0].frame_index < k - self.history:
            self._frames.popleft()
        return mf

    history = 0

    def _masks_for(self, k, frames):
        raise NotImplementedError


class OracleEstimator(MaskEstimator):
    """Replays a precomputed :class:`MaskSet` with a declared look-ahead."""

    def __init__(self, masks, lookahead=DEFAULT_LOOKAHEAD, swap=False):
        self.masks = masks
        self.lookahead = lookahead
        self.swap = swap
        super().__init__()

    def _masks_for(self, k, frames):
        mf = self.masks.frame(k)
        if self.swap:
            mf = MaskFrame(mf.speech[::-1].copy(), mf.noise, k)
        return mf


def oracle_factory(masks, lookahead=DEFAULT_LOOKAHEAD):
    def make(buffer_index):
        return OracleEstimator(masks, lookahead)

    make.lookahead = lookahead
    return make


def adversarial_factory(masks, lookahead=DEFAULT_LOOKAHEAD):
    """Oracle masks with the channel order flipped on every other buffer."""

    def make(buffer_index):
        return OracleEstimator(masks, lookahead, swap=bool(buffer_index % 2))

    make.lookahead = lookahead
    return make


class BaselineEstimator(MaskEstimator):
    """Direction-dominance masks without ground truth.

    Per bin, the IPD-derived observation is compared against the steering
    vectors of the grid. A decaying energy-weighted histogram of per-bin
    best directions (fed through the look-ahead frame) yields two dominant
    directions; each bin is softly assigned to the closer of the two.
    """

    def __init__(self, table, ref=0, lookahead=DEFAULT_LOOKAHEAD, decay=0.97,
                 sharpness=8.0, min_separation=30.0, floor_db=-60.0):
        self.table = table
        self.ref = ref
        self.lookahead = lookahead
        self.history = 0
        self.decay = decay
        self.sharpness = sharpness
        self.min_separation = min_separation
        self.floor_db = floor_db
        super().__init__()

    def reset(self):
        super().reset()
        self._hist = np.zeros(self.table.num_angles)
        self._power = {}

    def push(self, frame):
        from . import kernels
        from .features import observation_from_ipd

        M = self.table.geometry.num_mics
        z = observation_from_ipd(frame, self.ref, M)
        power = kernels.projection_power(z[None], self.table.vectors)[0]  # (A, F)
        self._power[frame.frame_index] = power
        energy = frame.ref_magnitude**2
        best = np.argmax(power, axis=0)
        self._hist *= self.decay
        np.add.at(self._hist, best, np.log1p(energy / (energy.mean() + 1e-12)))
        return super().push(frame)

    def _directions(self):
        grid = self.table.angle_grid
        # circular smoothing over +-1 grid step
        h = self._hist + 0.5 * (np.roll(self._hist, 1) + np.roll(self._hist, -1))
        first = int(np.argmax(h))
        far = circular_distance(grid, grid[first]) >= self.min_separation
        second = int(np.flatnonzero(far)[np.argmax(h[far])]) if far.any() else first
        return first, second

    def _masks_for(self, k, frames):
        frame = next(f for f in frames if f.frame_index == k)
        power = self._power.pop(k)
        a, b = self._directions()
        pa, pb = power[a] ** self.sharpness, power[b] ** self.sharpness
        share = pa / np.maximum(pa + pb, 1e-300)
        level = 20 * np.log10(frame.ref_magnitude + 1e-12)
        peak = level.max()
        presence = np.clip((level - max(peak - 40.0, self.floor_db)) / 20.0, 0.0, 1.0)
        speech = np.stack([share * presence, (1.0 - share) * presence])
        noise = 1.0 - presence
        return MaskFrame(speech, noise, k)


def baseline_factory(table, ref=0, lookahead=DEFAULT_LOOKAHEAD, **kwargs):
    def make(buffer_index):
        return BaselineEstimator(table, ref, lookahead, **kwargs)

    make.lookahead = lookahead
    return make


# ---------------------------------------------------------------- stitching


class _Buffer:
    def __init__(self, index, start, estimator):
        self.index = index
        self.start = start
        self.estimator = estimator
        self.masks = {}
        self.perm = None


class DoubleBufferStitcher:
    """Continuous masks from staggered, periodically reset estimators.

    Buffer ``k`` starts at frame ``k * half`` with a fresh estimator and
    covers ``buffer_length`` frames. Buffer 0 emits all of its frames; later
    buffers emit only their second half, in the channel order that best
    matches the already emitted first half. Frame ``t - lookahead`` is emitted
    when frame ``t`` is pushed.
    """

    def __init__(self, factory, lookahead=None, buffer_length=DEFAULT_BUFFER_LENGTH):
        if buffer_length < 2 or buffer_length % 2:
            raise ValueError("buffer_length must be even and >= 2")
        self.factory = factory
        self.lookahead = getattr(factory, "lookahead", 0) if lookahead is None else lookahead
        self.buffer_length = buffer_length
        self.half = buffer_length // 2
        self._buffers = {}
        self._aligned = {}
        self._ref = {}
        self._next_emit = 0
        self._last = -1
        self.permutations = {0: IDENTITY}

    def _owner(self, e):
        return 0 if e < self.buffer_length else e // self.half - 1

    def _feed(self, buf, produced):
        for mf in produced:
            if buf.start <= mf.frame_index < buf.start + self.buffer_length:
                buf.masks[mf.frame_index] = mf

    def push(self, frame):
        t = frame.frame_index
        if t != self._last + 1:
            raise ValueError(f"expected frame {self._last + 1}, got {t}")
        self._last = t
        self._ref[t] = frame.ref_magnitude
        if t % self.half == 0:
            k = t // self.half
            est = self.factory(k)
            est.reset()
            self._buffers[k] = _Buffer(k, t, est)
        for buf in self._buffers.values():
            if t < buf.start + self.buffer_length + self.lookahead:
                self._feed(buf, buf.estimator.push(frame))
        out = []
        e = t - self.lookahead
        if e >= self._next_emit:
            out.append(self._emit(e))
        return out

    def flush(self):
        for buf in self._buffers.values():
            self._feed(buf, buf.estimator.flush())
        out = []
        while self._next_emit <= self._last:
            out.append(self._emit(self._next_emit))
        return out

    def _emit(self, e):
        k = self._owner(e)
        buf = self._buffers[k]
        if buf.perm is None:
            buf.perm = IDENTITY if k == 0 else self._fix_permutation(buf)
            self.permutations[k] = buf.perm
        mf = buf.masks.get(e)
        if mf is None:
            raise LookaheadViolation(
                "separation",
                f"buffer {k} has no mask for frame {e} after frame {self._last} "
                f"(declared look-ahead {self.lookahead})",
            )
        aligned = MaskFrame(mf.speech[list(buf.perm)], mf.noise, e)
        self._aligned[e] = aligned
        self._next_emit = e + 1
        self._prune(e)
        return aligned

    def _fix_permutation(self, buf):
        lo, hi = buf.start, buf.start + self.half
        try:
            cur = [buf.masks[i] for i in range(lo, hi)]
            prev = [self._aligned[i] for i in range(lo, hi)]
        except KeyError as exc:
            raise LookaheadViolation(
                "separation",
                f"overlap frame {exc.args[0]} of buffer {buf.index} unavailable",
            ) from None
        ref = np.stack([self._ref[i] for i in range(lo, hi)])
        return align_permutation(MaskSet.from_frames(prev), MaskSet.from_frames(cur), ref)

    def _prune(self, e):
        keep_from = e - self.half
        for d in (self._aligned, self._ref):
            for i in [i for i in d if i < keep_from]:
                del d[i]
        for k in [k for k in self._buffers if k < self._owner(e)]:
            del self._buffers[k]


def stitch_stream(factory, features, lookahead=None, buffer_length=DEFAULT_BUFFER_LENGTH):
    """Run the stitcher over a whole feature sequence; returns ``(MaskSet, perms)``."""
    stitcher = DoubleBufferStitcher(factory, lookahead, buffer_length)
    frames = []
    for f in features:
        frames.extend(stitcher.push(f))
    frames.extend(stitcher.flush())
    num_bins = features[0].ref_magnitude.shape[0] if features else None
    return MaskSet.from_frames(frames, num_bins), dict(stitcher.permutations)
