"""Mask-weighted maximum-likelihood localization under a cACG model.

Each unit-norm observation ``z`` is modelled as complex angular central
Gaussian with shape matrix ``B = h h^H + eps I`` for steering vector ``h``.
For unit-norm ``h`` the weighted log likelihood reduces, up to an affine map,
to ``-sum m log(1 - |z^H h|^2 / (1 + eps))``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .features import normalized_observations

_TINY = 1e-300


@dataclass(frozen=True)
class SslSchedule:
    window: int = 50  # N_W, frames per likelihood window
    stride: int = 10  # N_S, frames between decisions
    margin: int = 20  # N_M, frames of future context per decision
    epsilon: float = 1e-3

    def __post_init__(self):
        if not self.window >= self.stride >= 1:
            raise ValueError("schedule requires window >= stride >= 1")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def is_decision_frame(self, n):
        return n >= self.window and n % self.stride == 0

    def window_frames(self, n):
        """Frames ``(n - window, n]`` as a half-open ``range``."""
        return range(n - self.window + 1, n + 1)

    def governed_frames(self, n):
        """Frames ``(n - margin - stride, n - margin]`` governed by decision ``n``."""
        return range(n - self.margin - self.stride + 1, n - self.margin + 1)


def _check_eps(epsilon):
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")


def _prepare(spec, masks):
    X = np.asarray(getattr(spec, "data", spec))
    Z = normalized_observations(X)  # (T, F, M)
    m = np.asarray(masks, dtype=float)
    if m.shape != Z.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match observations {Z.shape[:2]}")
    return Z, m


def cacg_log_likelihood(spec, masks, table, epsilon):
    """Score ``L(w) = -sum_{t,f} m log(1 - |z^H h_w|^2 / (1 + eps))`` per grid angle.

    ``spec`` is (channels, frames, bins) or a spectrogram; ``masks`` is
    (frames, bins). Zero-energy bins contribute nothing.
    """
    _check_eps(epsilon)
    Z, m = _prepare(spec, masks)
    terms = kernels.cacg_log_terms(Z, table.vectors, epsilon)  # (T, A, F)
    return np.einsum("tf,taf->a", m, terms)


def cacg_constant(M, epsilon):
    """Offset ``C`` in ``L2 = C * sum(m) + M * L``."""
    return (
        math.log(0.5) - M * math.log(math.pi) + math.lgamma(M)
        - ((M - 1) * math.log(epsilon) + math.log1p(epsilon))
        - M * math.log(1.0 / epsilon)
    )


def cacg_log_likelihood_direct(spec, masks, table, epsilon, method="closed_form"):
    """Weighted log likelihood ``sum m log p(z | w)`` from the cACG density.

    ``method="closed_form"`` uses ``|B| = eps^(M-1) (1 + eps)`` and
    ``z^H B^-1 z = (1 - |z^H h|^2 / (1 + eps)) / eps``; ``method="dense"``
    builds each ``B`` and uses a log-determinant and linear solve. Zero-energy
    bins are excluded.
    """
    _check_eps(epsilon)
    Z, m = _prepare(spec, masks)
    H = table.vectors  # (A, F, M)
    M = Z.shape[-1]
    live = np.sum(np.abs(Z) ** 2, axis=-1) > _TINY  # (T, F)
    log_norm = math.log(0.5) - M * math.log(math.pi) + math.lgamma(M)
    if method == "closed_form":
        logdet = np.full(H.shape[:2], (M - 1) * math.log(epsilon) + math.log1p(epsilon))
        power = kernels.projection_power(Z, H)  # (T, A, F)
        quad = (1.0 - power / (1.0 + epsilon)) / epsilon
    elif method == "dense":
        B = H[..., :, None] * H[..., None, :].conj() + epsilon * np.eye(M)
        sign, logdet = np.linalg.slogdet(B)  # (A, F)
        Binv = np.linalg.inv(B)
        quad = np.einsum("tfm,afmn,tfn->taf", Z.conj(), Binv, Z).real
    else:
        raise ValueError(f"unknown method {method!r}")
    with np.errstate(divide="ignore"):
        logp = log_norm - logdet[None] - M * np.log(quad)
    logp = np.where(live[:, None, :], logp, 0.0)
    return np.einsum("tf,taf->a", m, logp)


# ---------------------------------------------------------------- tracking


@dataclass
class Decision:
    frame: int  # decision frame n
    interval: tuple  # (start, end]: frames governed under the interval mapping
    angles: np.ndarray  # (2,) degrees, one per speech mask
    scores: np.ndarray  # (2, A)
    confident: np.ndarray  # (2,) bool

    @property
    def target_angle(self):
        return float(self.angles[0])

    @property
    def interference_angle(self):
        return float(self.angles[1])


@dataclass
class DirectionTrack:
    """Decisions in frame order; each governs ``(n - N_M - N_S, n - N_M]``."""

    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def angles_at(self, frame):
        """Angles for one frame; frames outside the covered range clamp to the ends."""
        if not self.entries:
            return None
        for e in self.entries:
            if frame <= e.interval[1]:
                return e.angles
        return self.entries[-1].angles

    def per_frame(self, num_frames):
        """(frames, 2) angle array under the interval mapping."""
        out = np.full((num_frames, 2), np.nan)
        if not self.entries:
            return out
        pos = 0
        for e in self.entries:
            end = min(e.interval[1] + 1, num_frames)
            if end > pos:
                out[pos:end] = e.angles
                pos = end
        out[pos:] = self.entries[-1].angles
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["interval_start", "interval_end", "target_deg", "interference_deg"])
            for e in self.entries:
                w.writerow([e.interval[0], e.interval[1], f"{e.angles[0]:g}", f"{e.angles[1]:g}"])

    @staticmethod
    def read_csv(path):
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append(
                    (int(row["interval_start"]), int(row["interval_end"]),
                     float(row["target_deg"]), float(row["interference_deg"]))
                )
        return rows


class StreamingLocalizer:
    """Windowed SSL fed one spectrogram frame and one mask frame at a time.

    Per-frame log terms are computed once on arrival and reused by every
    window that contains the frame. A decision is taken when masks for a
    decision frame arrive. A flat score (``max - min`` within ``1e-6`` times
    the window's mask mass) marks that angle low-confidence and the previous
    angle is held.
    """

    flatness = 1e-6

    def __init__(self, table, schedule=None):
        self.table = table
        self.schedule = schedule or SslSchedule()
        self._terms = {}
        self._masks = {}
        self._held = [None, None]
        self.decisions = []

    def push_observation(self, t, X):
        """Spectrogram frame ``X`` (channels, bins) for frame ``t``."""
        Z = normalized_observations(np.asarray(X)[:, None, :])
        self._terms[t] = kernels.cacg_log_terms(Z, self.table.vectors, self.schedule.epsilon)[0]

    def push_masks(self, t, speech):
        """Speech masks (2, bins) for frame ``t``; returns a :class:`Decision` or None."""
        s = self.schedule
        self._masks[t] = np.asarray(speech, dtype=float)
        decision = self._decide(t) if s.is_decision_frame(t) else None
        stale = t - s.window + 1
        for d in (self._terms, self._masks):
            for k in [k for k in d if k < stale]:
                del d[k]
        return decision

    def _decide(self, n):
        s = self.schedule
        frames = s.window_frames(n)
        terms = np.stack([self._terms[k] for k in frames])  # (W, A, F)
        masks = np.stack([self._masks[k] for k in frames], axis=1)  # (2, W, F)
        scores = np.einsum("itf,taf->ia", masks, terms)
        mass = masks.sum(axis=(1, 2))
        grid = self.table.angle_grid
        angles = np.empty(2)
        confident = np.empty(2, dtype=bool)
        for i in range(2):
            flat = scores[i].max() - scores[i].min() <= self.flatness * mass[i]
            confident[i] = not flat
            if flat and self._held[i] is not None:
                angles[i] = self._held[i]
            else:
                angles[i] = grid[int(np.argmax(scores[i]))]
                if not flat:
                    self._held[i] = angles[i]
        d = Decision(n, (n - s.margin - s.stride, n - s.margin), angles, scores, confident)
        self.decisions.append(d)
        return d


def localize(spec, masks, schedule, table):
    """Run the decision schedule over a whole stream; returns a :class:`DirectionTrack`.

    ``masks`` is a :class:`~sicss.separation.MaskSet` or a (2, frames, bins)
    array of speech masks.
    """
    X = np.asarray(getattr(spec, "data", spec))
    speech = np.asarray(getattr(masks, "speech", masks), dtype=float)
    if speech.shape[1:] != X.shape[1:]:
        raise ValueError("masks and spectrogram are not aligned")
    loc = StreamingLocalizer(table, schedule)
    for t in range(X.shape[1]):
        loc.push_observation(t, X[:, t])
        loc.push_masks(t, speech[:, t])
    return DirectionTrack(list(loc.decisions))
