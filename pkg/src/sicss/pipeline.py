"""Streaming separation pipeline with a fixed latency and a causality audit.

Per input frame ``t``: analysis, features, mask estimation through the
double-buffer stitcher (masks for ``t - N_LF``), localization (decisions at
mask frames), then enhancement and synthesis of output frame
``t - latency``: beam selection from the newest direction estimate
available within the budget, beamforming, post-filter, overlap-add.

The emitted streams are the latency-aligned output delayed by exactly
``latency_frames * frame_shift`` samples: block ``j`` of the output is
emitted when input frame ``j`` completes.
"""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .beamforming import DEFAULT_LOADING, beam_frame, design_bank, load_bank, select_beam
from .features import frame_features
from .geometry import ArrayGeometry, angle_grid, build_steering_table, default_geometry
from .separation import (
    DEFAULT_BUFFER_LENGTH,
    DEFAULT_LOOKAHEAD,
    DoubleBufferStitcher,
    LookaheadViolation,
    MaskFrame,
    adversarial_factory,
    baseline_factory,
    oracle_factory,
    oracle_masks,
)
from .signal_core import FrameConfig, StreamingISTFT, StreamingSTFT, stft
from .ssl import DirectionTrack, SslSchedule, StreamingLocalizer

ESTIMATORS = ("oracle", "baseline", "adversarial")
POSTFILTERS = ("oracle", "mask-reuse", "passthrough")
SSL_POLICIES = ("budget", "interval")
STAGES = ("features", "separation", "ssl", "enhancement", "synthesis")
# T_S + T_M of the segment-based predecessor: 0.8 s shift plus 0.4 s margin
PREVIOUS_METHOD_LOWER_BOUND_S = 0.8 + 0.4


@dataclass(frozen=True)
class PipelineConfig:
    frame: FrameConfig = field(default_factory=FrameConfig)
    geometry: ArrayGeometry = field(default_factory=default_geometry)
    schedule: SslSchedule = field(default_factory=SslSchedule)
    ssl_grid_step: float = 5.0
    ssl_policy: str = "budget"
    bank_path: str | None = None
    loading: float = DEFAULT_LOADING
    estimator: str = "oracle"
    lookahead: int = DEFAULT_LOOKAHEAD  # N_LF
    buffer_length: int = DEFAULT_BUFFER_LENGTH
    postfilter: str = "mask-reuse"

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.postfilter not in POSTFILTERS:
            raise ValueError(f"postfilter must be one of {POSTFILTERS}")
        if self.ssl_policy not in SSL_POLICIES:
            raise ValueError(f"ssl_policy must be one of {SSL_POLICIES}")

    @property
    def ssl_delay(self):
        """Frames between a mask frame and the output frames it may govern."""
        s = self.schedule
        return s.margin if self.ssl_policy == "budget" else s.margin + s.stride - 1

    @property
    def latency_frames(self):
        # the post-filter uses no future frames
        return self.lookahead + self.ssl_delay

    @property
    def latency_seconds(self):
        return self.latency_frames * self.frame.shift_seconds

    def with_(self, **kwargs):
        return replace(self, **kwargs)


@dataclass
class OutputStreams:
    samples: np.ndarray  # (2, input_length + latency_samples), emitted order
    sample_rate: int
    latency_frames: int
    frame_shift: int
    input_length: int
    report: "RunReport | None" = None
    trace: "Trace | None" = None
    track: "DirectionTrack | None" = None

    @property
    def latency_samples(self):
        return self.latency_frames * self.frame_shift

    def aligned(self):
        """Outputs time-aligned with the input (delay removed)."""
        d = self.latency_samples
        return self.samples[:, d : d + self.input_length]


@dataclass
class RunReport:
    stage_seconds: dict
    audio_seconds: float
    declared_latency_frames: int
    measured_latency_frames: int | None
    backend: str
    config: dict

    @property
    def wall_seconds(self):
        return sum(self.stage_seconds.values())

    @property
    def rtf(self):
        return self.wall_seconds / self.audio_seconds if self.audio_seconds else float("nan")

    def as_dict(self):
        return {
            "stage_seconds": dict(self.stage_seconds),
            "wall_seconds": self.wall_seconds,
            "audio_seconds": self.audio_seconds,
            "rtf": self.rtf,
            "declared_latency_frames": self.declared_latency_frames,
            "measured_latency_frames": self.measured_latency_frames,
            "backend": self.backend,
            "config": self.config,
        }


@dataclass
class Trace:
    """Per-stage records used by the causality audit."""

    ref_magnitude: dict = field(default_factory=dict)
    ipd: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    decisions: dict = field(default_factory=dict)
    beams: dict = field(default_factory=dict)
    enhanced: dict = field(default_factory=dict)


# ---------------------------------------------------------------- post-filters


class MaskReusePostFilter:
    """Apply the channel's separation speech mask to its beamformed frame."""

    def __call__(self, channel, frame_index, beamformed, masks, beam):
        return masks.speech[channel]


class PassthroughPostFilter:
    def __call__(self, channel, frame_index, beamformed, masks, beam):
        return np.ones_like(masks.speech[channel])


class OraclePostFilter:
    """Ideal ratio mask in the beam domain.

    The output channel is matched per frame to the speaker whose oracle mask
    overlaps its separation mask most; a channel with an all-zero mask gets a
    zero gain.
    """

    def __init__(self, truth_specs, noise_spec, bank, ref_index, eps=1e-10):
        self.truth_specs = truth_specs  # (S, M, T, F)
        self.noise_spec = noise_spec  # (M, T, F)
        self.bank = bank
        self.ref = oracle_masks(
            [s[ref_index] for s in truth_specs[:2]], noise_spec[ref_index], truth_specs[0][ref_index]
        )
        self.eps = eps

    def __call__(self, channel, frame_index, beamformed, masks, beam):
        m = masks.speech[channel]
        if not np.any(m > 0):
            return np.zeros_like(m)
        overlap = [np.dot(m, self.ref.speech[j, frame_index]) for j in range(2)]
        j = int(np.argmax(overlap))
        w = self.bank.weights[beam].conj()
        parts = [np.abs(np.sum(w * s[:, frame_index].T, axis=-1)) for s in self.truth_specs]
        noise = np.abs(np.sum(w * self.noise_spec[:, frame_index].T, axis=-1))
        den = sum(parts) + noise + self.eps
        return parts[j] / den


# ---------------------------------------------------------------- engine


class StreamingSeparator:
    """Frame-synchronous streaming engine.

    ``push`` accepts input samples (mics, n) and returns emitted output
    samples (2, k); ``finish`` drains the remaining frames at end of stream.
    """

    def __init__(self, config, estimator_factory, postfilter, bank=None, table=None,
                 record=False):
        self.config = config
        cfg = config
        self.geometry = cfg.geometry
        self.bank = bank if bank is not None else _load_or_design_bank(cfg)
        if self.bank.geometry != self.geometry or self.bank.config != _frame_key(cfg.frame):
            raise ValueError("beam bank was designed for a different geometry or frame config")
        self.table = table or build_steering_table(self.geometry, angle_grid(cfg.ssl_grid_step), cfg.frame)
        self.postfilter = postfilter
        self.latency = cfg.latency_frames
        declared = getattr(estimator_factory, "lookahead", cfg.lookahead)
        if declared != cfg.lookahead:
            raise ValueError(f"estimator declares look-ahead {declared}, config says {cfg.lookahead}")
        self.analysis = StreamingSTFT(self.geometry.num_mics, cfg.frame)
        self.stitcher = DoubleBufferStitcher(estimator_factory, cfg.lookahead, cfg.buffer_length)
        self.localizer = StreamingLocalizer(self.table, cfg.schedule)
        self.synthesis = [StreamingISTFT(cfg.frame), StreamingISTFT(cfg.frame)]
        self.trace = Trace() if record else None
        self.stage_seconds = defaultdict(float)
        self._spectra = {}
        self._masks = {}
        self._latest = None  # newest decision: (frame, angles)
        self._decisions = []
        self._t = -1
        self._next_out = 0
        self.emission_lags = set()

    # -- public

    def push(self, samples):
        t0 = time.perf_counter()
        frames = self.analysis.push(samples)
        self.stage_seconds["stft"] += time.perf_counter() - t0
        blocks = [self._input_frame(frames[:, i]) for i in range(frames.shape[1])]
        if not blocks:
            return np.zeros((2, 0))
        return np.concatenate(blocks, axis=1)

    def finish(self):
        """Process the frames still inside the latency window, then the synthesis tail."""
        t0 = time.perf_counter()
        for mf in self.stitcher.flush():
            self._accept_masks(mf)
        self.stage_seconds["separation"] += time.perf_counter() - t0
        blocks = []
        while self._next_out <= self._t:
            blocks.append(self._output_frame(self._next_out, final=True))
        t0 = time.perf_counter()
        tails = [s.flush() for s in self.synthesis]
        self.stage_seconds["synthesis"] += time.perf_counter() - t0
        blocks.append(np.stack(tails))
        return np.concatenate(blocks, axis=1)

    # -- per frame

    def _input_frame(self, X):
        cfg = self.config
        self._t += 1
        t = self._t
        t0 = time.perf_counter()
        feat = frame_features(X, self.geometry.reference_index, t)
        self._spectra[t] = X
        t1 = time.perf_counter()
        self.localizer.push_observation(t, X)
        t2 = time.perf_counter()
        produced = self.stitcher.push(feat)
        t3 = time.perf_counter()
        self.stage_seconds["features"] += t1 - t0
        self.stage_seconds["ssl"] += t2 - t1
        self.stage_seconds["separation"] += t3 - t2
        if self.trace is not None:
            self.trace.ref_magnitude[t] = feat.ref_magnitude
            self.trace.ipd[t] = feat.ipd
        for mf in produced:
            self._accept_masks(mf)
        k = t - self.latency
        if k < 0:
            return np.zeros((2, cfg.frame.frame_shift))
        self.emission_lags.add(t - k)
        return self._output_frame(k)

    def _accept_masks(self, mf):
        t0 = time.perf_counter()
        self._masks[mf.frame_index] = mf
        if self.trace is not None:
            self.trace.masks[mf.frame_index] = mf.speech.copy()
        d = self.localizer.push_masks(mf.frame_index, mf.speech)
        if d is not None:
            self._decisions.append(d)
            if self.trace is not None:
                self.trace.decisions[d.frame] = d.angles.copy()
        self.stage_seconds["ssl"] += time.perf_counter() - t0

    def _angles_for(self, k):
        """Newest decision allowed to govern output frame ``k``."""
        cfg = self.config
        s = cfg.schedule
        if cfg.ssl_policy == "budget":
            limit = k + s.margin
        else:
            limit = -(-(k + s.margin) // s.stride) * s.stride
        chosen = None
        for d in self._decisions:
            if d.frame <= limit:
                chosen = d
            else:
                break
        # decisions no longer reachable by later frames
        while len(self._decisions) > 1 and self._decisions[1].frame <= limit:
            self._decisions.pop(0)
        return None if chosen is None else chosen.angles

    def _output_frame(self, k, final=False):
        t0 = time.perf_counter()
        X = self._spectra.pop(k)
        mf = self._masks.pop(k, None)
        if mf is None:
            raise LookaheadViolation("separation", f"masks for frame {k} not available at output time")
        angles = self._angles_for(k)
        out = []
        for ch in range(2):
            beam = 0 if angles is None else select_beam(self.bank, angles[ch])
            y = beam_frame(self.bank, beam, X)
            gain = self.postfilter(ch, k, y, mf, beam)
            out.append(gain * y)
            if self.trace is not None:
                self.trace.beams[(k, ch)] = beam
        if self.trace is not None:
            self.trace.enhanced[k] = np.stack(out)
        t1 = time.perf_counter()
        block = np.stack([self.synthesis[ch].push(out[ch]) for ch in range(2)])
        self.stage_seconds["enhancement"] += t1 - t0
        self.stage_seconds["synthesis"] += time.perf_counter() - t1
        self._next_out = k + 1
        return block


def _frame_key(frame):
    return FrameConfig(frame.sample_rate, frame.frame_shift, frame.frame_length)


def _load_or_design_bank(cfg):
    if cfg.bank_path:
        return load_bank(cfg.bank_path)
    return design_bank(cfg.geometry, _frame_key(cfg.frame), cfg.loading)


# ---------------------------------------------------------------- assembly


def truth_spectrograms(truth, config):
    n = truth.speaker_images.shape[-1]
    speakers = np.stack([stft(img, config).data for img in truth.speaker_images])
    noise = stft(truth.noise_image, config).data
    return speakers, noise, n


def truth_masks(truth, config):
    """Oracle masks of the first two speakers at the reference mic."""
    speakers, noise, _ = truth_spectrograms(truth, config)
    ref = truth.reference_index
    mix = speakers.sum(axis=0)[ref] + noise[ref]
    return oracle_masks([s[ref] for s in speakers[:2]], noise[ref], mix)


def build_estimator_factory(config, truth=None, table=None):
    if config.estimator == "baseline":
        table = table or build_steering_table(config.geometry, angle_grid(config.ssl_grid_step), config.frame)
        return baseline_factory(table, config.geometry.reference_index, config.lookahead)
    if truth is None:
        raise ValueError(f"estimator {config.estimator!r} needs ground truth")
    masks = truth_masks(truth, config.frame)
    if config.estimator == "oracle":
        return oracle_factory(masks, config.lookahead)
    return adversarial_factory(masks, config.lookahead)


def build_postfilter(config, truth=None, bank=None):
    if config.postfilter == "mask-reuse":
        return MaskReusePostFilter()
    if config.postfilter == "passthrough":
        return PassthroughPostFilter()
    if truth is None:
        raise ValueError("oracle post-filter needs ground truth")
    speakers, noise, _ = truth_spectrograms(truth, config.frame)
    return OraclePostFilter(speakers, noise, bank, truth.reference_index)


def _config_echo(config):
    s = config.schedule
    return {
        "sample_rate": config.frame.sample_rate,
        "frame_shift": config.frame.frame_shift,
        "frame_length": config.frame.frame_length,
        "num_mics": config.geometry.num_mics,
        "estimator": config.estimator,
        "postfilter": config.postfilter,
        "lookahead": config.lookahead,
        "buffer_length": config.buffer_length,
        "ssl_window": s.window,
        "ssl_stride": s.stride,
        "ssl_margin": s.margin,
        "ssl_epsilon": s.epsilon,
        "ssl_policy": config.ssl_policy,
        "ssl_grid_step": config.ssl_grid_step,
        "loading": config.loading,
    }


def run_pipeline(samples, config=None, truth=None, estimator_factory=None, postfilter=None,
                 bank=None, table=None, chunk=None, record=False):
    """Separate a multichannel recording into two emitted output streams.

    ``samples`` is (mics, n). Input is fed in ``chunk``-sample pieces
    (default one frame shift) to exercise the streaming path.
    """
    from . import kernels

    config = config or PipelineConfig()
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] != config.geometry.num_mics:
        raise ValueError(
            f"input has {x.shape[0] if x.ndim == 2 else 1} channels, geometry has "
            f"{config.geometry.num_mics}"
        )
    bank = bank if bank is not None else _load_or_design_bank(config)
    table = table or build_steering_table(config.geometry, angle_grid(config.ssl_grid_step), config.frame)
    if estimator_factory is None:
        estimator_factory = build_estimator_factory(config, truth, table)
    if postfilter is None:
        postfilter = build_postfilter(config, truth, bank)
    engine = StreamingSeparator(config, estimator_factory, postfilter, bank, table, record)
    chunk = chunk or config.frame.frame_shift
    pieces = [engine.push(x[:, i : i + chunk]) for i in range(0, x.shape[1], chunk)]
    pieces.append(engine.finish())
    emitted = np.concatenate(pieces, axis=1)
    total = x.shape[1] + config.latency_frames * config.frame.frame_shift
    out = np.zeros((2, total))
    n = min(total, emitted.shape[1])
    out[:, :n] = emitted[:, :n]
    lags = engine.emission_lags
    report = RunReport(
        dict(engine.stage_seconds),
        x.shape[1] / config.frame.sample_rate,
        config.latency_frames,
        lags.pop() if len(lags) == 1 else None,
        kernels.BACKEND,
        _config_echo(config),
    )
    return OutputStreams(out, config.frame.sample_rate, config.latency_frames,
                         config.frame.frame_shift, x.shape[1], report, engine.trace,
                         DirectionTrack(list(engine.localizer.decisions)))


def impulse_latency(config=None, position=None, azimuth=0.0):
    """Measured delay, in frames, of an impulse through the oracle pipeline.

    The impulse arrives from ``azimuth`` as speaker 0; the returned value is
    the offset between its input position and the output peak.
    """
    from .simkit import Scenario, Source, synthesize

    config = (config or PipelineConfig()).with_(estimator="oracle", postfilter="mask-reuse")
    hop = config.frame.frame_shift
    position = position if position is not None else 10 * hop + hop // 2
    duration_samples = position + (config.latency_frames + 40) * hop
    sig = np.zeros(1)
    sig[0] = 1.0
    scen = Scenario([Source(sig, azimuth, position / config.frame.sample_rate, 0.0, 0)],
                    duration_samples / config.frame.sample_rate, None, config.geometry)
    mix, truth = synthesize(scen)
    out = run_pipeline(mix, config, truth)
    peak = int(np.argmax(np.abs(out.samples[0])))
    return (peak - position) / hop, out


# ---------------------------------------------------------------- audit


@dataclass
class ProbeResult:
    frame: int
    passed: bool
    stage: str | None = None
    detail: str = ""
    vacuous: bool = False


@dataclass
class AuditReport:
    probes: list

    @property
    def passed(self):
        return all(p.passed for p in self.probes)

    @property
    def failing_stage(self):
        for p in self.probes:
            if not p.passed:
                return p.stage
        return None

    def summary(self):
        lines = []
        for p in self.probes:
            status = "PASS" if p.passed else "FAIL"
            extra = " (vacuous)" if p.vacuous else ""
            where = f" [{p.stage}] {p.detail}" if not p.passed else ""
            lines.append(f"probe frame {p.frame}: {status}{extra}{where}")
        return "\n".join(lines)


def _equal(a, b):
    return a is not None and b is not None and np.array_equal(a, b)


def _compare(base, other, n, config):
    """First stage whose output at frames it may have committed differs."""
    L = config.latency_frames
    mask_horizon = n + L - config.lookahead
    bt, ot = base.trace, other.trace
    for t in range(n + L + 1):
        if t not in bt.ref_magnitude:
            break
        if not (_equal(bt.ref_magnitude[t], ot.ref_magnitude.get(t)) and _equal(bt.ipd[t], ot.ipd.get(t))):
            return "features", f"frame {t}"
    for t in range(mask_horizon + 1):
        if t not in bt.masks:
            break
        if not _equal(bt.masks[t], ot.masks.get(t)):
            return "separation", f"mask frame {t} (horizon {mask_horizon})"
    for d, angles in bt.decisions.items():
        if d <= mask_horizon and not _equal(angles, ot.decisions.get(d)):
            return "ssl", f"decision at frame {d}"
    for k in range(n + 1):
        if k not in bt.enhanced:
            break
        same_beams = all(bt.beams[(k, c)] == ot.beams.get((k, c)) for c in range(2))
        if not same_beams or not _equal(bt.enhanced[k], ot.enhanced.get(k)):
            return "enhancement", f"output frame {k}"
    stop = (n + 1) * config.frame.frame_shift
    if not np.array_equal(base.aligned()[:, :stop], other.aligned()[:, :stop]):
        return "synthesis", f"samples before {stop}"
    return None, ""


def causality_audit(config, samples, probe_frames, truth=None, estimator_builder=None,
                    postfilter_builder=None, seed=0, bank=None):
    """Check that output frame ``n`` ignores input beyond frame ``n + latency``.

    For every probe, input samples after ``(n + latency) * shift + length``
    are replaced by noise and the run is compared stage by stage against the
    unperturbed run. ``estimator_builder(samples)`` may supply an estimator
    factory that sees the (perturbed) input.
    """
    x = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    scale = float(np.sqrt(np.mean(x**2))) or 1.0
    bank = bank if bank is not None else _load_or_design_bank(config)
    table = build_steering_table(config.geometry, angle_grid(config.ssl_grid_step), config.frame)

    def run(inp):
        factory = estimator_builder(inp) if estimator_builder else None
        pf = postfilter_builder(inp) if postfilter_builder else None
        return run_pipeline(inp, config, truth, factory, pf, bank, table, record=True)

    results = []
    try:
        base = run(x)
    except LookaheadViolation as exc:
        return AuditReport([ProbeResult(int(n), False, exc.stage, str(exc)) for n in probe_frames])
    L = config.latency_frames
    for n in probe_frames:
        n = int(n)
        cut = (n + L) * config.frame.frame_shift + config.frame.frame_length
        if cut >= x.shape[1]:
            results.append(ProbeResult(n, True, vacuous=True))
            continue
        y = x.copy()
        y[:, cut:] = rng.normal(scale=scale, size=y[:, cut:].shape)
        try:
            other = run(y)
        except LookaheadViolation as exc:
            results.append(ProbeResult(n, False, exc.stage, str(exc)))
            continue
        stage, detail = _compare(base, other, n, config)
        results.append(ProbeResult(n, stage is None, stage, detail))
    return AuditReport(results)


# ---------------------------------------------------------------- fault injection


class PeekingEstimator:
    """Wraps an estimator and leaks features from beyond its look-ahead.

    Used to check that the audit catches a look-ahead violation: frame ``t``
    reaches the inner estimator with its magnitude mixed with that of frame
    ``t + lookahead + extra``, read from ``future`` (all feature frames),
    while the wrapper still declares the inner estimator's look-ahead.
    """

    def __init__(self, inner, future, extra=1):
        self.inner = inner
        self.future = future
        self.extra = extra
        self.lookahead = inner.lookahead

    def reset(self):
        self.inner.reset()

    def _peek(self, frame):
        t = frame.frame_index + self.lookahead + self.extra
        if t >= len(self.future):
            return frame
        ahead = self.future[t]
        mag = 0.5 * (frame.ref_magnitude + ahead.ref_magnitude)
        return type(frame)(mag, ahead.ipd, frame.frame_index)

    def push(self, frame):
        return self.inner.push(self._peek(frame))

    def flush(self):
        return self.inner.flush()


def peeking_builder(config, extra=1):
    """Estimator builder for :func:`causality_audit` that injects a peek."""
    from .features import extract_features

    def build(samples):
        table = build_steering_table(config.geometry, angle_grid(config.ssl_grid_step), config.frame)
        base = baseline_factory(table, config.geometry.reference_index, config.lookahead)
        future = extract_features(stft(samples, config.frame), config.geometry.reference_index)

        def make(k):
            return PeekingEstimator(base(k), future, extra)

        make.lookahead = config.lookahead
        return make

    return build


def stage_names():
    return STAGES


__all__ = [
    "PipelineConfig",
    "OutputStreams",
    "RunReport",
    "StreamingSeparator",
    "run_pipeline",
    "causality_audit",
    "impulse_latency",
    "MaskFrame",
]
