import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sicss.geometry import (
    ArrayGeometry,
    SteeringTable,
    angle_grid,
    build_steering_table,
    circular_distance,
    default_geometry,
)
from sicss.pipeline import truth_masks
from sicss.signal_core import FrameConfig, MultiChannelSpectrogram, stft
from sicss.simkit import synthesize, two_speaker_scenario
from sicss.ssl import (
    DirectionTrack,
    SslSchedule,
    StreamingLocalizer,
    cacg_constant,
    cacg_log_likelihood,
    cacg_log_likelihood_direct,
    localize,
)

import oracles

FROZEN = json.load(open(os.path.join(os.path.dirname(__file__), "data", "frozen.json")))
CFG = FrameConfig()
GEOM = default_geometry()
TABLE = build_steering_table(GEOM, angle_grid(5), CFG)


def _random_instance(rng, T=3, F=4, A=5, M=7):
    Z = rng.normal(size=(T, F, M)) + 1j * rng.normal(size=(T, F, M))
    Z /= np.linalg.norm(Z, axis=-1, keepdims=True)
    H = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(A, F, M))) / math.sqrt(M)
    masks = rng.uniform(size=(T, F))
    table = SteeringTable(H, np.arange(A) * (360.0 / A), GEOM, CFG)
    # (channels, frames, bins) spectrogram whose normalized observations are Z
    return np.moveaxis(Z, -1, 0), masks, table


# ---------------------------------------------------------------- schedule


def test_schedule_defaults():
    s = SslSchedule()
    assert (s.window, s.stride, s.margin) == (50, 10, 20)


def test_window_and_governed_at_70():
    s = SslSchedule()
    assert list(s.window_frames(70)) == list(range(21, 71))
    assert list(s.governed_frames(70)) == list(range(41, 51))


@pytest.mark.parametrize("n, yes", [(40, False), (49, False), (50, True), (55, False), (60, True)])
def test_decision_frames(n, yes):
    assert SslSchedule().is_decision_frame(n) is yes


@pytest.mark.parametrize("kw", [dict(window=5, stride=10), dict(stride=0), dict(margin=-1), dict(epsilon=0)])
def test_bad_schedule(kw):
    with pytest.raises(ValueError):
        SslSchedule(**kw)


# ---------------------------------------------------------------- likelihood


def test_zero_masks_zero_score():
    rng = np.random.default_rng(0)
    X, m, table = _random_instance(rng)
    assert not np.any(cacg_log_likelihood(X, np.zeros_like(m), table, 1e-3))


def test_single_bin_closed_form():
    h = TABLE.vectors[7, 40]
    X = np.zeros((7, 1, 257), complex)
    X[:, 0, 40] = 3.0 * h
    m = np.zeros((1, 257))
    m[0, 40] = 1.0
    eps = 1e-3
    L = cacg_log_likelihood(X, m, TABLE, eps)
    assert L[7] == pytest.approx(math.log((1 + eps) / eps), rel=1e-9)


def test_constant_matches_oracle():
    assert cacg_constant(7, 1e-3) == pytest.approx(FROZEN["cacg_constant_M7_eps1e-3"], rel=1e-12)
    for M in (1, 2, 4, 9):
        for eps in (1e-4, 1e-2, 0.5):
            assert cacg_constant(M, eps) == pytest.approx(oracles.cacg_constant(M, eps), rel=1e-12)


def test_frozen_dense_instance():
    rng = np.random.default_rng(FROZEN["cacg_instance_seed"])
    T, F, A, M = 3, 4, 5, 7
    Z = rng.normal(size=(T, F, M)) + 1j * rng.normal(size=(T, F, M))
    Z /= np.linalg.norm(Z, axis=-1, keepdims=True)
    H = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(A, F, M))) / math.sqrt(M)
    masks = rng.uniform(size=(T, F))
    table = SteeringTable(H, np.arange(A) * 72.0, GEOM, CFG)
    X = np.moveaxis(Z, -1, 0)
    for method in ("dense", "closed_form"):
        L2 = cacg_log_likelihood_direct(X, masks, table, 1e-3, method)
        np.testing.assert_allclose(L2, FROZEN["cacg_L2"], rtol=1e-9)
    L = cacg_log_likelihood(X, masks, table, 1e-3)
    np.testing.assert_allclose(cacg_constant(M, 1e-3) * masks.sum() + M * L, FROZEN["cacg_L2"], rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), eps=st.sampled_from([1e-4, 1e-3, 1e-2]))
def test_affine_relation(seed, eps):
    X, m, table = _random_instance(np.random.default_rng(seed))
    M = X.shape[0]
    L = cacg_log_likelihood(X, m, table, eps)
    L2 = cacg_log_likelihood_direct(X, m, table, eps, "dense")
    np.testing.assert_allclose(L2, cacg_constant(M, eps) * m.sum() + M * L, rtol=1e-9)


def test_argmax_agrees_100_instances():
    rng = np.random.default_rng(1)
    for _ in range(100):
        X, m, table = _random_instance(rng)
        L = cacg_log_likelihood(X, m, table, 1e-3)
        L2 = cacg_log_likelihood_direct(X, m, table, 1e-3)
        assert np.argmax(L) == np.argmax(L2)


def test_single_channel_degenerate():
    g = ArrayGeometry(np.array([[0.0, 0.0], [0.1, 0.0]]))
    h = np.exp(1j * 0.7) * np.ones((1, 1, 1))
    table = SteeringTable(h, np.array([0.0]), g, CFG)
    X = np.exp(1j * 1.9) * np.ones((1, 1, 1))
    eps = 1e-2
    L = cacg_log_likelihood(X, np.ones((1, 1)), table, eps)
    assert L[0] == pytest.approx(math.log((1 + eps) / eps), rel=1e-12)
    L2 = cacg_log_likelihood_direct(X, np.ones((1, 1)), table, eps, "dense")
    assert L2[0] == pytest.approx(cacg_constant(1, eps) + L[0], rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_per_bin_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    X, m, table = _random_instance(rng)
    scale = rng.uniform(0.01, 100, size=X.shape[1:])
    np.testing.assert_allclose(
        cacg_log_likelihood(X * scale, m, table, 1e-3), cacg_log_likelihood(X, m, table, 1e-3), rtol=1e-12
    )


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_monotone_in_added_bin(seed):
    rng = np.random.default_rng(seed)
    X, m, table = _random_instance(rng)
    m2 = m.copy()
    m[0, 0] = 0.0
    m2[0, 0] = 0.5
    assert np.all(cacg_log_likelihood(X, m2, table, 1e-3) > cacg_log_likelihood(X, m, table, 1e-3))


def test_plane_wave_argmax():
    s = np.random.default_rng(2).normal(size=(3, 257)) + 1j * np.random.default_rng(3).normal(size=(3, 257))
    for idx in (0, 13, 40, 71):
        X = np.einsum("fm,tf->mtf", TABLE.vectors[idx], s)
        L = cacg_log_likelihood(X, np.ones((3, 257)), TABLE, 1e-3)
        assert int(np.argmax(L)) == idx


def test_bad_inputs():
    X = np.zeros((7, 3, 257), complex)
    with pytest.raises(ValueError):
        cacg_log_likelihood(X, np.ones((2, 257)), TABLE, 1e-3)
    with pytest.raises(ValueError):
        cacg_log_likelihood(X, np.ones((3, 257)), TABLE, 0.0)
    with pytest.raises(ValueError):
        cacg_log_likelihood_direct(X, np.ones((3, 257)), TABLE, 1e-3, "other")


# ---------------------------------------------------------------- tracking


def _two_speaker(angles, seed=0, duration=5.0):
    mix, truth = synthesize(two_speaker_scenario(angles=angles, duration=duration, onset=0.5, seed=seed))
    spec = stft(mix, CFG)
    return spec, truth_masks(truth, CFG), truth


@pytest.mark.parametrize("angles", [(40.0, 160.0), (10.0, 300.0), (275.0, 320.0)])
def test_two_speaker_track(angles):
    spec, masks, truth = _two_speaker(angles)
    track = localize(spec, masks, SslSchedule(), TABLE)
    onset = int(0.5 * 16000 / 256) + 1
    checked = 0
    for d in track.entries:
        if d.frame - 50 + 1 < onset:  # window starts before both talk
            continue
        assert circular_distance(d.angles[0], angles[0]) <= 10
        assert circular_distance(d.angles[1], angles[1]) <= 10
        checked += 1
    assert checked >= 10


def test_single_speaker_flags_silent_mask():
    spec, masks, _ = _two_speaker((70.0, 200.0))
    speech = masks.speech.copy()
    speech[1] = 0.0
    track = localize(spec, speech, SslSchedule(), TABLE)
    late = [d for d in track.entries if d.frame > 100]
    assert all(circular_distance(d.angles[0], 70.0) <= 5 for d in late)
    assert all(d.confident[0] and not d.confident[1] for d in late)


def test_streaming_matches_batch_scores():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(7, 60, 257)) + 1j * rng.normal(size=(7, 60, 257))
    masks = rng.uniform(size=(2, 60, 257))
    track = localize(MultiChannelSpectrogram(X), masks, SslSchedule(), TABLE)
    d = track.entries[0]
    assert d.frame == 50
    window = slice(1, 51)
    for i in range(2):
        ref = cacg_log_likelihood(X[:, window], masks[i, window], TABLE, 1e-3)
        np.testing.assert_allclose(d.scores[i], ref, rtol=1e-12)


def test_track_intervals_contiguous():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(7, 200, 257)) + 1j * rng.normal(size=(7, 200, 257))
    track = localize(X, rng.uniform(size=(2, 200, 257)), SslSchedule(), TABLE)
    ivs = [d.interval for d in track.entries]
    assert ivs[0] == (20, 30)
    for a, b in zip(ivs, ivs[1:]):
        assert b[0] == a[1]
    pf = track.per_frame(200)
    assert pf.shape == (200, 2)
    np.testing.assert_array_equal(pf[25], track.entries[0].angles)
    np.testing.assert_array_equal(pf[31], track.entries[1].angles)


def test_track_csv_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    X = rng.normal(size=(7, 80, 257)) + 1j * rng.normal(size=(7, 80, 257))
    track = localize(X, rng.uniform(size=(2, 80, 257)), SslSchedule(), TABLE)
    path = tmp_path / "track.csv"
    track.write_csv(path)
    assert path.read_text().splitlines()[0] == "interval_start,interval_end,target_deg,interference_deg"
    rows = DirectionTrack.read_csv(path)
    assert rows == [(d.interval[0], d.interval[1], float(d.angles[0]), float(d.angles[1])) for d in track.entries]


def test_localizer_forgets_old_frames():
    loc = StreamingLocalizer(TABLE)
    rng = np.random.default_rng(7)
    for t in range(120):
        loc.push_observation(t, rng.normal(size=(7, 257)) + 0j)
        loc.push_masks(t, rng.uniform(size=(2, 257)))
    assert len(loc._terms) <= 50
