import json
import os

import numpy as np
import pytest

from sicss.beamforming import (
    SingularCoherenceError,
    apply_beam,
    bank_diagnostics,
    beam_frame,
    design_bank,
    diffuse_coherence,
    load_bank,
    save_bank,
    select_beam,
    superdirective_weights,
)
from sicss.geometry import ArrayGeometry, build_steering_table, default_geometry
from sicss.signal_core import FrameConfig, MultiChannelSpectrogram, stft
from sicss.simkit import render_plane_wave, speech_like

from oracles import circle_positions, diffuse_coherence as coherence_oracle, steering, superdirective

FROZEN = json.load(open(os.path.join(os.path.dirname(__file__), "data", "frozen.json")))
CFG = FrameConfig()
GEOM = default_geometry()
BANK = design_bank(GEOM, CFG)
FREQS = CFG.bin_frequencies()


def test_bank_layout():
    assert BANK.num_beams == 18
    assert BANK.weights.shape == (18, 257, 7)
    np.testing.assert_array_equal(np.diff(BANK.focus_angles), 20.0)
    assert BANK.focus_angles[0] == 0.0


def test_distortionless():
    resp = bank_diagnostics(BANK)["focus_response"]
    assert np.max(np.abs(resp - 1)) <= 1e-6


def test_coherence_matches_oracle():
    G = diffuse_coherence(GEOM, CFG)
    for k in (0, 1, 64, 200, 256):
        np.testing.assert_allclose(G[k], coherence_oracle(circle_positions(), FREQS[k]), atol=1e-12)


@pytest.mark.parametrize("beam", [0, 5, 13])
def test_weights_match_oracle(beam):
    for k in (1, 30, 128, 256):
        h = steering(circle_positions(), 0, 20.0 * beam, FREQS[k])
        G = coherence_oracle(circle_positions(), FREQS[k])
        np.testing.assert_allclose(BANK.weights[beam, k], superdirective(h, G, 1e-2), atol=1e-9)


def test_large_loading_gives_delay_and_sum():
    bank = design_bank(GEOM, CFG, loading=1e9)
    table = build_steering_table(GEOM, bank.focus_angles, CFG)
    h = table.vectors
    np.testing.assert_allclose(bank.weights, h / np.sum(np.abs(h) ** 2, axis=-1, keepdims=True), atol=1e-7)


def test_diffuse_power_below_one_above_500hz():
    # reference-scaled output: noise power relative to a single mic
    diffuse = bank_diagnostics(BANK)["diffuse_power"] * BANK.reference_scale**2
    assert np.all(diffuse[:, FREQS > 500] < 1)
    assert diffuse[:, FREQS > 500].max() == pytest.approx(FROZEN["diffuse_power_max_above_500"], rel=1e-9)


def test_diffuse_reduction_above_1khz_matches_oracle():
    diffuse = bank_diagnostics(BANK)["diffuse_power"] * BANK.reference_scale**2
    red = -10 * np.log10(diffuse[:, FREQS > 1000].mean(axis=1))
    np.testing.assert_allclose(red, FROZEN["diffuse_reduction_db_above_1k"], rtol=1e-9)
    assert red.min() >= 3.0


def test_white_noise_gain_bounded():
    wng = bank_diagnostics(BANK)["white_noise_gain"]
    assert np.all(np.isfinite(wng))
    # Cauchy-Schwarz with w^H h = 1 gives >= 1; G >= loading I and
    # lambda_max(G) <= M + loading give <= (M + loading) / loading
    assert wng.min() >= 1 - 1e-9
    assert wng.max() <= (7 + 1e-2) / 1e-2


def test_singular_coherence_without_loading():
    g = ArrayGeometry(np.array([[0.0, 0.0], [1e-9, 0.0]]))
    G = diffuse_coherence(g, CFG)
    h = build_steering_table(g, np.array([0.0]), CFG).vectors
    with pytest.raises(SingularCoherenceError):
        superdirective_weights(h, G[None], 0.0)


def _plane_wave_spec(angle, n=16000, seed=0):
    s = speech_like(n / 16000, seed=seed)
    img = render_plane_wave(s, GEOM, angle, n, 0)
    return stft(img), stft(img[0])


def test_focus_plane_wave_reproduces_reference():
    # STFT-domain plane wave: exact per-bin steering
    rng = np.random.default_rng(0)
    s = rng.normal(size=(5, 257)) + 1j * rng.normal(size=(5, 257))
    h = build_steering_table(GEOM, np.array([60.0]), CFG).vectors[0] * np.sqrt(7)
    X = MultiChannelSpectrogram(np.einsum("fm,tf->mtf", h, s))
    y = apply_beam(BANK, 3, X, reference_scale=True).data[0]
    rel = np.sqrt(np.mean(np.abs(y[:, 1:] - s[:, 1:]) ** 2) / np.mean(np.abs(s[:, 1:]) ** 2))
    assert rel <= 1e-6


def test_focus_rendered_wave_close_to_reference():
    spec, ref = _plane_wave_spec(60.0)
    y = apply_beam(BANK, 3, spec, reference_scale=True).data[0]
    r = ref.data[0]
    rel = np.sqrt(np.mean(np.abs(y - r) ** 2) / np.mean(np.abs(r) ** 2))
    assert rel < 0.05


def test_zero_and_linearity():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(7, 3, 257)) + 1j * rng.normal(size=(7, 3, 257))
    B = rng.normal(size=(7, 3, 257)) + 1j * rng.normal(size=(7, 3, 257))
    z = apply_beam(BANK, 4, MultiChannelSpectrogram(np.zeros_like(A))).data
    assert not np.any(z)
    lhs = apply_beam(BANK, 4, MultiChannelSpectrogram(A + B)).data
    rhs = apply_beam(BANK, 4, MultiChannelSpectrogram(A)).data + apply_beam(BANK, 4, MultiChannelSpectrogram(B)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_beam_frame_matches_apply_beam():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(7, 2, 257)) + 1j * rng.normal(size=(7, 2, 257))
    full = apply_beam(BANK, 7, MultiChannelSpectrogram(A), reference_scale=True).data[0]
    np.testing.assert_allclose(beam_frame(BANK, 7, A[:, 1]), full[1], atol=1e-12)


def test_apply_beam_errors():
    X = MultiChannelSpectrogram(np.zeros((7, 1, 257), complex))
    with pytest.raises(IndexError):
        apply_beam(BANK, 18, X)
    with pytest.raises(ValueError):
        apply_beam(BANK, 0, MultiChannelSpectrogram(np.zeros((6, 1, 257), complex)))


@pytest.mark.parametrize("angle, beam", [(0, 0), (25, 1), (10, 0), (30, 1), (350, 0), (349.9, 17), (359, 0)])
def test_select_beam(angle, beam):
    assert select_beam(BANK, angle) == beam


@pytest.mark.parametrize("shift", [1, 2, 3, 4, 5])
def test_rotation_maps_beams(shift):
    # a 60 degree rotation is a symmetry of the 6-mic circle; beam b -> b + 3
    rng = np.random.default_rng(shift)
    src = float(rng.uniform(0, 360))
    rot = (src + 60 * shift) % 360
    table = build_steering_table(GEOM, np.sort(np.array([src, rot])), CFG)
    s = rng.normal(size=(4, 257)) + 1j * rng.normal(size=(4, 257))
    X1 = MultiChannelSpectrogram(np.einsum("fm,tf->mtf", table.vectors[table.index_of(src)], s))
    X2 = MultiChannelSpectrogram(np.einsum("fm,tf->mtf", table.vectors[table.index_of(rot)], s))
    for b in range(18):
        y1 = apply_beam(BANK, b, X1).data
        y2 = apply_beam(BANK, (b + 3 * shift) % 18, X2).data
        np.testing.assert_allclose(y2, y1, atol=1e-9)


def test_bank_file_round_trip(tmp_path):
    path = tmp_path / "beams.json"
    save_bank(BANK, path)
    bank = load_bank(path)
    np.testing.assert_array_equal(bank.weights, BANK.weights)
    np.testing.assert_array_equal(bank.focus_angles, BANK.focus_angles)
    assert bank.geometry == GEOM
    assert bank.diagonal_loading == BANK.diagonal_loading


def test_load_bank_rejects_other_files(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_bank(path)
