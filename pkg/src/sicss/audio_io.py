"""WAV, mask dump and ground-truth directory I/O."""
from __future__ import annotations

import csv
import json
import os

import numpy as np
from scipy.io import wavfile

from .separation import MaskSet
from .simkit import GroundTruth, Utterance


def read_wav(path):
    """Return ``(rate, data)`` with data as float64 (channels, samples) in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if data.ndim == 1:
        data = data[np.newaxis]
    else:
        data = data.T
    return rate, np.ascontiguousarray(data)


def write_wav(path, rate, data, pcm16=False):
    """Write (channels, samples) or (samples,) as float32, or 16-bit PCM if asked."""
    x = np.asarray(data, dtype=np.float64)
    x = x.T if x.ndim == 2 else x
    if pcm16:
        x = np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)
    else:
        x = x.astype(np.float32)
    wavfile.write(path, rate, x)


def save_masks(path, masks, **meta):
    np.savez(path, speech=masks.speech, noise=masks.noise, **meta)


def load_masks(path):
    with np.load(path) as z:
        return MaskSet(z["speech"], z["noise"])


def save_truth(directory, truth, mixture=None):
    """Write per-speaker images, noise image and an utterance table."""
    os.makedirs(directory, exist_ok=True)
    rate = truth.sample_rate
    for s in range(truth.num_speakers):
        write_wav(os.path.join(directory, f"speaker{s}.wav"), rate, truth.speaker_images[s])
    write_wav(os.path.join(directory, "noise.wav"), rate, truth.noise_image)
    with open(os.path.join(directory, "utterances.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["speaker", "azimuth_deg", "start_sample", "end_sample"])
        for u in truth.utterances:
            w.writerow([u.speaker, f"{u.azimuth:g}", u.start, u.end])
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump({"sample_rate": rate, "reference_index": truth.reference_index,
                   "num_speakers": truth.num_speakers}, fh, indent=2)


def load_truth(directory):
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    images = []
    for s in range(meta["num_speakers"]):
        _, data = read_wav(os.path.join(directory, f"speaker{s}.wav"))
        images.append(data)
    _, noise = read_wav(os.path.join(directory, "noise.wav"))
    images = np.stack(images)
    ref = meta["reference_index"]
    utterances = []
    with open(os.path.join(directory, "utterances.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            spk, start, end = int(row["speaker"]), int(row["start_sample"]), int(row["end_sample"])
            utterances.append(
                Utterance(spk, float(row["azimuth_deg"]), start, end, images[spk, ref, start:end].copy())
            )
    return GroundTruth(images, noise, utterances, ref, meta["sample_rate"])
