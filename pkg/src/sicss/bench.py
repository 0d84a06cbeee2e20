"""Real-time-factor benchmark of the full pipeline per kernel backend."""
from __future__ import annotations

import time

import numpy as np

from . import kernels
from .pipeline import run_pipeline


def run_benchmark(config, duration=20.0, samples=None, truth=None, backends=None, seed=0):
    """Run the pipeline once per backend; returns a list of report dicts."""
    if samples is None:
        from .simkit import meeting_scenario, synthesize

        samples, truth = synthesize(meeting_scenario(duration, seed=seed, geometry=config.geometry))
    names = backends or sorted(kernels.available_backends())
    results = []
    for name in names:
        with kernels.use_backend(name):
            out = run_pipeline(samples, config, truth)
        results.append(out.report.as_dict())
    return results


def kernel_timings(num_angles=72, num_bins=257, num_mics=7, frames=50, repeats=5, seed=0):
    """Seconds per call of the log-term kernel for each backend, best of ``repeats``."""
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(frames, num_bins, num_mics)) + 1j * rng.normal(size=(frames, num_bins, num_mics))
    Z /= np.linalg.norm(Z, axis=-1, keepdims=True)
    H = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(num_angles, num_bins, num_mics))) / np.sqrt(num_mics)
    H.flags.writeable = False
    out = {}
    for name, mod in kernels.available_backends().items():
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            mod.cacg_log_terms(Z, H, 1e-3)
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    return out
