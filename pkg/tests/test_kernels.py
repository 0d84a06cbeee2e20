import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sicss import _pykernels, kernels

BACKENDS = sorted(kernels.available_backends())


def _instance(seed, T=4, F=9, A=5, M=7, readonly=False):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(T, F, M)) + 1j * rng.normal(size=(T, F, M))
    Z /= np.linalg.norm(Z, axis=-1, keepdims=True)
    H = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(A, F, M))) / np.sqrt(M)
    H.flags.writeable = not readonly
    return Z, H


def test_python_backend_always_available():
    assert "python" in BACKENDS


def test_reference_formula():
    Z, H = _instance(0)
    P = _pykernels.projection_power(Z, H)
    direct = np.abs(np.einsum("afm,tfm->taf", H.conj(), Z)) ** 2
    np.testing.assert_allclose(P, direct, rtol=1e-12)
    L = _pykernels.cacg_log_terms(Z, H, 1e-3)
    np.testing.assert_allclose(L, -np.log1p(-direct / (1 + 1e-3)), rtol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
@pytest.mark.parametrize("readonly", [False, True])
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), eps=st.sampled_from([1e-4, 1e-2]))
def test_backends_agree(name, readonly, seed, eps):
    Z, H = _instance(seed, readonly=readonly)
    mod = kernels.available_backends()[name]
    np.testing.assert_allclose(mod.projection_power(Z, H), _pykernels.projection_power(Z, H), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(mod.cacg_log_terms(Z, H, eps), _pykernels.cacg_log_terms(Z, H, eps), rtol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_readonly_cache_tracks_table(name):
    # two different read-only tables in turn must not share cached planes
    mod = kernels.available_backends()[name]
    Z, H1 = _instance(1, readonly=True)
    _, H2 = _instance(2, readonly=True)
    for H in (H1, H2, H1):
        np.testing.assert_allclose(mod.projection_power(Z, H), _pykernels.projection_power(Z, H), rtol=1e-12)


def test_use_backend_restores():
    before = kernels.BACKEND
    with kernels.use_backend("python"):
        assert kernels.BACKEND == "python"
    assert kernels.BACKEND == before
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_env_forces_python():
    env = dict(os.environ, SICSS_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from sicss import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")
def test_compiled_backend_default():
    env = {k: v for k, v in os.environ.items() if k != "SICSS_PURE_PYTHON"}
    out = subprocess.run(
        [sys.executable, "-c", "from sicss import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "cython"
