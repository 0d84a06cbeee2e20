"""Pure numpy implementations of the hot kernels."""
import numpy as np


def projection_power(Z, H):
    """``|z_{t,f}^H h_{a,f}|^2`` for ``Z`` (T, F, M) and ``H`` (A, F, M) -> (T, A, F)."""
    Z = np.ascontiguousarray(Z, dtype=np.complex128)
    H = np.ascontiguousarray(H, dtype=np.complex128)
    # (F, T, M) @ (F, M, A) -> (F, T, A)
    proj = np.matmul(Z.transpose(1, 0, 2).conj(), H.transpose(1, 2, 0))
    power = proj.real**2 + proj.imag**2
    return np.ascontiguousarray(power.transpose(1, 2, 0))


def cacg_log_terms(Z, H, epsilon):
    """Per-bin score ``-log(1 - |z^H h|^2 / (1 + eps))`` -> (T, A, F)."""
    power = projection_power(Z, H)
    return -np.log1p(-power / (1.0 + epsilon))
