"""Reconstruction quality metrics."""

import numpy as np

from .kspace import EchoStack

SNR_CAP_DB = 300.0


def _data(x):
    return x.data if isinstance(x, EchoStack) else np.asarray(x)


def snr_db(recon, truth) -> float:
    """``10 log10(||truth||^2 / ||truth - recon||^2)`` on magnitudes, all echoes jointly.

    An exact match returns :data:`SNR_CAP_DB`.
    """
    r, t = np.abs(_data(recon)).astype(np.float64), np.abs(_data(truth)).astype(np.float64)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {t.shape}")
    signal = float(np.sum(t * t))
    if signal == 0:
        raise ValueError("truth is identically zero")
    err = float(np.sum((t - r) ** 2))
    if err == 0:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * np.log10(signal / err))


def difference_image(recon, truth, echo: int) -> np.ndarray:
    """``| |truth| - |recon| |`` for one echo."""
    r, t = _data(recon), _data(truth)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {t.shape}")
    if not 0 <= echo < t.shape[0]:
        raise IndexError(f"echo {echo} out of range [0, {t.shape[0]})")
    return np.abs(np.abs(t[echo]).astype(np.float64) - np.abs(r[echo]).astype(np.float64))
