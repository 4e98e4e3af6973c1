"""Patch extraction ``P_i`` across echoes, its adjoint, and coverage counts.

A patch of a complex echo stack is a real ``(patch_size**2, 2 * n_echoes)``
matrix: column ``2j`` holds the real part of echo ``j``, column ``2j + 1``
the imaginary part. Pixels are vectorized column-major inside the patch
(``k = row + col * patch_size``). Patches are indexed row-major over the
grid of patch origins.

The full set of patches is kept as one ``(patch_size**2, n_patches, 2 * n_echoes)``
array, so that ``D @ block.reshape(p2, -1)`` applies a dictionary to every
patch column at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import njit, use_numba
from .kspace import EchoStack

BOUNDARIES = ("wraparound", "interior-only")


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int = 12
    stride: int = 1
    boundary: str = "wraparound"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def validate(self, dims):
        h, w = dims
        if self.patch_size > min(h, w):
            raise ValueError(f"patch_size {self.patch_size} exceeds image side {min(h, w)}")
        # stride may equal the image side (one patch); otherwise patches must overlap or tile
        if self.stride > self.patch_size and self.stride < max(h, w):
            raise ValueError("stride must not exceed patch_size")


@dataclass
class PatchMatrix:
    values: np.ndarray
    patch_index: int
    origin: tuple


def patch_origins(cfg: PatchConfig, dims):
    cfg.validate(dims)
    h, w = dims
    p, s = cfg.patch_size, cfg.stride
    if cfg.boundary == "wraparound":
        return np.arange(0, h, s), np.arange(0, w, s)
    return np.arange(0, h - p + 1, s), np.arange(0, w - p + 1, s)


def n_patches(cfg: PatchConfig, dims) -> int:
    orow, ocol = patch_origins(cfg, dims)
    return orow.size * ocol.size


def to_channels(x: np.ndarray) -> np.ndarray:
    """Complex ``(n, H, W)`` -> real ``(2n, H, W)`` with interleaved real/imag."""
    n, h, w = x.shape
    out = np.empty((2 * n, h, w), dtype=np.float64)
    out[0::2] = x.real
    out[1::2] = x.imag
    return out


def from_channels(xr: np.ndarray) -> np.ndarray:
    return xr[0::2] + 1j * xr[1::2]


# -- kernels ----------------------------------------------------------------


@njit(cache=True)
def _extract_numba(xr, orow, ocol, p, out):
    nch, h, w = xr.shape
    nc = ocol.size
    for a in range(orow.size):
        for b in range(nc):
            i = a * nc + b
            for cc in range(p):
                col = (ocol[b] + cc) % w
                for rr in range(p):
                    row = (orow[a] + rr) % h
                    k = rr + cc * p
                    for ch in range(nch):
                        out[k, i, ch] = xr[ch, row, col]
    return out


@njit(cache=True)
def _aggregate_numba(block, orow, ocol, p, img):
    nch, h, w = img.shape
    nc = ocol.size
    for a in range(orow.size):
        for b in range(nc):
            i = a * nc + b
            for cc in range(p):
                col = (ocol[b] + cc) % w
                for rr in range(p):
                    row = (orow[a] + rr) % h
                    k = rr + cc * p
                    for ch in range(nch):
                        img[ch, row, col] += block[k, i, ch]
    return img


def _extract_numpy(xr, orow, ocol, p, out):
    nch, h, w = xr.shape
    nr, nc = orow.size, ocol.size
    view = out.reshape(p * p, nr, nc, nch)
    for cc in range(p):
        cols = (ocol + cc) % w
        for rr in range(p):
            rows = (orow + rr) % h
            view[rr + cc * p] = xr[:, rows[:, None], cols[None, :]].transpose(1, 2, 0)
    return out


def _aggregate_numpy(block, orow, ocol, p, img):
    nch, h, w = img.shape
    nr, nc = orow.size, ocol.size
    view = block.reshape(p * p, nr, nc, nch)
    for cc in range(p):
        cols = (ocol + cc) % w
        for rr in range(p):
            rows = (orow + rr) % h
            # origins are distinct, so one offset never hits a pixel twice
            img[:, rows[:, None], cols[None, :]] += view[rr + cc * p].transpose(2, 0, 1)
    return img


def _extract_kernel():
    return _extract_numba if use_numba() else _extract_numpy


def _aggregate_kernel():
    return _aggregate_numba if use_numba() else _aggregate_numpy


# -- public operators -------------------------------------------------------


def extract_channels(xr: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """All patches of a real channel stack ``(C, H, W)`` -> ``(p**2, n_patches, C)``."""
    xr = np.ascontiguousarray(xr, dtype=np.float64)
    orow, ocol = patch_origins(cfg, xr.shape[1:])
    p = cfg.patch_size
    out = np.empty((p * p, orow.size * ocol.size, xr.shape[0]), dtype=np.float64)
    return _extract_kernel()(xr, orow, ocol, p, out)


def aggregate_channels(block: np.ndarray, cfg: PatchConfig, dims) -> np.ndarray:
    """Adjoint of :func:`extract_channels`: scatter-add patches into ``(C, H, W)``."""
    orow, ocol = patch_origins(cfg, dims)
    p = cfg.patch_size
    expected = (p * p, orow.size * ocol.size)
    if block.shape[:2] != expected:
        raise ValueError(f"patch block shape {block.shape[:2]} != expected {expected}")
    block = np.ascontiguousarray(block, dtype=np.float64)
    img = np.zeros((block.shape[2],) + tuple(dims), dtype=np.float64)
    return _aggregate_kernel()(block, orow, ocol, p, img)


def extract_all(x, cfg: PatchConfig) -> np.ndarray:
    data = x.data if isinstance(x, EchoStack) else np.asarray(x)
    return extract_channels(to_channels(data), cfg)


def extract(x, cfg: PatchConfig, i: int) -> PatchMatrix:
    """The ``i``-th patch of every echo as one real matrix."""
    data = x.data if isinstance(x, EchoStack) else np.asarray(x)
    orow, ocol = patch_origins(cfg, data.shape[1:])
    npatch = orow.size * ocol.size
    if not 0 <= i < npatch:
        raise IndexError(f"patch index {i} out of range [0, {npatch})")
    a, b = divmod(i, ocol.size)
    h, w = data.shape[1:]
    p = cfg.patch_size
    rows = (orow[a] + np.arange(p)) % h
    cols = (ocol[b] + np.arange(p)) % w
    xr = to_channels(data)
    sub = xr[:, rows[:, None], cols[None, :]]  # (C, p, p) indexed [ch, rr, cc]
    values = sub.transpose(2, 1, 0).reshape(p * p, -1)
    return PatchMatrix(values, i, (int(orow[a]), int(ocol[b])))


def aggregate(patches, cfg: PatchConfig, dims) -> EchoStack:
    """Sum every patch back onto the pixels it covers.

    ``patches`` is either the stacked ``(p**2, n_patches, 2n)`` array or a
    complete sequence of :class:`PatchMatrix`.
    """
    if isinstance(patches, np.ndarray):
        block = patches
    else:
        patches = sorted(patches, key=lambda pm: pm.patch_index)
        expected = n_patches(cfg, dims)
        if [pm.patch_index for pm in patches] != list(range(expected)):
            raise ValueError(f"incomplete patch set: need indices 0..{expected - 1}")
        block = np.stack([pm.values for pm in patches], axis=1)
    return EchoStack(from_channels(aggregate_channels(block, cfg, dims)))


def coverage(cfg: PatchConfig, dims) -> np.ndarray:
    """Number of patches covering each pixel."""
    p2 = cfg.patch_size**2
    ones = np.ones((p2, n_patches(cfg, dims), 1))
    return aggregate_channels(ones, cfg, dims)[0]


def uniform_coverage(cfg: PatchConfig, dims):
    """The constant coverage count, or ``None`` when coverage varies."""
    cov = coverage(cfg, dims)
    c = cov.flat[0]
    return float(c) if c > 0 and np.all(cov == c) else None
