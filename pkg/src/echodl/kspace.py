"""Centered unitary Fourier operators and the multi-echo line-undersampling model.

Images are stored as ``(n_echoes, height, width)`` complex arrays. Undersampling
selects whole phase-encode rows of the centered K-space grid (the readout axis,
``width``, is always fully sampled).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np


@dataclass
class EchoStack:
    """Multi-echo image stack of one cross-section."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[0] < 1:
            raise ValueError(f"expected (n_echoes, height, width) array, got shape {data.shape}")
        if not np.iscomplexobj(data):
            data = data.astype(np.complex128)
        if not np.all(np.isfinite(data)):
            raise ValueError("EchoStack samples must be finite")
        self.data = data

    @property
    def n_echoes(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


@dataclass
class SamplingMask:
    """Selection of phase-encode rows, replicated across the readout axis."""

    height: int
    width: int
    selected_lines: np.ndarray
    center_fraction: float = 0.33
    seed: int = 0

    def __post_init__(self):
        lines = np.unique(np.asarray(self.selected_lines, dtype=np.int64))
        if lines.size and (lines[0] < 0 or lines[-1] >= self.height):
            raise ValueError("selected line outside [0, height)")
        self.selected_lines = lines

    @property
    def n_lines(self) -> int:
        return int(self.selected_lines.size)

    def row_mask(self) -> np.ndarray:
        m = np.zeros(self.height, dtype=bool)
        m[self.selected_lines] = True
        return m

    def as_array(self) -> np.ndarray:
        """Dense ``(height, width)`` 0/1 mask."""
        return np.repeat(self.row_mask()[:, None], self.width, axis=1).astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and np.array_equal(self.selected_lines, other.selected_lines)
            and self.center_fraction == other.center_fraction
            and self.seed == other.seed
        )


@dataclass
class AcquiredData:
    """Per-echo undersampled K-space rows and the masks that produced them.

    ``samples[j]`` has shape ``(masks[j].n_lines, width)``; row ``k`` holds
    K-space row ``masks[j].selected_lines[k]``.
    """

    samples: list
    masks: list
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.samples = [np.asarray(s) for s in self.samples]
        if len(self.samples) != len(self.masks):
            raise ValueError(f"{len(self.samples)} sample blocks but {len(self.masks)} masks")
        if not self.masks:
            raise ValueError("at least one echo required")
        h, w = self.masks[0].height, self.masks[0].width
        for y, m in zip(self.samples, self.masks):
            if (m.height, m.width) != (h, w):
                raise ValueError("all masks must share image dimensions")
            if y.shape != (m.n_lines, m.width):
                raise ValueError(f"sample block shape {y.shape} does not match mask ({m.n_lines}, {m.width})")

    @property
    def n_echoes(self) -> int:
        return len(self.masks)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.masks[0].height, self.masks[0].width

    def mask_stack(self) -> np.ndarray:
        """``(n_echoes, height, width)`` 0/1 sampling pattern."""
        return np.stack([m.as_array() for m in self.masks])

    def zero_filled_kspace(self) -> np.ndarray:
        h, w = self.image_shape
        k = np.zeros((self.n_echoes, h, w), dtype=np.complex128)
        for j, (y, m) in enumerate(zip(self.samples, self.masks)):
            k[j, m.selected_lines, :] = y
        return k


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")


def fft2c(image: np.ndarray) -> np.ndarray:
    """Centered unitary 2-D DFT over the last two axes."""
    image = np.asarray(image)
    _check_finite(image)
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(image, axes=axes), norm="ortho"), axes=axes)


def ifft2c(kspace: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    kspace = np.asarray(kspace)
    _check_finite(kspace)
    axes = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(kspace, axes=axes), norm="ortho"), axes=axes)


def center_block_size(n_lines: int, center_fraction: float) -> int:
    # round half up
    return int(math.floor(center_fraction * n_lines + 0.5))


def make_mask(height, n_lines, center_fraction=0.33, seed=0, width=None) -> SamplingMask:
    """Phase-encode line mask: a contiguous center block plus uniform random periphery.

    The center block holds ``round(center_fraction * n_lines)`` rows (ties round
    up) starting at ``height // 2 - n_center // 2``; the remaining lines are
    drawn without replacement from the other rows with
    ``numpy.random.default_rng(seed)``.
    """
    if width is None:
        width = height
    if not 0 < n_lines <= height:
        raise ValueError(f"n_lines must be in (0, {height}], got {n_lines}")
    if not 0 < center_fraction < 1:
        raise ValueError(f"center_fraction must be in (0, 1), got {center_fraction}")
    n_center = center_block_size(n_lines, center_fraction)
    if n_center > n_lines:
        raise ValueError("center block exceeds line budget")
    start = height // 2 - n_center // 2
    center = np.arange(start, start + n_center)
    periphery = np.setdiff1d(np.arange(height), center)
    rng = np.random.default_rng(seed)
    extra = rng.choice(periphery, size=n_lines - n_center, replace=False)
    lines = np.concatenate([center, extra])
    return SamplingMask(height, width, lines, center_fraction, seed)


def forward(x: EchoStack, masks, noise_sigma=0.0, seed=0) -> AcquiredData:
    """Apply ``y_j = R_j F x_j + noise`` echo by echo.

    Noise is circular complex Gaussian with ``E|noise|^2 = noise_sigma**2``.
    """
    masks = list(masks)
    if len(masks) != x.n_echoes:
        raise ValueError(f"{x.n_echoes} echoes but {len(masks)} masks")
    for m in masks:
        if (m.height, m.width) != (x.height, x.width):
            raise ValueError(f"mask dims {(m.height, m.width)} != image dims {(x.height, x.width)}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    k = fft2c(x.data)
    rng = np.random.default_rng(seed) if noise_sigma > 0 else None
    samples = []
    for j, m in enumerate(masks):
        y = k[j, m.selected_lines, :].astype(np.complex128)
        if rng is not None:
            y = y + noise_sigma / np.sqrt(2) * (
                rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
            )
        samples.append(y)
    return AcquiredData(samples, masks, noise_sigma)


def adjoint(d: AcquiredData) -> EchoStack:
    """Zero-filled reconstruction; the exact adjoint of :func:`forward` (noise-free)."""
    return EchoStack(ifft2c(d.zero_filled_kspace()))


zero_filled = adjoint


def per_echo_masks(height, n_lines, n_echoes, base_seed, center_fraction=0.33, width=None):
    """One mask per echo with seed ``base_seed ^ echo_index``."""
    return [
        make_mask(height, n_lines, center_fraction, base_seed ^ j, width=width)
        for j in range(n_echoes)
    ]
