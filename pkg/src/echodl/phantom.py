"""Synthetic multi-echo T2-decay phantom.

Each region is an ellipse with a proton density and a T2. Echo ``j`` (0-based)
of a pixel inside the last covering region is ``rho * exp(-(j + 1) * dte / t2)``.
A smooth linear phase ramp, drawn from the seed, multiplies every echo so the
images are genuinely complex; magnitudes are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kspace import EchoStack


@dataclass(frozen=True)
class Region:
    """Ellipse in normalized coordinates ``[-1, 1]^2`` (row axis first)."""

    center: tuple
    axes: tuple
    angle_deg: float
    proton_density: float
    t2_ms: float

    def __post_init__(self):
        if self.t2_ms <= 0:
            raise ValueError("t2_ms must be positive")
        if min(self.axes) <= 0:
            raise ValueError(f"degenerate ellipse axes {self.axes}")


def default_regions():
    # cross-section loosely shaped like a cord in CSF: body, cord, two gray horns, a canal
    return (
        Region((0.0, 0.0), (0.85, 0.70), 0.0, 0.6, 120.0),
        Region((0.0, 0.0), (0.60, 0.45), 10.0, 0.9, 45.0),
        Region((-0.08, -0.18), (0.28, 0.12), 60.0, 1.0, 70.0),
        Region((-0.08, 0.18), (0.28, 0.12), -60.0, 1.0, 70.0),
    )


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 256
    n_echoes: int = 8
    echo_spacing_ms: float = 6.738
    regions: tuple = field(default_factory=default_regions)
    seed: int = 0
    phase_ramp: float = 0.5

    def __post_init__(self):
        if self.size < 1 or self.n_echoes < 1:
            raise ValueError("size and n_echoes must be >= 1")
        if self.echo_spacing_ms <= 0:
            raise ValueError("echo_spacing_ms must be positive")


def region_label_map(spec: PhantomSpec) -> np.ndarray:
    """Index of the last region covering each pixel, ``-1`` for background."""
    n = spec.size
    coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    rr, cc = np.meshgrid(coords, coords, indexing="ij")
    labels = np.full((n, n), -1, dtype=np.int64)
    for k, reg in enumerate(spec.regions):
        t = np.deg2rad(reg.angle_deg)
        dr, dc = rr - reg.center[0], cc - reg.center[1]
        u = dr * np.cos(t) + dc * np.sin(t)
        v = -dr * np.sin(t) + dc * np.cos(t)
        inside = (u / reg.axes[0]) ** 2 + (v / reg.axes[1]) ** 2 <= 1.0
        labels[inside] = k
    return labels


def phase_map(spec: PhantomSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    a, b = rng.uniform(-spec.phase_ramp, spec.phase_ramp, size=2)
    c0 = rng.uniform(0, 2 * np.pi)
    coords = (np.arange(spec.size) + 0.5) / spec.size * 2.0 - 1.0
    rr, cc = np.meshgrid(coords, coords, indexing="ij")
    return c0 + a * np.pi * rr + b * np.pi * cc


def make_phantom(spec: PhantomSpec = PhantomSpec()) -> EchoStack:
    """Render the echo train as a complex64 stack ``(n_echoes, size, size)``."""
    labels = region_label_map(spec)
    rho = np.array([r.proton_density for r in spec.regions])
    t2 = np.array([r.t2_ms for r in spec.regions])
    echo_idx = np.arange(1, spec.n_echoes + 1)
    # (n_echoes, n_regions) intensity table
    table = rho[None, :] * np.exp(-echo_idx[:, None] * spec.echo_spacing_ms / t2[None, :])
    table = np.concatenate([table, np.zeros((spec.n_echoes, 1))], axis=1)
    mag = table[:, labels]  # label -1 picks the trailing zero column
    img = mag * np.exp(1j * phase_map(spec))[None]
    return EchoStack(img.astype(np.complex64))
