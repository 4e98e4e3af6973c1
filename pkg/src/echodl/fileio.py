"""Dataset file format and PNG export.

Layout of a dataset file::

    MECDATA 1 <header_bytes>\\n
    <header: UTF-8 JSON, sorted keys, exactly header_bytes long>
    <payload: little-endian float32 (real, imag) pairs>

The payload is a ``(n, height, width)`` complex grid, echo-major then
row-major, so it always holds ``2 * 4 * height * width * n`` bytes.

Roles:

``images``
    An :class:`~echodl.kspace.EchoStack`.
``kspace``
    :class:`~echodl.kspace.AcquiredData`: the zero-filled centered K-space
    grid per echo; the header lists each echo's sampled lines.
``mask``
    One :class:`~echodl.kspace.SamplingMask` (``n = 1``, payload 1+0j on
    sampled rows).

Values are stored as complex64: saving a complex128 stack quantizes it.
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

from .kspace import AcquiredData, EchoStack, SamplingMask

MAGIC = b"MECDATA"
VERSION = 1
ROLES = ("images", "kspace", "mask")


class DatasetFormatError(ValueError):
    pass


class TruncatedFileError(DatasetFormatError):
    """File ends before the header is complete."""


class PayloadSizeError(DatasetFormatError):
    """Payload length disagrees with the header dimensions."""


class UnknownRoleError(DatasetFormatError):
    pass


def _mask_meta(m: SamplingMask):
    return {
        "lines": [int(v) for v in m.selected_lines],
        "center_fraction": float(m.center_fraction),
        "seed": int(m.seed),
    }


def _encode(obj, meta):
    if isinstance(obj, EchoStack):
        grid = obj.data
        header = {"role": "images"}
    elif isinstance(obj, AcquiredData):
        grid = obj.zero_filled_kspace()
        header = {
            "role": "kspace",
            "noise_sigma": float(obj.noise_sigma),
            "masks": [_mask_meta(m) for m in obj.masks],
        }
    elif isinstance(obj, SamplingMask):
        grid = obj.as_array()[None].astype(np.complex64)
        header = {"role": "mask", "mask": _mask_meta(obj)}
    else:
        raise TypeError(f"cannot save object of type {type(obj).__name__}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("refusing to save non-finite values")
    n, h, w = grid.shape
    header.update(
        {
            "n": n,
            "height": h,
            "width": w,
            "dtype": "complex64-pairs",
            "byte_order": "little-endian",
            "meta": meta or {},
        }
    )
    payload = np.ascontiguousarray(grid, dtype="<c8").tobytes()
    return header, payload


def to_bytes(obj, meta=None) -> bytes:
    header, payload = _encode(obj, meta)
    text = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    return b"%s %d %d\n" % (MAGIC, VERSION, len(text)) + text + payload


def save(path, obj, meta=None):
    """Write ``obj`` to ``path``. ``meta`` is an optional JSON-able dict kept in the header."""
    data = to_bytes(obj, meta)
    with open(path, "wb") as fh:
        fh.write(data)


def read_header(raw: bytes):
    nl = raw.find(b"\n")
    if nl < 0:
        raise TruncatedFileError("missing header line")
    parts = raw[:nl].split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise DatasetFormatError("not a dataset file")
    if int(parts[1]) != VERSION:
        raise DatasetFormatError(f"unsupported version {parts[1].decode()}")
    hlen = int(parts[2])
    start = nl + 1
    if len(raw) < start + hlen:
        raise TruncatedFileError("file ends inside the header")
    header = json.loads(raw[start : start + hlen].decode("utf-8"))
    return header, raw[start + hlen :]


def _mask_from_meta(mm, h, w):
    return SamplingMask(h, w, np.asarray(mm["lines"], dtype=np.int64), mm["center_fraction"], mm["seed"])


def from_bytes(raw: bytes, with_meta=False):
    header, payload = read_header(raw)
    role = header.get("role")
    if role not in ROLES:
        raise UnknownRoleError(f"unknown role tag {role!r}")
    n, h, w = header["n"], header["height"], header["width"]
    expected = 8 * n * h * w
    if len(payload) != expected:
        raise PayloadSizeError(f"payload has {len(payload)} bytes, header implies {expected}")
    grid = np.frombuffer(payload, dtype="<c8").reshape(n, h, w).astype(np.complex64)
    if role == "images":
        obj = EchoStack(grid)
    elif role == "mask":
        obj = _mask_from_meta(header["mask"], h, w)
    else:
        masks = [_mask_from_meta(mm, h, w) for mm in header["masks"]]
        samples = [grid[j, m.selected_lines, :] for j, m in enumerate(masks)]
        obj = AcquiredData(samples, masks, header["noise_sigma"])
    return (obj, header.get("meta", {})) if with_meta else obj


def load(path, with_meta=False):
    with open(path, "rb") as fh:
        raw = fh.read()
    return from_bytes(raw, with_meta)


def export_png(image, path, window=None):
    """Write a real 2-D array as 8-bit grayscale with linear windowing.

    ``window=(lo, hi)`` maps ``lo`` to 0 and ``hi`` to 255; default is
    ``(0, max(image))``. Bytes are ``floor(255 * t + 0.5)`` of the clipped
    fraction ``t``, so 0.5 maps to 128.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("export_png expects a 2-D image")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    lo, hi = window if window is not None else (0.0, float(image.max()))
    span = hi - lo
    if span > 0:
        t = np.clip((image - lo) / span, 0.0, 1.0)
    else:
        # degenerate window: a step at lo
        t = (image > lo).astype(np.float64)
    pixels = np.floor(255.0 * t + 0.5).astype(np.uint8)
    Image.fromarray(pixels).save(os.fspath(path), format="PNG")
    return pixels
