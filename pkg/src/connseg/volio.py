"""Raw + JSON volume files.

A volume ``stem`` is stored as two files::

    stem.json   UTF-8 header, keys sorted
    stem.raw    little-endian payload, C order (channel, Z, H, W)

See ``docs/format.md`` for the full layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, VolumeIOError

DTYPES = {"u8": np.dtype("<u1"), "f32": np.dtype("<f4")}
KINDS = ("intensity", "mask", "distance", "probability")
DEFAULT_DTYPE = {"intensity": "f32", "mask": "u8", "distance": "f32", "probability": "f32"}


class VolumeFormatError(VolumeIOError):
    pass


class MalformedHeaderError(VolumeFormatError):
    pass


class UnknownDtypeError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


@dataclass(frozen=True)
class VolumeHeader:
    shape: tuple[int, int, int]
    dtype: str
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = "intensity"
    channels: int = 1
    byte_order: str = "little"

    @property
    def array_shape(self) -> tuple[int, ...]:
        return self.shape if self.channels == 1 else (self.channels, *self.shape)

    @property
    def payload_size(self) -> int:
        return math.prod(self.shape) * self.channels * DTYPES[self.dtype].itemsize

    def to_json(self) -> str:
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["spacing"] = list(self.spacing)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".raw") else p


def write_volume(stem, data, kind: str = "intensity", spacing=(1.0, 1.0, 1.0), dtype: str | None = None) -> VolumeHeader:
    """Write ``data`` (``(Z,H,W)`` or ``(C,Z,H,W)``) and return its header.

    ``f32`` payloads are stored as float32; pass float32 data for a
    bit-exact round trip. Masks must hold only 0 and 1.
    """
    if kind not in KINDS:
        raise InputError(f"unknown kind {kind!r}; expected one of {KINDS}")
    dtype = dtype or DEFAULT_DTYPE[kind]
    if dtype not in DTYPES:
        raise InputError(f"unknown dtype {dtype!r}; expected one of {tuple(DTYPES)}")
    arr = np.asarray(data)
    if arr.ndim == 3:
        channels, shape = 1, arr.shape
    elif arr.ndim == 4:
        channels, shape = arr.shape[0], arr.shape[1:]
    else:
        raise InputError(f"volume data must be 3-D or 4-D, got shape {arr.shape}")
    if kind == "mask" and not np.isin(arr, (0, 1)).all():
        raise InputError("mask volumes must contain only 0 and 1")
    if dtype == "u8" and arr.dtype.kind == "f" and not np.array_equal(arr, np.round(arr)):
        raise InputError("non-integer data cannot be stored as u8")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(s > 0 for s in spacing):
        raise InputError(f"spacing must be three positive reals, got {spacing}")

    header = VolumeHeader(tuple(int(n) for n in shape), dtype, spacing, kind, int(channels))
    payload = np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes()
    if len(payload) != header.payload_size:
        raise InputError("payload size does not match header")
    stem = _stem(stem)
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".raw").write_bytes(payload)
        stem.with_suffix(".json").write_text(header.to_json(), encoding="utf-8")
    except OSError as exc:
        raise VolumeIOError(f"cannot write volume {stem}: {exc}") from exc
    return header


def read_header(stem) -> VolumeHeader:
    path = _stem(stem).with_suffix(".json")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise VolumeIOError(f"cannot read {path}: {exc}") from exc
    try:
        d = json.loads(text)
        if d.get("dtype") not in DTYPES:
            raise UnknownDtypeError(f"{path}: unknown dtype {d.get('dtype')!r}")
        header = VolumeHeader(
            shape=tuple(int(n) for n in d["shape"]),
            dtype=d["dtype"],
            spacing=tuple(float(s) for s in d["spacing"]),
            kind=d["kind"],
            channels=int(d["channels"]),
            byte_order=d["byte_order"],
        )
    except VolumeFormatError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise MalformedHeaderError(f"{path}: malformed header ({exc})") from exc
    if (
        len(header.shape) != 3
        or min(header.shape) < 1
        or header.channels < 1
        or header.kind not in KINDS
        or header.byte_order != "little"
        or len(header.spacing) != 3
    ):
        raise MalformedHeaderError(f"{path}: inconsistent header fields")
    return header


def read_volume(stem) -> tuple[VolumeHeader, np.ndarray]:
    """Read a volume, validating the payload size against the header."""
    header = read_header(stem)
    path = _stem(stem).with_suffix(".raw")
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise VolumeIOError(f"cannot read {path}: {exc}") from exc
    if len(payload) != header.payload_size:
        raise TruncatedPayloadError(f"{path}: expected {header.payload_size} bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype=DTYPES[header.dtype]).reshape(header.array_shape).copy()
    if header.kind == "mask" and not np.isin(data, (0, 1)).all():
        raise VolumeFormatError(f"{path}: mask payload holds values other than 0/1")
    return header, data
