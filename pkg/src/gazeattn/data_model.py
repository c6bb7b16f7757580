"""Shared array and dataset types plus their on-disk formats.

Arrays are stored as a JSON header (``<name>.hdr.json``) next to a raw
little-endian float32 C-order payload (``<name>.raw``). Spatial axes are
always (depth, width, height); voxel coordinates in headers and fixation
files use the same order as (z, y, x).

Fixation files are comma-separated text with a ``t,x,y,z,duration`` header
(``z`` may be omitted for 2D data).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, NamedTuple, Optional, Sequence, Union

import numpy as np

PathLike = Union[str, Path]
Shape3 = tuple[int, int, int]

HEADER_SUFFIX = ".hdr.json"
PAYLOAD_SUFFIX = ".raw"
FORMAT_VERSION = 1
AXES = "z,y,x"


class DataFormatError(ValueError):
    """Raised when a file or array violates a type invariant."""


# ---------------------------------------------------------------------------
# array types
# ---------------------------------------------------------------------------


def _as_float32(data, ndim: int, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float32))
    if arr.ndim != ndim:
        raise DataFormatError(f"{what} must have {ndim} dimensions, got shape {arr.shape}")
    if any(s < 1 for s in arr.shape):
        raise DataFormatError(f"{what} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataFormatError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageVolume:
    """Dense ``C x D x W x H`` intensity array. ``D == 1`` means 2D data."""

    data: np.ndarray
    spacing: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "data", _as_float32(self.data, 4, "ImageVolume"))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape[1:])

    @property
    def is_2d(self) -> bool:
        return self.data.shape[1] == 1


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Per-region masks, ``N x D x W x H`` with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float32(self.data, 4, "SegmentationMask")
        if arr.min() < 0 or arr.max() > 1:
            raise DataFormatError("SegmentationMask values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def regions(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape[1:])

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.data == 0) | (self.data == 1)))

    def union(self) -> np.ndarray:
        return self.data.max(axis=0)


@dataclass(frozen=True, eq=False)
class GazeMap:
    """Scalar attention field over a ``D x W x H`` grid, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float32(self.data, 3, "GazeMap")
        if arr.min() < 0 or arr.max() > 1:
            raise DataFormatError("GazeMap values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape)


# Intermediate feature maps (M1, M2, E4, ...) live as torch tensors of shape
# (batch, channels, d, w, h) inside the network modules; no wrapper type.


# ---------------------------------------------------------------------------
# fixations
# ---------------------------------------------------------------------------


class Fixation(NamedTuple):
    """One gaze sample or fixation. Times and durations in milliseconds."""

    t: float
    x: float
    y: float
    z: float
    duration: float
    kind: Literal["raw", "fixation"] = "fixation"

    @property
    def position(self) -> np.ndarray:
        """Voxel position in array order (z, y, x)."""
        return np.array([self.z, self.y, self.x], dtype=np.float64)


@dataclass(frozen=True)
class FixationSequence:
    samples: tuple[Fixation, ...] = ()

    def __post_init__(self):
        samples = tuple(Fixation(*s) for s in self.samples)
        for i, s in enumerate(samples):
            if not all(math.isfinite(v) for v in s[:5]):
                raise DataFormatError(f"row {i + 1}: non-finite value")
            if s.duration < 0:
                raise DataFormatError(f"row {i + 1}: negative duration {s.duration}")
            if i and s.t <= samples[i - 1].t:
                raise DataFormatError(
                    f"row {i + 1}: timestamps must be strictly increasing "
                    f"({samples[i - 1].t} then {s.t})"
                )
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def positions(self) -> np.ndarray:
        """``(n, 3)`` array of (z, y, x) coordinates."""
        if not self.samples:
            return np.zeros((0, 3))
        return np.array([[s.z, s.y, s.x] for s in self.samples], dtype=np.float64)

    def check_bounds(self, shape: Sequence[int]) -> None:
        for i, s in enumerate(self.samples):
            if not _in_bounds(s, shape):
                raise DataFormatError(
                    f"row {i + 1}: coordinate (z={s.z}, y={s.y}, x={s.x}) outside volume {tuple(shape)}"
                )


def _in_bounds(s: Fixation, shape: Sequence[int]) -> bool:
    d, w, h = shape
    return 0 <= s.z <= d - 1 and 0 <= s.y <= w - 1 and 0 <= s.x <= h - 1


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    id: str
    volume: ImageVolume
    mask: Optional[SegmentationMask] = None
    labels: Optional[np.ndarray] = None
    fixations: Optional[FixationSequence] = None
    gaze_map: Optional[GazeMap] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mask is None and self.labels is None:
            raise DataFormatError(f"record {self.id}: needs a mask or labels")
        if self.mask is not None and self.mask.shape != self.volume.shape:
            raise DataFormatError(
                f"record {self.id}: mask shape {self.mask.shape} != volume shape {self.volume.shape}"
            )
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.float32)
            if not np.all((labels == 0) | (labels == 1)):
                raise DataFormatError(f"record {self.id}: labels must be 0/1")
            object.__setattr__(self, "labels", labels)
        if self.gaze_map is not None:
            ratios = [v // g if g and v % g == 0 else None
                      for v, g in zip(self.volume.shape, self.gaze_map.shape)]
            if None in ratios:
                raise DataFormatError(
                    f"record {self.id}: gaze map {self.gaze_map.shape} does not divide "
                    f"volume {self.volume.shape}"
                )


# ---------------------------------------------------------------------------
# array container IO
# ---------------------------------------------------------------------------


def _paths(path: PathLike) -> tuple[Path, Path]:
    p = Path(path)
    name = p.name
    for suffix in (HEADER_SUFFIX, PAYLOAD_SUFFIX):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return p.with_name(name + HEADER_SUFFIX), p.with_name(name + PAYLOAD_SUFFIX)


def write_array(array: np.ndarray, path: PathLike, kind: str = "array") -> Path:
    """Write a float32 array as header + raw payload and return the header path."""
    arr = np.asarray(array)
    if not np.all(np.isfinite(arr)):
        raise DataFormatError("refusing to write non-finite data")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header_path, payload_path = _paths(path)
    header = {
        "format": "gazeattn-array",
        "version": FORMAT_VERSION,
        "kind": kind,
        "dtype": "float32",
        "byte_order": "little",
        "order": "C",
        "axes": AXES,
        "shape": list(arr.shape),
        "payload": payload_path.name,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(arr.tobytes(order="C"))
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    return header_path


def read_array(path: PathLike) -> tuple[np.ndarray, dict]:
    header_path, payload_path = _paths(path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{header_path}: malformed header: {exc}") from None
    if header.get("dtype") != "float32":
        raise DataFormatError(f"{header_path}: unknown dtype {header.get('dtype')!r}")
    if header.get("byte_order", "little") != "little" or header.get("order", "C") != "C":
        raise DataFormatError(f"{header_path}: only little-endian C-order payloads are supported")
    shape = tuple(int(s) for s in header["shape"])
    payload_path = header_path.with_name(header.get("payload", payload_path.name))
    raw = payload_path.read_bytes()
    expected = 4 * int(np.prod(shape))
    if len(raw) != expected:
        raise DataFormatError(
            f"{payload_path}: payload length {len(raw)} bytes, header shape {shape} needs {expected}"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise DataFormatError(f"{payload_path}: payload contains NaN or inf")
    return arr, header


def write_volume(volume: ImageVolume, path: PathLike) -> Path:
    return write_array(volume.data, path, kind="volume")


def read_volume(path: PathLike) -> ImageVolume:
    arr, header = read_array(path)
    if arr.ndim != 4:
        raise DataFormatError(f"{path}: volume header must declare 4 dimensions, got {arr.shape}")
    return ImageVolume(arr)


def write_mask(mask: SegmentationMask, path: PathLike) -> Path:
    return write_array(mask.data, path, kind="mask")


def read_mask(path: PathLike) -> SegmentationMask:
    arr, _ = read_array(path)
    return SegmentationMask(arr)


def write_gaze_map(gaze: GazeMap, path: PathLike) -> Path:
    return write_array(gaze.data, path, kind="gaze")


def read_gaze_map(path: PathLike) -> GazeMap:
    arr, _ = read_array(path)
    return GazeMap(arr)


def read_shape(path: PathLike) -> Shape3:
    """Spatial shape (D, W, H) declared by a volume/mask header."""
    header_path, _ = _paths(path)
    shape = json.loads(header_path.read_text())["shape"]
    return tuple(int(s) for s in shape[-3:])


# ---------------------------------------------------------------------------
# fixation IO
# ---------------------------------------------------------------------------

FIXATION_COLUMNS = ("t", "x", "y", "z", "duration")


def read_fixations(
    path: PathLike,
    shape: Optional[Sequence[int]] = None,
    kind: Literal["raw", "fixation"] = "fixation",
) -> FixationSequence:
    """Load a fixation/gaze-sample file.

    Row numbers in error messages count data rows from 1 (the header row is
    not counted).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = {"t", "x", "y", "duration"} - set(fields)
        if missing:
            raise DataFormatError(f"{path}: missing columns {sorted(missing)}")
        samples = []
        for i, row in enumerate(reader, start=1):
            try:
                z = float(row["z"]) if row.get("z") not in (None, "") else 0.0
                s = Fixation(float(row["t"]), float(row["x"]), float(row["y"]), z,
                             float(row["duration"]), kind)
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}: malformed row {i}: {row}") from None
            if shape is not None and not _in_bounds(s, shape):
                raise DataFormatError(
                    f"{path}: row {i} coordinate (z={s.z}, y={s.y}, x={s.x}) outside volume {tuple(shape)}"
                )
            if samples and s.t <= samples[-1].t:
                raise DataFormatError(
                    f"{path}: row {i}: timestamps must be strictly increasing ({samples[-1].t} then {s.t})"
                )
            samples.append(s)
    return FixationSequence(tuple(samples))


def write_fixations(fixations: Iterable[Fixation], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIXATION_COLUMNS)
        for s in fixations:
            writer.writerow([repr(float(v)) for v in (s.t, s.x, s.y, s.z, s.duration)])
    return path
