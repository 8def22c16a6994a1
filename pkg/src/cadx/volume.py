"""Volume container I/O, isotropic resampling and fixed-size cube cropping.

Volumes are stored on disk as a directory holding ``meta.json``
(``{"dims": [nx, ny, nz], "spacing": [sx, sy, sz]}``) and ``data.raw``
(little-endian float32, x fastest, then y, then z).  In memory the voxels
live in a C-ordered array of shape ``(nz, ny, nx)``, which is the same byte
order.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .utils import atomic_write_bytes, atomic_write_text

#: Fill value for cube voxels that fall outside the source volume (air, HU).
PAD_VALUE = -1024.0

MANIFEST_HEADER = ["volume_id", "cx", "cy", "cz", "label"]


class VolumeError(Exception):
    """Base class for volume container problems."""


class VolumeMetadataError(VolumeError, ValueError):
    """``meta.json`` is unreadable or does not describe a valid volume."""


class VolumeSizeError(VolumeError, ValueError):
    """``data.raw`` does not hold exactly nx*ny*nz float32 values."""


@dataclass(frozen=True, eq=False)
class Volume:
    """3D scalar raster with physical voxel spacing in mm.

    ``data`` has shape ``(nz, ny, nx)``; ``dims`` is reported as
    ``(nx, ny, nz)`` to match the on-disk metadata.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be three finite positive numbers, got {self.spacing}")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    def __getitem__(self, xyz):
        x, y, z = xyz
        return self.data[z, y, x]

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class NoduleRef:
    volume_id: str
    center: tuple[int, int, int]
    label: int
    nodule_id: str = field(default="")

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if any(c < 0 for c in self.center):
            raise ValueError(f"center must be non-negative, got {self.center}")
        if not self.nodule_id:
            object.__setattr__(self, "nodule_id", self.volume_id)


# --------------------------------------------------------------------- I/O


def write_volume(volume: Volume, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    raw = volume.data.astype("<f4").tobytes(order="C")
    atomic_write_bytes(path / "data.raw", raw)
    meta = {"dims": list(volume.dims), "spacing": list(volume.spacing)}
    atomic_write_text(path / "meta.json", json.dumps(meta) + "\n")
    return path


def load_volume(path: str | os.PathLike) -> Volume:
    """Read a volume container directory.

    Raises
    ------
    FileNotFoundError
        ``meta.json`` or ``data.raw`` is missing.
    VolumeMetadataError
        Metadata is not valid JSON or has bad dims/spacing.
    VolumeSizeError
        The raw payload size disagrees with the metadata.
    """
    path = Path(path)
    meta_path, raw_path = path / "meta.json", path / "data.raw"
    for p in (meta_path, raw_path):
        if not p.is_file():
            raise FileNotFoundError(f"volume container {path}: missing {p.name}")

    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        dims = [int(d) for d in meta["dims"]]
        spacing = [float(s) for s in meta["spacing"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise VolumeMetadataError(f"{meta_path}: malformed metadata ({exc})") from exc
    if len(dims) != 3 or any(d < 1 for d in dims) or any(float(d) != v for d, v in zip(dims, meta["dims"])):
        raise VolumeMetadataError(f"{meta_path}: dims must be three positive integers, got {meta['dims']}")
    if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
        raise VolumeMetadataError(f"{meta_path}: spacing must be three finite positive numbers, got {meta['spacing']}")

    nx, ny, nz = dims
    payload = raw_path.read_bytes()
    expected = nx * ny * nz * 4
    if len(payload) != expected:
        raise VolumeSizeError(
            f"{raw_path}: expected {expected} bytes ({nx}x{ny}x{nz} float32), found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(nz, ny, nx)
    return Volume(data, tuple(spacing))


def read_manifest(path: str | os.PathLike) -> list[NoduleRef]:
    """Parse a ``volume_id,cx,cy,cz,label`` nodule manifest.

    Repeated volume ids get ``#k`` suffixes on their ``nodule_id`` so that
    every nodule has a unique identifier.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MANIFEST_HEADER)}, got {reader.fieldnames}")
        rows = list(reader)

    counts: dict[str, int] = {}
    for row in rows:
        counts[row["volume_id"]] = counts.get(row["volume_id"], 0) + 1
    seen: dict[str, int] = {}
    refs = []
    for row in rows:
        vid = row["volume_id"]
        k = seen.get(vid, 0)
        seen[vid] = k + 1
        nodule_id = vid if counts[vid] == 1 else f"{vid}#{k}"
        refs.append(
            NoduleRef(
                volume_id=vid,
                center=(int(row["cx"]), int(row["cy"]), int(row["cz"])),
                label=int(row["label"]),
                nodule_id=nodule_id,
            )
        )
    return refs


def write_manifest(refs, path: str | os.PathLike) -> None:
    lines = [",".join(MANIFEST_HEADER)]
    for r in refs:
        cx, cy, cz = r.center
        lines.append(f"{r.volume_id},{cx},{cy},{cz},{r.label}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ------------------------------------------------------------ processing


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _linear_axis(data: np.ndarray, axis: int, coords: np.ndarray) -> np.ndarray:
    n = data.shape[axis]
    coords = np.clip(coords, 0.0, n - 1)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    w = coords - lo
    shape = [1] * data.ndim
    shape[axis] = -1
    w = w.reshape(shape)
    a = np.take(data, lo, axis=axis)
    b = np.take(data, hi, axis=axis)
    return a + w * (b - a)


def resample_isotropic(volume: Volume) -> Volume:
    """Resample to 1 x 1 x 1 mm voxels by trilinear interpolation.

    Output voxel ``i`` along an axis sits at physical ``i`` mm, i.e. source
    index ``i / s``; samples beyond the last source voxel clamp to it.
    """
    if volume.spacing == (1.0, 1.0, 1.0):
        return volume
    out = volume.data
    # data axes are (z, y, x); spacing is (sx, sy, sz)
    for axis, s in zip((2, 1, 0), volume.spacing):
        n = out.shape[axis]
        m = max(1, _round_half_up(n * s))
        out = _linear_axis(out, axis, np.arange(m, dtype=np.float64) / s)
    return Volume(out, (1.0, 1.0, 1.0))


def crop_cube(volume: Volume, center, side: int = 64) -> Volume:
    """Cut a ``side``^3 cube starting at ``center - side // 2`` on each axis.

    Voxels outside the source are filled with :data:`PAD_VALUE`.
    """
    if volume.spacing != (1.0, 1.0, 1.0):
        raise ValueError("crop_cube expects an isotropic 1 mm volume; call resample_isotropic first")
    side = int(side)
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    out = np.full((side, side, side), PAD_VALUE)
    src = volume.data
    # center is (cx, cy, cz); array axes are (z, y, x)
    dst_sl, src_sl = [], []
    for c, n in zip(reversed(tuple(int(v) for v in center)), src.shape):
        start = c - side // 2
        lo, hi = max(start, 0), min(start + side, n)
        if hi <= lo:
            return Volume(out)
        src_sl.append(slice(lo, hi))
        dst_sl.append(slice(lo - start, hi - start))
    out[tuple(dst_sl)] = src[tuple(src_sl)]
    return Volume(out)


def load_nodule_cube(dataset_dir: str | os.PathLike, ref: NoduleRef, side: int = 64) -> Volume:
    """Load, resample and crop the cube for one manifest entry."""
    vol = load_volume(Path(dataset_dir) / "volumes" / ref.volume_id)
    return crop_cube(resample_isotropic(vol), ref.center, side)
