"""Voxel-grid data model and bit-exact MAV1 binary I/O.

MAV1 layout (little-endian throughout):

    bytes 0-3    ASCII magic "MAV1"
    byte  4      dtype code: 1=U8, 2=U16, 3=F32
    bytes 5-7    reserved, written as zero
    bytes 8-31   three u64 dims (nx, ny, nz)
    bytes 32-55  three f64 spacings in mm (sx, sy, sz)
    bytes 56-    raw payload, x-fastest (flat index = x + nx*(y + ny*z))

Total file size is always 56 + nx*ny*nz*width.  Volumes are immutable
after construction; all operations hand back new objects.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadDtype,
    BadMagic,
    DimsMismatch,
    InvalidHeader,
    IoFailure,
    NonFiniteData,
    SpacingMismatch,
    TruncatedPayload,
)

MAGIC = b"MAV1"
HEADER_SIZE = 56


class Dtype(enum.Enum):
    U8 = 1
    U16 = 2
    F32 = 3

    @property
    def width(self) -> int:
        return {Dtype.U8: 1, Dtype.U16: 2, Dtype.F32: 4}[self]

    @property
    def numpy_dtype(self) -> np.dtype:
        return {Dtype.U8: np.dtype("<u1"),
                Dtype.U16: np.dtype("<u2"),
                Dtype.F32: np.dtype("<f4")}[self]

    @classmethod
    def from_code(cls, code: int) -> "Dtype":
        try:
            return cls(code)
        except ValueError:
            raise BadDtype(f"unknown dtype code {code}") from None

    @classmethod
    def from_numpy(cls, dt: np.dtype) -> "Dtype":
        dt = np.dtype(dt)
        for member in cls:
            if member.numpy_dtype == dt.newbyteorder("<"):
                return member
        raise BadDtype(f"unsupported numpy dtype {dt}")


@dataclass(frozen=True)
class VolumeHeader:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    dtype: Dtype

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise InvalidHeader(f"dims must be three integers >= 1, got {self.dims}")
        if len(self.spacing) != 3 or any(
            not np.isfinite(s) or s <= 0 for s in self.spacing
        ):
            raise InvalidHeader(f"spacing must be three finite reals > 0, got {self.spacing}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid. ``data`` is indexed [x, y, z] and is read-only."""

    header: VolumeHeader
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.shape != self.header.dims:
            raise InvalidHeader(
                f"data shape {arr.shape} does not match dims {self.header.dims}"
            )
        want = self.header.dtype.numpy_dtype
        if arr.dtype != want:
            raise BadDtype(f"data dtype {arr.dtype} does not match header {want}")
        if self.header.dtype is Dtype.F32 and not np.isfinite(arr).all():
            raise NonFiniteData("F32 volume contains NaN/Inf")
        arr = arr.view()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(
        cls,
        data: np.ndarray,
        spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    ) -> "Volume":
        arr = np.ascontiguousarray(data)
        dtype = Dtype.from_numpy(arr.dtype)
        header = VolumeHeader(dims=tuple(arr.shape), spacing=spacing, dtype=dtype)
        return cls(header=header, data=arr.astype(dtype.numpy_dtype, copy=False))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.header.dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.header.spacing


@dataclass(frozen=True)
class LabelVolume:
    """U16 segmentation volume with labels in {0..num_labels}; 0 = background."""

    volume: Volume
    num_labels: int

    def __post_init__(self):
        if self.volume.header.dtype is not Dtype.U16:
            raise BadDtype("LabelVolume requires a U16 volume")
        if self.num_labels < 0:
            raise InvalidHeader("num_labels must be >= 0")
        if self.volume.data.size and int(self.volume.data.max()) > self.num_labels:
            raise InvalidHeader(
                f"label {int(self.volume.data.max())} exceeds num_labels={self.num_labels}"
            )

    @classmethod
    def from_array(cls, data, num_labels, spacing=(1.0, 1.0, 1.0)) -> "LabelVolume":
        return cls(Volume.from_array(np.asarray(data, dtype="<u2"), spacing), num_labels)

    @property
    def data(self) -> np.ndarray:
        return self.volume.data

    @property
    def dims(self):
        return self.volume.dims

    @property
    def spacing(self):
        return self.volume.spacing


@dataclass(frozen=True)
class TrustMask:
    """U8 binary volume; 1 marks voxels where an atlas is trusted."""

    volume: Volume

    def __post_init__(self):
        if self.volume.header.dtype is not Dtype.U8:
            raise BadDtype("TrustMask requires a U8 volume")
        if self.volume.data.size and int(self.volume.data.max()) > 1:
            raise InvalidHeader("TrustMask values must be 0 or 1")

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0)) -> "TrustMask":
        return cls(Volume.from_array(np.asarray(data, dtype="<u1"), spacing))

    @property
    def data(self) -> np.ndarray:
        return self.volume.data

    @property
    def dims(self):
        return self.volume.dims

    @property
    def spacing(self):
        return self.volume.spacing


@dataclass(frozen=True)
class TrustMap:
    """F32 volume of per-voxel trust scores in [0, 1]."""

    volume: Volume

    def __post_init__(self):
        if self.volume.header.dtype is not Dtype.F32:
            raise BadDtype("TrustMap requires an F32 volume")
        d = self.volume.data
        if d.size and (float(d.min()) < 0.0 or float(d.max()) > 1.0):
            raise InvalidHeader("TrustMap values must lie in [0, 1]")

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0)) -> "TrustMap":
        return cls(Volume.from_array(np.asarray(data, dtype="<f4"), spacing))

    @property
    def data(self) -> np.ndarray:
        return self.volume.data

    @property
    def dims(self):
        return self.volume.dims

    @property
    def spacing(self):
        return self.volume.spacing


def flat_index(dims: tuple[int, int, int], x: int, y: int, z: int) -> int:
    """Flat offset of voxel (x, y, z): x + nx*(y + ny*z)."""
    nx, ny, _ = dims
    return x + nx * (y + ny * z)


def coords_of(dims: tuple[int, int, int], index: int) -> tuple[int, int, int]:
    """Inverse of :func:`flat_index`."""
    nx, ny, _ = dims
    x = index % nx
    rest = index // nx
    return x, rest % ny, rest // ny


def write_volume(volume: Volume, path) -> None:
    """Write ``volume`` in the bit-exact MAV1 layout."""
    hdr = volume.header
    head = (
        MAGIC
        + bytes([hdr.dtype.value, 0, 0, 0])
        + struct.pack("<3Q", *hdr.dims)
        + struct.pack("<3d", *hdr.spacing)
    )
    payload = np.ascontiguousarray(volume.data.ravel(order="F")).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(head)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_volume(path) -> Volume:
    """Read a MAV1 file, validating magic, dtype, and payload size."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER_SIZE or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a MAV1 file")
    dtype = Dtype.from_code(raw[4])
    dims = struct.unpack("<3Q", raw[8:32])
    spacing = struct.unpack("<3d", raw[32:56])
    header = VolumeHeader(dims=dims, spacing=spacing, dtype=dtype)
    expected = header.voxel_count * dtype.width
    payload = raw[HEADER_SIZE:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype=dtype.numpy_dtype)
    data = flat.reshape(header.dims, order="F")
    return Volume(header=header, data=data)


def _as_volume(obj) -> Volume:
    """Unwrap LabelVolume/TrustMask/TrustMap down to the raw Volume."""
    return obj if isinstance(obj, Volume) else obj.volume


def validate_compatible(volumes) -> None:
    """Raise unless all volumes share dims and (bit-exact) spacing.

    Accepts raw Volumes or any of the typed wrappers.
    """
    vols = [_as_volume(v) for v in volumes]
    if not vols:
        raise ValueError("validate_compatible needs at least one volume")
    first = vols[0].header
    for v in vols[1:]:
        if v.header.dims != first.dims:
            raise DimsMismatch(f"dims {v.header.dims} != {first.dims}")
        if v.header.spacing != first.spacing:
            raise SpacingMismatch(f"spacing {v.header.spacing} != {first.spacing}")
