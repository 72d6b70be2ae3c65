"""CT volumes and label masks: NIfTI-1 I/O, axial resampling, XML ground truth.

Grids are numpy arrays indexed ``[i, j, k]`` (x, y, axial z), matching the
on-disk NIfTI order where ``i`` varies fastest.
"""
from __future__ import annotations

import gzip
import math
import struct
import xml.etree.ElementTree as ET
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import GeometryMismatch, InputError

HEADER_SIZE = 348
VOX_OFFSET = 352
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"

# NIfTI-1 datatype codes. uint8 is read-only (common for organ masks).
_CODE_TO_DTYPE = {
    2: np.dtype("u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
}
_NAME_TO_CODE = {"int16": 4, "int32": 8, "float32": 16}


class NiftiError(InputError):
    """Base class for NIfTI parse/serialize failures."""


class BadMagic(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class DimensionMismatch(NiftiError):
    pass


class TruncatedFile(NiftiError):
    pass


class DimensionOverflow(NiftiError):
    pass


class LabelOverflow(NiftiError):
    pass


class SchemaError(InputError):
    pass


class OutOfBounds(InputError):
    pass


class DuplicateVoxel(InputError):
    pass


Vec3 = tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class _Grid:
    data: np.ndarray
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)
    # Raw 348-byte header of the source file; keeps orientation fields on round-trip.
    header: bytes | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"expected a non-empty 3D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise ValueError("spacing and origin need 3 components")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)  # type: ignore[return-value]

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    @property
    def pixel_area(self) -> float:
        return self.spacing[0] * self.spacing[1]

    def same_geometry(self, other: "_Grid") -> bool:
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
        )


@dataclass(frozen=True, eq=False)
class Volume(_Grid):
    """CT attenuation grid in Hounsfield units."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.data.dtype.kind not in "iuf":
            raise ValueError(f"unsupported volume dtype {self.data.dtype}")
        if self.data.dtype.kind == "f" and not np.isfinite(self.data).all():
            raise ValueError("volume contains non-finite HU values")


@dataclass(frozen=True, eq=False)
class LabelMask(_Grid):
    """Integer label grid; 0 is background."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.data.dtype.kind == "b":
            object.__setattr__(self, "data", self.data.astype(np.uint8))
        if self.data.dtype.kind not in "iu":
            raise ValueError(f"label mask needs an integer dtype, got {self.data.dtype}")
        if self.data.size and self.data.min() < 0:
            raise ValueError("label mask contains negative labels")

    @classmethod
    def like(cls, ref: _Grid, data: np.ndarray) -> "LabelMask":
        """New mask carrying ``ref``'s geometry and header."""
        return cls(data, ref.spacing, ref.origin, ref.header)

    def binary(self) -> np.ndarray:
        return self.data != 0

    def labels(self) -> np.ndarray:
        """Sorted distinct nonzero labels."""
        u = np.unique(self.data)
        return u[u != 0]


@dataclass(frozen=True)
class OrganMasks:
    """Binary heart, aorta and lung masks from an external organ segmenter."""

    heart: LabelMask
    aorta: LabelMask
    lungs: LabelMask

    def __post_init__(self) -> None:
        require_same_geometry(self.heart, self.aorta, self.lungs)
        for name in ("heart", "aorta", "lungs"):
            m = getattr(self, name)
            if m.data.size and m.data.max() > 1:
                raise ValueError(f"{name} mask is not binary")


def require_same_geometry(*grids: _Grid) -> None:
    first = grids[0]
    for g in grids[1:]:
        if not first.same_geometry(g):
            raise GeometryMismatch(
                f"grid geometry differs: dims {first.dims} vs {g.dims}, "
                f"spacing {first.spacing} vs {g.spacing}, origin {first.origin} vs {g.origin}"
            )


# ---------------------------------------------------------------- NIfTI-1


def _decompress(data: bytes) -> bytes:
    if data[:2] != b"\x1f\x8b":
        return data
    try:
        return gzip.decompress(data)
    except (EOFError, zlib.error) as exc:
        raise TruncatedFile(f"corrupt or truncated gzip stream: {exc}") from exc


def parse_nifti(
    data: bytes, kind: Literal["auto", "volume", "mask"] = "auto"
) -> Volume | LabelMask:
    """Parse a single-file NIfTI-1 payload (plain or gzipped).

    With ``kind="auto"`` float or scaled data become a :class:`Volume`, and
    unscaled integer data become a :class:`LabelMask` unless negative values
    are present.
    """
    raw = _decompress(bytes(data))
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"{len(raw)} bytes is shorter than the NIfTI-1 header")

    if struct.unpack_from("<i", raw, 0)[0] == HEADER_SIZE:
        end = "<"
    elif struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
        end = ">"
    else:
        raise BadMagic("sizeof_hdr is not 348; not a NIfTI-1 file")
    magic = raw[344:348]
    if magic != _MAGIC_SINGLE:
        if magic == _MAGIC_PAIR:
            raise BadMagic("header/image pair magic 'ni1' found in single-file payload")
        raise BadMagic(f"bad NIfTI-1 magic {magic!r}")

    dim = struct.unpack_from(end + "8h", raw, 40)
    ndim = dim[0]
    if ndim == 3 or (ndim == 4 and dim[4] == 1):
        nx, ny, nz = dim[1:4]
    else:
        raise DimensionMismatch(f"expected a 3D volume, header declares dim={dim[:ndim + 1]}")
    if min(nx, ny, nz) < 1:
        raise DimensionMismatch(f"non-positive dims {(nx, ny, nz)}")

    code = struct.unpack_from(end + "h", raw, 70)[0]
    if code not in _CODE_TO_DTYPE:
        raise UnsupportedDatatype(f"NIfTI datatype code {code} is not supported")
    dtype = _CODE_TO_DTYPE[code].newbyteorder(end)

    pixdim = struct.unpack_from(end + "8f", raw, 76)
    spacing = tuple(float(abs(p)) for p in pixdim[1:4])
    if not all(s > 0 for s in spacing):
        raise DimensionMismatch(f"non-positive voxel spacing {spacing}")

    vox_offset = int(struct.unpack_from(end + "f", raw, 108)[0])
    slope, inter = struct.unpack_from(end + "2f", raw, 112)
    if slope == 0 or not math.isfinite(slope):
        slope = 1.0
    if not math.isfinite(inter):
        inter = 0.0

    qform_code, sform_code = struct.unpack_from(end + "2h", raw, 252)
    qoffset = struct.unpack_from(end + "3f", raw, 268)
    srow = np.array(struct.unpack_from(end + "12f", raw, 280), dtype=np.float64).reshape(3, 4)
    if qform_code <= 0 and sform_code > 0:
        origin = tuple(float(v) for v in srow[:, 3])
    else:
        origin = tuple(float(v) for v in qoffset)

    if vox_offset < HEADER_SIZE or len(raw) < vox_offset:
        raise TruncatedFile(f"file ends before vox_offset {vox_offset}")
    nbytes = nx * ny * nz * dtype.itemsize
    payload = raw[vox_offset:]
    if len(payload) < nbytes:
        raise TruncatedFile(f"payload has {len(payload)} bytes, dims need {nbytes}")
    if len(payload) != nbytes:
        raise DimensionMismatch(f"payload has {len(payload)} bytes, dims need {nbytes}")

    arr = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz), order="F")
    arr = arr.astype(dtype.newbyteorder("="), copy=True)
    scaled = slope != 1.0 or inter != 0.0
    if scaled:
        arr = arr.astype(np.float64) * slope + inter

    header = raw[:HEADER_SIZE] if end == "<" else None
    if kind == "auto":
        is_mask = arr.dtype.kind in "iu" and (arr.size == 0 or arr.min() >= 0)
        kind = "mask" if is_mask else "volume"
    if kind == "volume":
        return Volume(arr, spacing, origin, header)
    if kind == "mask":
        if arr.dtype.kind == "f":
            if not (np.isfinite(arr).all() and (arr >= 0).all() and (arr == np.round(arr)).all()):
                raise InputError("label mask contains non-integer or negative values")
            arr = arr.astype(np.int32)
        elif arr.size and arr.min() < 0:
            raise InputError("label mask contains negative labels")
        return LabelMask(arr, spacing, origin, header)
    raise ValueError(f"unknown kind {kind!r}")


def _fresh_header() -> bytearray:
    h = bytearray(HEADER_SIZE)
    struct.pack_into("<i", h, 0, HEADER_SIZE)
    struct.pack_into("<B", h, 39, 0)
    struct.pack_into("<b", h, 123, 2 | 8)  # mm, s
    struct.pack_into("<2h", h, 252, 1, 1)  # qform/sform: scanner
    struct.pack_into("<f", h, 76, 1.0)  # qfac
    struct.pack_into("<4f", h, 280, 1.0, 0.0, 0.0, 0.0)
    struct.pack_into("<4f", h, 296, 0.0, 1.0, 0.0, 0.0)
    struct.pack_into("<4f", h, 312, 0.0, 0.0, 1.0, 0.0)
    struct.pack_into("<4f", h, 80, 1.0, 1.0, 1.0, 1.0)
    return h


def write_nifti(
    grid: Volume | LabelMask,
    *,
    datatype: Literal["int16", "int32", "float32"] | None = None,
    compress: bool = False,
) -> bytes:
    """Serialize to single-file NIfTI-1 bytes.

    Label masks default to int16 and volumes to float32, both with
    scl_slope 1 / scl_inter 0. A preserved source header keeps its
    orientation fields; sform scales are rescaled if the spacing changed.
    """
    if datatype is None:
        datatype = "int16" if isinstance(grid, LabelMask) else "float32"
    code = _NAME_TO_CODE[datatype]
    dtype = _CODE_TO_DTYPE[code]

    dims = grid.dims
    if max(dims) > 32767:
        raise DimensionOverflow(f"dims {dims} exceed the int16 header field")
    arr = grid.data
    if dtype.kind == "i":
        info = np.iinfo(dtype)
        lo, hi = (int(arr.min()), int(arr.max())) if arr.size else (0, 0)
        if arr.dtype.kind == "f" and not (arr == np.round(arr)).all():
            raise ValueError(f"non-integer values cannot be written as {datatype}")
        if lo < info.min or hi > info.max:
            raise LabelOverflow(f"value range [{lo}, {hi}] does not fit {datatype}")

    h = bytearray(grid.header) if grid.header is not None else _fresh_header()
    old_pixdim = struct.unpack_from("<3f", h, 80)
    struct.pack_into("<i", h, 0, HEADER_SIZE)
    struct.pack_into("<8h", h, 40, 3, *dims, 1, 1, 1, 1)
    struct.pack_into("<3h", h, 70, code, dtype.itemsize * 8, 0)
    struct.pack_into("<3f", h, 80, *grid.spacing)
    struct.pack_into("<3f", h, 108, float(VOX_OFFSET), 1.0, 0.0)
    struct.pack_into("<2f", h, 124, 0.0, 0.0)  # cal_max, cal_min
    struct.pack_into("<3f", h, 268, *grid.origin)
    srow = np.array(struct.unpack_from("<12f", h, 280), dtype=np.float64).reshape(3, 4)
    if grid.header is None:
        srow[:, :3] = np.diag(grid.spacing)
    else:
        for j in range(3):
            if old_pixdim[j] > 0 and old_pixdim[j] != grid.spacing[j]:
                srow[:, j] *= grid.spacing[j] / old_pixdim[j]
    srow[:, 3] = grid.origin
    struct.pack_into("<12f", h, 280, *srow.ravel())
    h[344:348] = _MAGIC_SINGLE

    payload = np.asarray(arr, dtype=dtype).tobytes(order="F")
    out = bytes(h) + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload
    if compress:
        out = gzip.compress(out, mtime=0)
    return out


def read_nifti(path: str | Path, kind: Literal["auto", "volume", "mask"] = "auto") -> Volume | LabelMask:
    return parse_nifti(Path(path).read_bytes(), kind)


def save_nifti(grid: Volume | LabelMask, path: str | Path, **kwargs) -> None:
    """Write ``grid`` to ``path``; gzip when the name ends in ``.gz``."""
    path = Path(path)
    kwargs.setdefault("compress", path.suffix == ".gz")
    path.write_bytes(write_nifti(grid, **kwargs))


# ---------------------------------------------------------------- resampling


def resample_axial(v: Volume, target_thickness: float) -> Volume:
    """Linearly reformat ``v`` to slices ``target_thickness`` mm thick.

    Slice centers sit at ``(k + 0.5) * thickness`` from the start of the
    stack; output centers beyond the first/last input center take the value
    of that edge slice.
    """
    if not target_thickness > 0:
        raise ValueError("target_thickness must be positive")
    nz = v.dims[2]
    dz = v.spacing[2]
    if target_thickness == dz:
        return replace(v, data=v.data.copy())

    nz_out = max(1, math.floor(nz * dz / target_thickness + 0.5))
    centers = (np.arange(nz_out) + 0.5) * target_thickness
    pos = np.clip(centers / dz - 0.5, 0.0, nz - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, nz - 1)
    frac = pos - lo

    src = v.data.astype(np.float64)
    a = src[:, :, lo]
    out = a + (src[:, :, hi] - a) * frac
    # guards against last-ulp overshoot
    out = np.clip(out, src.min(), src.max())
    if v.data.dtype.kind == "f":
        out = out.astype(v.data.dtype)

    origin = (v.origin[0], v.origin[1], v.origin[2] + 0.5 * (target_thickness - dz))
    spacing = (v.spacing[0], v.spacing[1], float(target_thickness))
    return Volume(out, spacing, origin, v.header)


# ---------------------------------------------------------------- XML ground truth


def _int_attr(el: ET.Element, name: str) -> int:
    value = el.get(name)
    if value is None:
        raise SchemaError(f"<voxel> is missing attribute {name!r}")
    try:
        return int(value)
    except ValueError:
        raise SchemaError(f"<voxel> attribute {name}={value!r} is not an integer") from None


def ingest_xml_ground_truth(doc: str | bytes, geometry: _Grid) -> LabelMask:
    """Rasterize ``<plaques><lesion><voxel x= y= z=/>...`` into a label mask.

    Lesions are labelled 1..L in document order; ``id`` attributes are not
    used for labelling.
    """
    try:
        root = ET.fromstring(doc)
    except ET.ParseError as exc:
        raise SchemaError(f"malformed XML: {exc}") from exc
    if root.tag != "plaques":
        raise SchemaError(f"root element must be <plaques>, got <{root.tag}>")

    labels = np.zeros(geometry.dims, dtype=np.int32)
    owner: dict[tuple[int, int, int], int] = {}
    for k, lesion in enumerate(root, start=1):
        if lesion.tag != "lesion":
            raise SchemaError(f"unexpected element <{lesion.tag}> under <plaques>")
        for vox in lesion:
            if vox.tag != "voxel":
                raise SchemaError(f"unexpected element <{vox.tag}> under <lesion>")
            ijk = (_int_attr(vox, "x"), _int_attr(vox, "y"), _int_attr(vox, "z"))
            if not all(0 <= c < n for c, n in zip(ijk, geometry.dims)):
                raise OutOfBounds(f"voxel {ijk} outside dims {geometry.dims}")
            if ijk in owner:
                raise DuplicateVoxel(f"voxel {ijk} claimed by lesions {owner[ijk]} and {k}")
            owner[ijk] = k
            labels[ijk] = k
    return LabelMask.like(geometry, labels)
