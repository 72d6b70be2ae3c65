"""Synthetic non-contrast chest CT phantoms with planted calcified lesions.

Lesions are axis-aligned ellipsoids rasterized by voxel-centre inclusion,
so their Agatston score is known exactly before any noise or blur is
applied. Randomness comes from numpy's PCG64 bit generator, seeded through
``SeedSequence`` so fixtures reproduce across platforms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .agatston import REFERENCE_THICKNESS_MM, AgatstonReport, density_weight, risk_category
from .errors import InputError
from .lesion import CALCIUM_THRESHOLD_HU
from .volume_io import LabelMask, OrganMasks, Volume


class SpecError(InputError):
    pass


@dataclass(frozen=True)
class Box:
    """Half-open voxel box ``lo <= ijk < hi``."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))  # type: ignore[return-value]


@dataclass(frozen=True)
class PlantedLesion:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    hu: float


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (0.5, 0.5, 3.0)
    background_hu: float = 40.0
    lesions: tuple[PlantedLesion, ...] = ()
    heart: Box | None = None
    aorta: Box | None = None
    lungs: tuple[Box, ...] = ()
    noise_sigma_hu: float = 0.0
    motion_blur: int = 0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PhantomSpec":
        """Build from the JSON layout; raises :class:`SpecError` on bad fields."""
        if not isinstance(d, dict):
            raise SpecError("phantom spec must be a JSON object")
        unknown = set(d) - {
            "dims", "spacing", "background_hu", "lesions", "heart", "aorta", "lungs",
            "noise_sigma_hu", "motion_blur", "seed",
        }
        if unknown:
            raise SpecError(f"unknown phantom spec fields: {sorted(unknown)}")
        try:
            box = lambda b: None if b is None else Box(_ivec(b["lo"]), _ivec(b["hi"]))  # noqa: E731
            spec = cls(
                dims=_ivec(d["dims"]),
                spacing=_fvec(d.get("spacing", (0.5, 0.5, 3.0))),
                background_hu=float(d.get("background_hu", 40.0)),
                lesions=tuple(
                    PlantedLesion(_fvec(l["center"]), _fvec(l["radii"]), float(l["hu"]))
                    for l in d.get("lesions", [])
                ),
                heart=box(d.get("heart")),
                aorta=box(d.get("aorta")),
                lungs=tuple(box(b) for b in d.get("lungs", [])),
                noise_sigma_hu=float(d.get("noise_sigma_hu", 0.0)),
                motion_blur=int(d.get("motion_blur", 0)),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"malformed phantom spec: {exc!r}") from exc
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "PhantomSpec":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict[str, Any]:
        box = lambda b: None if b is None else {"lo": list(b.lo), "hi": list(b.hi)}  # noqa: E731
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "background_hu": self.background_hu,
            "lesions": [
                {"center": list(l.center), "radii": list(l.radii), "hu": l.hu} for l in self.lesions
            ],
            "heart": box(self.heart),
            "aorta": box(self.aorta),
            "lungs": [box(b) for b in self.lungs],
            "noise_sigma_hu": self.noise_sigma_hu,
            "motion_blur": self.motion_blur,
            "seed": self.seed,
        }

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise SpecError(f"dims must be 3 positive integers, got {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise SpecError(f"spacing must be 3 positive reals, got {self.spacing}")
        if self.noise_sigma_hu < 0:
            raise SpecError("noise_sigma_hu must be non-negative")
        if self.motion_blur < 0:
            raise SpecError("motion_blur must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must fit in an unsigned 64-bit integer")
        for name, b in [("heart", self.heart), ("aorta", self.aorta)] + [("lungs", b) for b in self.lungs]:
            if b is None:
                continue
            if not all(0 <= a <= c <= n for a, c, n in zip(b.lo, b.hi, self.dims)):
                raise SpecError(f"{name} box {b} outside dims {self.dims}")
        for n, l in enumerate(self.lesions, start=1):
            if l.hu < CALCIUM_THRESHOLD_HU:
                raise SpecError(f"lesion {n}: hu {l.hu} below {CALCIUM_THRESHOLD_HU}")
            if min(l.radii) <= 0:
                raise SpecError(f"lesion {n}: radii must be positive")
            for c, r, dim in zip(l.center, l.radii, self.dims):
                if c - r < 0 or c + r > dim - 1:
                    raise SpecError(f"lesion {n} extends outside dims {self.dims}")


def _ivec(v: Sequence) -> tuple[int, int, int]:
    if len(v) != 3 or any(int(x) != x for x in v):
        raise ValueError(f"expected 3 integers, got {v!r}")
    return tuple(int(x) for x in v)  # type: ignore[return-value]


def _fvec(v: Sequence) -> tuple[float, float, float]:
    if len(v) != 3:
        raise ValueError(f"expected 3 numbers, got {v!r}")
    return tuple(float(x) for x in v)  # type: ignore[return-value]


_NEIGHBOURS26 = np.argwhere(np.ones((3, 3, 3), dtype=bool)) - 1


def ellipsoid_voxels(lesion: PlantedLesion, dims: tuple[int, int, int]) -> np.ndarray:
    """(N, 3) voxel indices whose centres satisfy the ellipsoid inequality."""
    c = np.asarray(lesion.center)
    r = np.asarray(lesion.radii)
    lo = np.maximum(np.floor(c - r).astype(int), 0)
    hi = np.minimum(np.ceil(c + r).astype(int), np.asarray(dims) - 1)
    grid = np.stack(
        np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij"), axis=-1
    ).reshape(-1, 3)
    q = (((grid - c) / r) ** 2).sum(axis=1)
    return grid[q <= 1.0]


@dataclass
class Phantom:
    volume: Volume
    ground_truth: LabelMask
    organs: OrganMasks
    expected: AgatstonReport
    clean_volume: Volume = field(repr=False)


def _box_mask(spec: PhantomSpec, box: Box | None) -> np.ndarray:
    m = np.zeros(spec.dims, dtype=np.uint8)
    if box is not None:
        m[box.slices()] = 1
    return m


def generate(spec: PhantomSpec) -> Phantom:
    spec.validate()
    dims = spec.dims
    clean = np.full(dims, spec.background_hu, dtype=np.float32)
    gt = np.zeros(dims, dtype=np.int16)

    sx, sy, sz = spec.spacing
    per_lesion: list[tuple[int, float]] = []
    for n, lesion in enumerate(spec.lesions, start=1):
        vox = ellipsoid_voxels(lesion, dims)
        if len(vox) == 0:
            raise SpecError(f"lesion {n} contains no voxel centre")
        hood = (vox[:, None, :] + _NEIGHBOURS26[None]).reshape(-1, 3)
        hood = hood[((hood >= 0) & (hood < np.asarray(dims))).all(axis=1)]
        touched = gt[tuple(hood.T)]
        if touched.any():
            raise SpecError(f"lesion {n} overlaps or touches lesion {int(touched.max())}")
        idx = tuple(vox.T)
        gt[idx] = n
        clean[idx] = lesion.hu
        # per-slice area x weight; every voxel of a planted lesion shares one HU
        _, counts = np.unique(vox[:, 2], return_counts=True)
        score = float((counts * (sx * sy) * density_weight(lesion.hu)).sum()) * (sz / REFERENCE_THICKNESS_MM)
        per_lesion.append((n, score))

    total = 0.0
    for _, s in per_lesion:
        total += s
    expected = AgatstonReport(total, per_lesion, risk_category(total), sz, CALCIUM_THRESHOLD_HU)

    clean_vol = Volume(clean, spec.spacing)
    blur_seed, noise_seed = np.random.SeedSequence(spec.seed).spawn(2)
    vol = add_motion_blur(clean_vol, spec.motion_blur, blur_seed)
    vol = add_noise(vol, spec.noise_sigma_hu, noise_seed)

    organs = OrganMasks(
        heart=LabelMask(_box_mask(spec, spec.heart), spec.spacing),
        aorta=LabelMask(_box_mask(spec, spec.aorta), spec.spacing),
        lungs=LabelMask(
            np.maximum.reduce([_box_mask(spec, b) for b in spec.lungs])
            if spec.lungs
            else np.zeros(dims, np.uint8),
            spec.spacing,
        ),
    )
    return Phantom(vol, LabelMask(gt, spec.spacing), organs, expected, clean_vol)


def _rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def add_noise(v: Volume, sigma_hu: float, seed: int | np.random.SeedSequence) -> Volume:
    """Additive Gaussian noise of standard deviation ``sigma_hu``."""
    if sigma_hu < 0:
        raise ValueError("sigma_hu must be non-negative")
    if sigma_hu == 0:
        return Volume(v.data.copy(), v.spacing, v.origin, v.header)
    noise = _rng(seed).normal(0.0, sigma_hu, size=v.dims)
    return Volume((v.data + noise).astype(np.float32), v.spacing, v.origin, v.header)


def add_motion_blur(v: Volume, half_width: int, seed: int | np.random.SeedSequence) -> Volume:
    """Per-slice 1D box blur of width ``2*half_width + 1`` along x or y.

    The axis of each slice is drawn at random; edges are padded by
    replication so constant fields stay constant.
    """
    if half_width < 0:
        raise ValueError("half_width must be non-negative")
    if half_width == 0:
        return Volume(v.data.copy(), v.spacing, v.origin, v.header)
    h = int(half_width)
    axes = _rng(seed).integers(0, 2, size=v.dims[2])
    src = v.data.astype(np.float64)
    out = np.empty_like(src)
    for k, ax in enumerate(axes):
        sl = src[:, :, k]
        pad = [(h, h) if a == ax else (0, 0) for a in range(2)]
        p = np.pad(sl, pad, mode="edge")
        acc = np.zeros_like(sl)
        n = sl.shape[ax]
        for s in range(2 * h + 1):
            acc += p[s : s + n, :] if ax == 0 else p[:, s : s + n]
        out[:, :, k] = acc / (2 * h + 1)
    return Volume(out.astype(v.data.dtype if v.data.dtype.kind == "f" else np.float32), v.spacing, v.origin, v.header)


# ---------------------------------------------------------------- random specs


def default_layout(dims: tuple[int, int, int]) -> dict[str, Any]:
    """Heart block in the middle, aorta bar above it, lungs on both sides."""
    nx, ny, nz = dims
    heart = Box((nx // 4, ny // 4, 0), (3 * nx // 4, 3 * ny // 4, nz))
    aorta = Box((nx // 2 - nx // 16, ny // 8, 0), (nx // 2 + nx // 16, ny // 4, nz))
    lungs = (
        Box((0, 0, 0), (nx // 6, ny, nz)),
        Box((nx - nx // 6, 0, 0), (nx, ny, nz)),
    )
    return {"heart": heart, "aorta": aorta, "lungs": lungs}


def random_spec(
    seed: int,
    n_lesions: int | None = None,
    dims: tuple[int, int, int] = (64, 64, 16),
    spacing: tuple[float, float, float] = (0.5, 0.5, 3.0),
    noise_sigma_hu: float = 0.0,
    motion_blur: int = 0,
    hu_range: tuple[float, float] = (200.0, 700.0),
    min_voxels: int = 3,
) -> PhantomSpec:
    """Random heart-box lesions, pairwise separated, each >= ``min_voxels`` voxels."""
    rng = _rng(np.random.SeedSequence([seed, 0xCAC]))
    if n_lesions is None:
        n_lesions = int(rng.integers(1, 9))
    layout = default_layout(dims)
    heart: Box = layout["heart"]
    lesions: list[PlantedLesion] = []
    occupied = np.zeros(dims, dtype=bool)
    attempts = 0
    while len(lesions) < n_lesions:
        attempts += 1
        if attempts > 10_000:
            raise SpecError(f"could not place {n_lesions} separated lesions in {dims}")
        rxy = rng.uniform(1.5, 3.5, size=2)
        rz = rng.uniform(0.4, 1.4)
        radii = (float(rxy[0]), float(rxy[1]), float(rz))
        center = tuple(
            float(rng.integers(int(np.ceil(lo + r)), int(np.floor(hi - 1 - r)) + 1))
            for lo, hi, r in zip(heart.lo, heart.hi, radii)
        )
        cand = PlantedLesion(center, radii, float(np.round(rng.uniform(*hu_range))))  # type: ignore[arg-type]
        vox = ellipsoid_voxels(cand, dims)
        if len(vox) < min_voxels:
            continue
        lo = np.maximum(vox.min(axis=0) - 2, 0)
        hi = vox.max(axis=0) + 3
        if occupied[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]].any():
            continue
        occupied[tuple(vox.T)] = True
        lesions.append(cand)
    return PhantomSpec(
        dims=dims,
        spacing=spacing,
        lesions=tuple(lesions),
        noise_sigma_hu=noise_sigma_hu,
        motion_blur=motion_blur,
        seed=seed,
        **layout,
    )
