"""Desk-scale stand-in for the registration stage: a labeled ellipsoid
phantom and simulated "warped atlases" produced by smooth random
displacement fields plus intensity noise.

Everything is deterministic from (config, seed): the phantom, each
atlas's field, and each atlas's noise sit on separate seed streams derived
from the root seed, so per-atlas work can run in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import ndimage

from .errors import TooManyStructures
from .fusion import AtlasEntry, AtlasSet
from .volume import LabelVolume, Volume, validate_compatible

SeedLike = Union[int, np.random.SeedSequence]


@dataclass(frozen=True)
class DisplacementField:
    """Dense voxel-unit displacement vectors (ux, uy, uz)."""

    ux: np.ndarray
    uy: np.ndarray
    uz: np.ndarray

    def __post_init__(self):
        for comp in (self.ux, self.uy, self.uz):
            if comp.shape != self.ux.shape:
                raise ValueError("field components must share dims")
            if not np.isfinite(comp).all():
                raise ValueError("field components must be finite")

    @property
    def max_magnitude(self) -> float:
        mag2 = (self.ux.astype(np.float64) ** 2
                + self.uy.astype(np.float64) ** 2
                + self.uz.astype(np.float64) ** 2)
        return float(np.sqrt(mag2.max()))


@dataclass(frozen=True)
class SynthConfig:
    dims: tuple[int, int, int] = (48, 48, 48)
    num_structures: int = 4
    num_atlases: int = 8
    seed: int = 7
    warp_amplitude: float = 3.0
    warp_smoothness: float = 4.0
    noise_std: float = 0.05
    structure_scale: float = 1.0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.warp_amplitude < 0 or self.warp_smoothness <= 0:
            raise ValueError("amplitude must be >= 0 and smoothness > 0")
        if self.num_atlases < 1 or self.num_structures < 1:
            raise ValueError("need at least one atlas and one structure")

    def intensity_for(self, label: int) -> float:
        """Piecewise-constant intensity ramp: 0 outside the head, 0.2 for
        head tissue, then equal steps up to 1.0 for structure N."""
        if label == 0:
            return 0.2
        return 0.2 + 0.8 * label / self.num_structures


_HEAD_FRACTION = 0.46
_RING_FRACTION = 0.52
_BASE_STRUCTURE_FRACTION = 0.30


def _ellipsoid_mask(dims, center, semiaxes) -> np.ndarray:
    grids = np.ogrid[0:dims[0], 0:dims[1], 0:dims[2]]
    acc = np.zeros(dims, dtype=np.float64)
    for g, c, s in zip(grids, center, semiaxes):
        acc = acc + ((g - c) / s) ** 2
    return acc <= 1.0


def make_phantom(config: SynthConfig) -> tuple[Volume, LabelVolume]:
    """Labeled head phantom: an outer ellipsoid of background tissue
    containing ``num_structures`` smaller ellipsoids on a ring, labels
    1..N, plus an intensity image with Gaussian noise."""
    dims = tuple(int(d) for d in config.dims)
    n_struct = config.num_structures
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))

    center = tuple((d - 1) / 2.0 for d in dims)
    head_axes = tuple(_HEAD_FRACTION * d for d in dims)
    head = _ellipsoid_mask(dims, center, head_axes)

    labels = np.zeros(dims, dtype="<u2")
    min_axis = min(head_axes)
    if n_struct == 1:
        ring = 0.0
        base = 0.65 * min_axis
    else:
        ring = _RING_FRACTION * min_axis
        half_gap = ring * np.sin(np.pi / n_struct)
        base = min(_BASE_STRUCTURE_FRACTION * min_axis, 0.9 * half_gap)
    base *= config.structure_scale
    if base < 1.0:
        raise TooManyStructures(
            f"cannot place {n_struct} structures in dims {dims}"
        )
    phase = rng.uniform(0.0, 2.0 * np.pi)
    for lab in range(1, n_struct + 1):
        theta = phase + 2.0 * np.pi * (lab - 1) / max(n_struct, 1)
        c = (
            center[0] + ring * np.cos(theta) * head_axes[0] / min_axis * 0.9,
            center[1] + ring * np.sin(theta) * head_axes[1] / min_axis * 0.9,
            center[2] + rng.uniform(-0.08, 0.08) * dims[2],
        )
        scale = rng.uniform(0.75, 1.0)
        axes = tuple(base * scale * rng.uniform(0.85, 1.15) for _ in range(3))
        blob = _ellipsoid_mask(dims, c, axes) & head
        labels[blob] = lab

    for lab in range(1, n_struct + 1):
        if not (labels == lab).any():
            raise TooManyStructures(
                f"structure {lab} vanished during placement; reduce "
                f"num_structures or enlarge dims"
            )

    image = np.full(dims, 0.0, dtype=np.float64)
    image[head] = config.intensity_for(0)
    for lab in range(1, n_struct + 1):
        image[labels == lab] = config.intensity_for(lab)
    if config.noise_std > 0:
        image = image + rng.normal(0.0, config.noise_std, size=dims)
    image_vol = Volume.from_array(image.astype("<f4"), config.spacing)
    label_vol = LabelVolume.from_array(labels, n_struct, config.spacing)
    return image_vol, label_vol


def random_displacement_field(dims, amplitude: float, smoothness: float,
                              seed: SeedLike) -> DisplacementField:
    """Smooth random field rescaled so its maximum magnitude equals
    ``amplitude`` (amplitude 0 gives the zero field)."""
    dims = tuple(int(d) for d in dims)
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    rng = np.random.default_rng(seed)
    comps = []
    for _ in range(3):
        raw = rng.normal(0.0, 1.0, size=dims)
        comps.append(ndimage.gaussian_filter(raw, sigma=smoothness))
    mag = np.sqrt(sum(c ** 2 for c in comps))
    peak = float(mag.max())
    if amplitude == 0.0 or peak == 0.0:
        zero = np.zeros(dims, dtype=np.float64)
        return DisplacementField(zero, zero.copy(), zero.copy())
    factor = amplitude / peak
    ux, uy, uz = (c * factor for c in comps)
    return DisplacementField(ux, uy, uz)


def warp_volume(volume: Union[Volume, LabelVolume],
                field: DisplacementField) -> Union[Volume, LabelVolume]:
    """Pull-back resampling: output(x) = input(x + u(x)).

    Trilinear interpolation for F32 intensities, nearest-neighbor for
    label volumes (keeps the label alphabet); samples outside the volume
    read 0 / background."""
    is_labels = isinstance(volume, LabelVolume)
    vol = volume.volume if is_labels else volume
    if field.ux.shape != vol.dims:
        raise ValueError(f"field dims {field.ux.shape} != volume dims {vol.dims}")
    grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in vol.dims],
                        indexing="ij")
    coords = np.stack([
        grids[0] + field.ux,
        grids[1] + field.uy,
        grids[2] + field.uz,
    ])
    order = 0 if vol.header.dtype.numpy_dtype.kind == "u" else 1
    out = ndimage.map_coordinates(vol.data, coords, order=order,
                                  mode="constant", cval=0.0,
                                  output=vol.data.dtype)
    result = Volume.from_array(out, vol.spacing)
    if is_labels:
        return LabelVolume(result, volume.num_labels)
    return result


def simulate_atlas_set(config: SynthConfig) -> tuple[Volume, LabelVolume, AtlasSet]:
    """One phantom target plus ``num_atlases`` corrupted copies.

    Each atlas gets an independent displacement field and independent
    post-warp intensity noise, both on per-atlas seed streams."""
    target_image, target_labels = make_phantom(config)
    entries = []
    for i in range(config.num_atlases):
        field = random_displacement_field(
            config.dims, config.warp_amplitude, config.warp_smoothness,
            np.random.SeedSequence((config.seed, 1 + i, 0)),
        )
        atlas_img = warp_volume(target_image, field)
        atlas_lab = warp_volume(target_labels, field)
        if config.noise_std > 0:
            noise_rng = np.random.default_rng(
                np.random.SeedSequence((config.seed, 1 + i, 1))
            )
            noisy = atlas_img.data + noise_rng.normal(
                0.0, config.noise_std, size=config.dims
            )
            atlas_img = Volume.from_array(noisy.astype("<f4"), config.spacing)
        entries.append(AtlasEntry(labels=atlas_lab, image=atlas_img))
    atlas_set = AtlasSet(atlases=tuple(entries),
                         num_labels=config.num_structures,
                         target_image=target_image)
    return target_image, target_labels, atlas_set
