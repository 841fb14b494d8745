"""Trust-mask machinery: agreement masks, trust-map thresholding, patch
tiling for the patchwise predictor, seeded patch sampling, a deterministic
image-similarity trust heuristic, and mask diagnostics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import (
    BadPatchSpec,
    ExtentMismatch,
    MissingMask,
    MissingTile,
    OutOfRangeValue,
    SamplingExhausted,
)
from .volume import LabelVolume, TrustMap, TrustMask, Volume, validate_compatible

# Agreement masks are ordinary trust masks derived from ground truth.
AgreementMask = TrustMask

DEFAULT_PATCH = 72
DEFAULT_CORE = 40


@dataclass(frozen=True)
class PatchWindow:
    core_origin: tuple[int, int, int]
    core_extent: tuple[int, int, int]
    input_origin: tuple[int, int, int]


@dataclass(frozen=True)
class PatchGrid:
    """Disjoint output cores tiling a volume, each fed by a larger input
    window centered on it (input windows may extend outside the volume;
    consumers zero-pad by ``margin``)."""

    dims: tuple[int, int, int]
    patch_size: int
    core_size: int
    margin: int
    windows: tuple[PatchWindow, ...]

    def to_text(self) -> str:
        lines = []
        for w in self.windows:
            co = ",".join(str(v) for v in w.core_origin)
            ce = ",".join(str(v) for v in w.core_extent)
            io = ",".join(str(v) for v in w.input_origin)
            lines.append(f"core=({co})+({ce}) input=({io})")
        return "\n".join(lines)


class Similarity(enum.Enum):
    NCC = "ncc"
    MAD = "mad"


@dataclass(frozen=True)
class HeuristicConfig:
    """Stand-in trust predictor: local image similarity between target and
    warped atlas.  MAD (mean absolute difference, normalized by the global
    intensity range) is the default; it behaves well on piecewise-constant
    intensities where windowed correlation is dominated by noise.

    ``threshold`` is expressed in the raw similarity domain: minimal NCC
    (default 0.8) or maximal MAD as a fraction of the intensity range
    (default 0.1).  ``None`` picks the default for the chosen similarity.
    """

    window_radius: int = 2
    similarity: Similarity = Similarity.MAD
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")

    @property
    def resolved_threshold(self) -> float:
        if self.threshold is not None:
            return self.threshold
        return 0.8 if self.similarity is Similarity.NCC else 0.1

    @property
    def map_cut(self) -> float:
        """The raw-domain threshold translated into trust-map units."""
        t = self.resolved_threshold
        return (t + 1.0) / 2.0 if self.similarity is Similarity.NCC else 1.0 - t


def gen_agreement_mask(warped_atlas_labels: LabelVolume,
                       target_labels: LabelVolume) -> AgreementMask:
    """1 where the warped atlas label equals the target's true label."""
    validate_compatible([warped_atlas_labels, target_labels])
    agree = warped_atlas_labels.data == target_labels.data
    return TrustMask.from_array(agree.astype("<u1"), warped_atlas_labels.spacing)


def threshold_trust_map(trust_map: TrustMap, cut: float = 0.5) -> TrustMask:
    """Binarize a trust map: 0 where value < cut, 1 otherwise.

    A value exactly at the cut maps to 1 (strict inequality on the
    reject side)."""
    d = trust_map.data
    if d.size and (float(d.min()) < 0.0 or float(d.max()) > 1.0):
        raise OutOfRangeValue("trust map values must lie in [0, 1]")
    mask = (d >= cut).astype("<u1")
    return TrustMask.from_array(mask, trust_map.spacing)


def tile_patches(dims, patch_size: int = DEFAULT_PATCH,
                 core_size: int = DEFAULT_CORE) -> PatchGrid:
    """Lay output cores on a regular ``core_size`` grid covering ``dims``.

    Cores extending past the volume are clipped; input windows always span
    ``patch_size`` starting ``margin`` before the (unclipped) core."""
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise BadPatchSpec(f"dims must be >= 1, got {dims}")
    if core_size >= patch_size:
        raise BadPatchSpec(f"core_size {core_size} must be < patch_size {patch_size}")
    if (patch_size - core_size) % 2 != 0:
        raise BadPatchSpec("patch_size - core_size must be even")
    margin = (patch_size - core_size) // 2
    starts = [range(0, d, core_size) for d in dims]
    windows = []
    for ox in starts[0]:
        for oy in starts[1]:
            for oz in starts[2]:
                origin = (ox, oy, oz)
                extent = tuple(min(core_size, d - o) for o, d in zip(origin, dims))
                inp = tuple(o - margin for o in origin)
                windows.append(PatchWindow(origin, extent, inp))
    return PatchGrid(dims=dims, patch_size=patch_size, core_size=core_size,
                     margin=margin, windows=tuple(windows))


def extract_cores(grid: PatchGrid, data: np.ndarray) -> list[np.ndarray]:
    """Cut a volume array into its clipped core blocks, window order."""
    out = []
    for w in grid.windows:
        sl = tuple(slice(o, o + e) for o, e in zip(w.core_origin, w.core_extent))
        out.append(np.ascontiguousarray(data[sl]))
    return out


def reconstruct_from_cores(grid: PatchGrid, core_outputs,
                           spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Stitch per-window core outputs back into a full volume.

    Cores are disjoint and cover the volume, so every voxel is written
    exactly once."""
    outputs = list(core_outputs)
    if len(outputs) != len(grid.windows):
        raise MissingTile(
            f"got {len(outputs)} tiles for {len(grid.windows)} windows"
        )
    first = np.asarray(outputs[0])
    result = np.zeros(grid.dims, dtype=first.dtype)
    for w, tile in zip(grid.windows, outputs):
        tile = np.asarray(tile)
        if tile.shape != w.core_extent:
            raise ExtentMismatch(
                f"tile shape {tile.shape} != core extent {w.core_extent}"
            )
        sl = tuple(slice(o, o + e) for o, e in zip(w.core_origin, w.core_extent))
        result[sl] = tile
    return Volume.from_array(result, spacing)


def sample_training_patches(
    mask: AgreementMask,
    count: int,
    seed: int,
    min_zero_fraction: float = 0.05,
    patch_size: int = DEFAULT_PATCH,
    margin: int = 16,
    max_attempts: Optional[int] = None,
) -> list[tuple[int, int, int]]:
    """Rejection-sample patch origins whose patches hold enough disagreement.

    Origins are uniform over the zero-padded volume (padding ``margin`` per
    side), so they may be negative.  A draw is accepted when the patch
    contains at least ceil(min_zero_fraction * patch_size^3) zero-valued
    mask voxels, counting only voxels inside the volume (padding never
    counts as disagreement).  Deterministic given ``seed``; raises after
    ``max_attempts`` draws (default 200 * count) without enough acceptances.
    """
    dims = mask.dims
    lo = -margin
    his = [d + margin - patch_size for d in dims]
    if any(h < lo for h in his):
        raise BadPatchSpec(
            f"volume {dims} too small to host a {patch_size}^3 patch "
            f"with margin {margin}"
        )
    need = math.ceil(min_zero_fraction * patch_size ** 3)
    if max_attempts is None:
        max_attempts = 200 * count
    rng = np.random.default_rng(seed)
    data = mask.data
    origins: list[tuple[int, int, int]] = []
    attempts = 0
    while len(origins) < count:
        if attempts >= max_attempts:
            raise SamplingExhausted(
                f"accepted {len(origins)}/{count} patches after {attempts} draws; "
                f"mask has too little disagreement for the "
                f"{min_zero_fraction:.0%} rule"
            )
        origin = tuple(
            int(rng.integers(lo, hi + 1)) for hi in his
        )
        attempts += 1
        sl = tuple(
            slice(max(0, o), min(d, o + patch_size))
            for o, d in zip(origin, dims)
        )
        block = data[sl]
        zeros = int(block.size - np.count_nonzero(block))
        if zeros >= need:
            origins.append(origin)
    return origins


def _window_means(arr: np.ndarray, size: int, counts: np.ndarray) -> np.ndarray:
    sums = ndimage.uniform_filter(arr, size=size, mode="constant", cval=0.0)
    return sums * (size ** 3) / counts


def heuristic_trust_predict(target_image: Volume, warped_atlas_image: Volume,
                            config: HeuristicConfig = HeuristicConfig()) -> TrustMap:
    """Local-similarity trust map between target and warped atlas.

    NCC: windowed Pearson correlation r, rescaled as (r+1)/2; windows with
    zero variance on either side get the neutral value 0.5.  MAD: windowed
    mean absolute difference divided by the global intensity range, clamped
    to [0, 1] and inverted.  Boundary windows are clipped to the volume.
    """
    validate_compatible([target_image, warped_atlas_image])
    size = 2 * config.window_radius + 1
    t = target_image.data.astype(np.float64)
    w = warped_atlas_image.data.astype(np.float64)
    ones = np.ones_like(t)
    counts = ndimage.uniform_filter(ones, size=size, mode="constant", cval=0.0)
    counts *= size ** 3
    np.maximum(counts, 1.0, out=counts)

    if config.similarity is Similarity.MAD:
        lo = min(float(t.min()), float(w.min()))
        hi = max(float(t.max()), float(w.max()))
        span = max(hi - lo, np.finfo(np.float64).tiny)
        mad = _window_means(np.abs(t - w), size, counts)
        score = 1.0 - np.clip(mad / span, 0.0, 1.0)
    else:
        mt = _window_means(t, size, counts)
        mw = _window_means(w, size, counts)
        var_t = np.maximum(_window_means(t * t, size, counts) - mt * mt, 0.0)
        var_w = np.maximum(_window_means(w * w, size, counts) - mw * mw, 0.0)
        cov = _window_means(t * w, size, counts) - mt * mw
        denom = np.sqrt(var_t * var_w)
        degenerate = (var_t <= 1e-12) | (var_w <= 1e-12)
        r = np.where(degenerate, 0.0, cov / np.where(degenerate, 1.0, denom))
        r = np.clip(r, -1.0, 1.0)
        score = np.where(degenerate, 0.5, (r + 1.0) / 2.0)

    score = np.clip(score, 0.0, 1.0).astype("<f4")
    return TrustMap.from_array(score, target_image.spacing)


def heuristic_trust_mask(target_image: Volume, warped_atlas_image: Volume,
                         config: HeuristicConfig = HeuristicConfig()) -> TrustMask:
    """Binary trust decision at the config's similarity threshold."""
    trust = heuristic_trust_predict(target_image, warped_atlas_image, config)
    return threshold_trust_map(trust, config.map_cut)


def recall_map(atlases, truth: LabelVolume, use_masks: bool = False):
    """Per-voxel fraction of (retained) atlases whose label matches truth.

    Returns ``(map, excluded_voxels)`` where the count covers voxels with
    zero retained atlases; those get map value 0.
    """
    validate_compatible([atlases.atlases[0].labels, truth])
    stack = np.stack([e.labels.data for e in atlases.atlases])
    correct = stack == truth.data[None]
    if use_masks:
        for i, entry in enumerate(atlases.atlases):
            if entry.mask is None:
                raise MissingMask(f"atlas {i} has no mask")
        retain = np.stack([e.mask.data for e in atlases.atlases]).astype(bool)
    else:
        retain = np.ones_like(correct, dtype=bool)
    hits = (correct & retain).sum(axis=0, dtype=np.int64)
    denom = retain.sum(axis=0, dtype=np.int64)
    excluded = int((denom == 0).sum())
    with np.errstate(invalid="ignore"):
        frac = np.where(denom > 0, hits / np.maximum(denom, 1), 0.0)
    return TrustMap.from_array(frac.astype("<f4"), truth.spacing), excluded


def mask_dice(predicted: TrustMask, truth: AgreementMask) -> tuple[float, float]:
    """Dice of the 1-voxel sets and of the 0-voxel sets.

    Both sets empty on both sides counts as perfect agreement (1.0)."""
    validate_compatible([predicted, truth])
    p = predicted.data.astype(bool)
    t = truth.data.astype(bool)

    def dice(a, b):
        na, nb = int(a.sum()), int(b.sum())
        if na + nb == 0:
            return 1.0
        return 2.0 * int((a & b).sum()) / (na + nb)

    return dice(p, t), dice(~p, ~t)
