"""Segmentation evaluation metrics: volume Dice, symmetric average surface
distance, surface Dice at a tolerance, Hausdorff distance, and the 95th
percentile of the pooled symmetric surface distances.

Surfaces are the 6-connectivity boundary voxels of each structure (a voxel
of the structure with at least one face neighbor outside it; the volume
border counts as outside).  Distances are Euclidean between voxel centers,
scaled by the grid spacing.  Hausdorff and the 95th percentile measure
boundary points against the opposing *solid* structure, which equals the
solid-set Hausdorff distance; the average distance and surface Dice
measure boundary against boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from ._parallel import run_indexed
from .errors import EmptyStructure
from .volume import LabelVolume, validate_compatible

_FACE_STRUCT = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class BoundaryPointSet:
    """Voxel coordinates on a structure's 6-connectivity boundary."""

    points: np.ndarray  # (k, 3) int
    spacing: tuple[float, float, float]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class StructureMetrics:
    volume_dice: float
    avg_surface_dist_mm: Optional[float]
    surface_dice_at_tol: Optional[float]
    hausdorff_mm: Optional[float]
    dist95_mm: Optional[float]

    def as_dict(self) -> dict:
        return {
            "volume_dice": self.volume_dice,
            "avg_surface_dist_mm": self.avg_surface_dist_mm,
            "surface_dice_at_tol": self.surface_dice_at_tol,
            "hausdorff_mm": self.hausdorff_mm,
            "dist95_mm": self.dist95_mm,
        }


@dataclass(frozen=True)
class MetricsReport:
    per_structure: dict[int, StructureMetrics]
    aggregate: dict[str, Optional[float]]
    included_structures: tuple[int, ...]
    excluded_structures: tuple[int, ...]
    tolerance_mm: float

    def to_json_dict(self) -> dict:
        return {
            "tolerance_mm": self.tolerance_mm,
            "structures": {
                str(lab): m.as_dict() for lab, m in self.per_structure.items()
            },
            "aggregate": dict(self.aggregate),
            "excluded": list(self.excluded_structures),
        }


def volume_dice(pred: LabelVolume, truth: LabelVolume, label: int) -> float:
    """2|P∩T| / (|P|+|T|) over the voxel sets carrying ``label``.

    Both sides empty yields 1.0 (evaluate_all excludes that case upstream).
    """
    validate_compatible([pred, truth])
    p = pred.data == label
    t = truth.data == label
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def extract_boundary(labels: LabelVolume, label: int) -> BoundaryPointSet:
    """Structure voxels with a face neighbor outside the structure or
    outside the volume."""
    mask = labels.data == label
    if not mask.any():
        return BoundaryPointSet(np.empty((0, 3), dtype=np.int64), labels.spacing)
    interior = ndimage.binary_erosion(mask, structure=_FACE_STRUCT, border_value=0)
    pts = np.argwhere(mask & ~interior)
    return BoundaryPointSet(pts, labels.spacing)


def _structure_masks(pred, truth, label):
    validate_compatible([pred, truth])
    p = pred.data == label
    t = truth.data == label
    if not p.any() or not t.any():
        raise EmptyStructure(f"label {label} empty in pred or truth")
    return p, t


def _boundary(mask: np.ndarray) -> np.ndarray:
    interior = ndimage.binary_erosion(mask, structure=_FACE_STRUCT, border_value=0)
    return mask & ~interior


def _dist_to_set(target_mask: np.ndarray, spacing) -> np.ndarray:
    """Distance field (mm) from every voxel to the nearest target voxel."""
    return ndimage.distance_transform_edt(~target_mask, sampling=spacing)


def _surface_dists(pred, truth, label, solid: bool):
    """Pooled (pred-side, truth-side) boundary distances.

    ``solid`` measures against the opposing full structure, otherwise
    against the opposing boundary."""
    p, t = _structure_masks(pred, truth, label)
    bp, bt = _boundary(p), _boundary(t)
    spacing = pred.spacing
    dt_t = _dist_to_set(t if solid else bt, spacing)
    dt_p = _dist_to_set(p if solid else bp, spacing)
    return dt_t[bp], dt_p[bt]


def avg_surface_distance(pred: LabelVolume, truth: LabelVolume, label: int) -> float:
    """Mean of the pooled symmetric boundary-to-boundary distances (mm)."""
    dp, dt = _surface_dists(pred, truth, label, solid=False)
    return float((dp.sum() + dt.sum()) / (dp.size + dt.size))


def surface_dice(pred: LabelVolume, truth: LabelVolume, label: int,
                 tol_mm: float = 1.0) -> float:
    """Fraction of boundary points lying within ``tol_mm`` of the other
    structure's boundary."""
    dp, dt = _surface_dists(pred, truth, label, solid=False)
    hits = int((dp <= tol_mm).sum()) + int((dt <= tol_mm).sum())
    return hits / (dp.size + dt.size)


def hausdorff(pred: LabelVolume, truth: LabelVolume, label: int) -> float:
    """Solid-set Hausdorff distance in mm (attained on the boundaries)."""
    dp, dt = _surface_dists(pred, truth, label, solid=True)
    return float(max(dp.max(), dt.max()))


def nearest_rank(values: np.ndarray, percentile: int) -> float:
    """Nearest-rank percentile: value at 1-based index ceil(p*k/100)."""
    k = values.size
    idx = -((-percentile * k) // 100)  # ceil(p*k/100) in exact integer math
    return float(np.sort(values)[idx - 1])


def dist95(pred: LabelVolume, truth: LabelVolume, label: int) -> float:
    """95th percentile (nearest-rank) of the pooled symmetric
    boundary-to-solid distances used by the Hausdorff metric."""
    dp, dt = _surface_dists(pred, truth, label, solid=True)
    return nearest_rank(np.concatenate([dp, dt]), 95)


def _aggregate(per_structure: dict[int, StructureMetrics]) -> dict:
    keys = ["volume_dice", "avg_surface_dist_mm", "surface_dice_at_tol",
            "hausdorff_mm", "dist95_mm"]
    agg: dict[str, Optional[float]] = {}
    for key in keys:
        vals = [getattr(m, key) for m in per_structure.values()
                if getattr(m, key) is not None]
        agg[key] = float(np.mean(vals)) if vals else None
    return agg


def evaluate_all(pred: LabelVolume, truth: LabelVolume,
                 tol_mm: float = 1.0) -> MetricsReport:
    """All five metrics per structure (background excluded).

    Structures empty in both volumes are excluded entirely; structures
    empty on exactly one side get volume_dice 0 and missing surface
    metrics.  The aggregate is the unweighted mean over structures where
    each metric is defined.
    """
    validate_compatible([pred, truth])
    num_labels = max(pred.num_labels, truth.num_labels)

    def eval_one(label: int):
        p_any = bool((pred.data == label).any())
        t_any = bool((truth.data == label).any())
        if not p_any and not t_any:
            return label, None
        if not (p_any and t_any):
            return label, StructureMetrics(0.0, None, None, None, None)
        return label, StructureMetrics(
            volume_dice=volume_dice(pred, truth, label),
            avg_surface_dist_mm=avg_surface_distance(pred, truth, label),
            surface_dice_at_tol=surface_dice(pred, truth, label, tol_mm),
            hausdorff_mm=hausdorff(pred, truth, label),
            dist95_mm=dist95(pred, truth, label),
        )

    results = run_indexed(eval_one, list(range(1, num_labels + 1)))
    per_structure = {}
    excluded = []
    for label, m in results:
        if m is None:
            excluded.append(label)
        else:
            per_structure[label] = m
    return MetricsReport(
        per_structure=per_structure,
        aggregate=_aggregate(per_structure),
        included_structures=tuple(sorted(per_structure)),
        excluded_structures=tuple(excluded),
        tolerance_mm=tol_mm,
    )
