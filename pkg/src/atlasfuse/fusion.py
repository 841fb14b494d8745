"""Label fusion rules over an ensemble of warped atlases.

All rules are pure, voxel-wise independent, and deterministic: ties are
broken toward the smallest label value, which also makes every output
invariant under permutation of the atlas list.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import BadThreshold, MissingMask, MissingTruth, UnknownMethod
from .volume import LabelVolume, TrustMap, TrustMask, Volume, validate_compatible


@dataclass(frozen=True)
class AtlasEntry:
    """One warped atlas: labels always present, the rest optional."""

    labels: LabelVolume
    image: Optional[Volume] = None
    mask: Optional[TrustMask] = None
    trust_map: Optional[TrustMap] = None


@dataclass(frozen=True)
class AtlasSet:
    """The atlas ensemble, all members already in target space."""

    atlases: tuple[AtlasEntry, ...]
    num_labels: int
    target_image: Optional[Volume] = None

    def __post_init__(self):
        object.__setattr__(self, "atlases", tuple(self.atlases))
        if len(self.atlases) < 1:
            raise ValueError("AtlasSet needs at least one atlas")
        members = []
        for entry in self.atlases:
            members.append(entry.labels)
            for opt in (entry.image, entry.mask, entry.trust_map):
                if opt is not None:
                    members.append(opt)
            if entry.labels.num_labels > self.num_labels:
                raise ValueError(
                    f"atlas labels up to {entry.labels.num_labels} exceed "
                    f"num_labels={self.num_labels}"
                )
        if self.target_image is not None:
            members.append(self.target_image)
        validate_compatible(members)

    @property
    def n(self) -> int:
        return len(self.atlases)

    @property
    def dims(self):
        return self.atlases[0].labels.dims

    @property
    def spacing(self):
        return self.atlases[0].labels.spacing


@dataclass(frozen=True)
class FusionOutput:
    """Fused labels plus per-voxel bookkeeping.

    ``unassigned`` is 1 where no rule fired (zero retained votes under
    trusted voting, no strict majority, too few correct atlases for the
    oracle); those voxels carry label 0.  ``vote_counts`` holds the maximal
    vote tally at each voxel (for the oracle: the correct-atlas count),
    whether or not a label was assigned.
    """

    labels: LabelVolume
    unassigned: TrustMask
    vote_counts: Optional[Volume] = None


class FusionMethod(enum.Enum):
    PV = "pv"
    MV = "mv"
    TRUSTED = "trusted"
    ORACLE = "oracle"
    STAPLE = "staple"


def _stacked_labels(atlases: AtlasSet) -> np.ndarray:
    return np.stack([e.labels.data for e in atlases.atlases])


def _label_counts(stack: np.ndarray, num_labels: int, retain=None) -> np.ndarray:
    """Per-label vote counts, shape (num_labels+1, *dims)."""
    counts = np.empty((num_labels + 1,) + stack.shape[1:], dtype=np.int32)
    for lab in range(num_labels + 1):
        votes = stack == lab
        if retain is not None:
            votes &= retain
        counts[lab] = votes.sum(axis=0, dtype=np.int32)
    return counts


def _output(atlases: AtlasSet, labels: np.ndarray, unassigned: np.ndarray,
            counts: np.ndarray) -> FusionOutput:
    spacing = atlases.spacing
    return FusionOutput(
        labels=LabelVolume.from_array(labels.astype("<u2"), atlases.num_labels, spacing),
        unassigned=TrustMask.from_array(unassigned.astype("<u1"), spacing),
        vote_counts=Volume.from_array(counts.astype("<u2"), spacing),
    )


def plurality_vote(atlases: AtlasSet) -> FusionOutput:
    """Most frequent label among all atlases; background votes like any label."""
    stack = _stacked_labels(atlases)
    counts = _label_counts(stack, atlases.num_labels)
    winner = counts.argmax(axis=0)  # first max = smallest label
    winning = np.take_along_axis(counts, winner[None], axis=0)[0]
    return _output(atlases, winner, np.zeros(winner.shape, dtype=bool), winning)


def majority_vote(atlases: AtlasSet) -> FusionOutput:
    """Assign a label only when strictly more than n/2 atlases agree on it."""
    stack = _stacked_labels(atlases)
    counts = _label_counts(stack, atlases.num_labels)
    winner = counts.argmax(axis=0)
    winning = np.take_along_axis(counts, winner[None], axis=0)[0]
    has_majority = winning * 2 > atlases.n
    labels = np.where(has_majority, winner, 0)
    return _output(atlases, labels, ~has_majority, winning)


def resolve_masks(atlases: AtlasSet, cut: float = 0.5) -> list[TrustMask]:
    """Per-atlas masks for trusted voting.

    Uses the stored mask when present, otherwise thresholds the trust map
    at ``cut`` (value exactly at the cut maps to 1).
    """
    from .trust import threshold_trust_map

    masks = []
    for i, entry in enumerate(atlases.atlases):
        if entry.mask is not None:
            masks.append(entry.mask)
        elif entry.trust_map is not None:
            masks.append(threshold_trust_map(entry.trust_map, cut))
        else:
            raise MissingMask(f"atlas {i} has neither mask nor trust map")
    return masks


def trusted_plurality_vote(atlases: AtlasSet, cut: float = 0.5) -> FusionOutput:
    """Plurality voting restricted, per voxel, to mask-retained atlases.

    A masked-out atlas contributes no vote at that voxel (its label is
    mapped outside the label alphabet).  Voxels where every atlas is
    masked out get label 0 and are flagged unassigned.
    """
    masks = resolve_masks(atlases, cut)
    stack = _stacked_labels(atlases)
    retain = np.stack([m.data for m in masks]).astype(bool)
    counts = _label_counts(stack, atlases.num_labels, retain=retain)
    winner = counts.argmax(axis=0)
    winning = np.take_along_axis(counts, winner[None], axis=0)[0]
    unassigned = ~retain.any(axis=0)
    labels = np.where(unassigned, 0, winner)
    winning = np.where(unassigned, 0, winning)
    return _output(atlases, labels, unassigned, winning)


def oracle_fuse(atlases: AtlasSet, truth: LabelVolume, n_required: int) -> FusionOutput:
    """Idealized fusion: the true label wherever at least ``n_required``
    atlases carry it, background (and the unassigned flag) otherwise."""
    if not 1 <= n_required <= atlases.n:
        raise BadThreshold(f"n_required={n_required} outside [1, {atlases.n}]")
    validate_compatible([atlases.atlases[0].labels, truth])
    stack = _stacked_labels(atlases)
    correct = (stack == truth.data[None]).sum(axis=0, dtype=np.int32)
    assigned = correct >= n_required
    labels = np.where(assigned, truth.data, 0)
    return _output(atlases, labels, ~assigned, correct)


def combine_with_fallback(primary: FusionOutput, fallback: LabelVolume) -> LabelVolume:
    """Fill unassigned voxels of ``primary`` from ``fallback``."""
    validate_compatible([primary.labels, fallback])
    hole = primary.unassigned.data.astype(bool)
    out = np.where(hole, fallback.data, primary.labels.data)
    num_labels = max(primary.labels.num_labels, fallback.num_labels)
    return LabelVolume.from_array(out.astype("<u2"), num_labels, primary.labels.spacing)


def fuse(
    atlases: AtlasSet,
    method: FusionMethod | str,
    *,
    truth: Optional[LabelVolume] = None,
    n_required: Optional[int] = None,
    cut: float = 0.5,
    staple_config=None,
) -> FusionOutput:
    """Dispatch to the requested fusion rule.

    ORACLE needs ``truth`` and ``n_required``; TRUSTED needs per-atlas
    masks or trust maps (thresholded at ``cut``); STAPLE accepts an
    optional StapleConfig.
    """
    if isinstance(method, str):
        try:
            method = FusionMethod(method.lower())
        except ValueError:
            raise UnknownMethod(f"unknown fusion method {method!r}") from None
    if method is FusionMethod.PV:
        return plurality_vote(atlases)
    if method is FusionMethod.MV:
        return majority_vote(atlases)
    if method is FusionMethod.TRUSTED:
        return trusted_plurality_vote(atlases, cut=cut)
    if method is FusionMethod.ORACLE:
        if truth is None:
            raise MissingTruth("oracle fusion requires the true label volume")
        if n_required is None:
            raise BadThreshold("oracle fusion requires n_required")
        return oracle_fuse(atlases, truth, n_required)
    if method is FusionMethod.STAPLE:
        from .staple import StapleConfig, staple_multilabel

        result = staple_multilabel(atlases, staple_config or StapleConfig())
        zeros = np.zeros(atlases.dims, dtype="<u1")
        return FusionOutput(
            labels=result.labels,
            unassigned=TrustMask.from_array(zeros, atlases.spacing),
            vote_counts=None,
        )
    raise UnknownMethod(f"unknown fusion method {method!r}")
