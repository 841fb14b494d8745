"""STAPLE consensus: EM estimation of a hidden true segmentation with
per-rater sensitivity p and specificity q, extended to multiple labels by
independent per-structure binary runs arbitrated through the posterior.

The E-step products run in the log domain so large rater counts cannot
underflow; rater parameters are clipped to an interior interval after each
M-step, which keeps every log finite while preserving the EM ascent
property (the per-rater objective is unimodal, so moving toward the
unconstrained maximizer never decreases it).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._parallel import run_indexed
from .volume import LabelVolume, TrustMap, TrustMask, validate_compatible

_P_EPS = 1e-7


@dataclass(frozen=True)
class StapleConfig:
    max_iters: int = 100
    tol: float = 1e-6
    init_p: float = 0.99
    init_q: float = 0.99
    fixed_prior: Optional[float] = None  # None = empirical foreground fraction

    def __post_init__(self):
        if not (0.0 < self.init_p < 1.0 and 0.0 < self.init_q < 1.0):
            raise ValueError("init_p and init_q must lie strictly in (0, 1)")
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("tol must be > 0 and max_iters >= 1")
        if self.fixed_prior is not None and not (0.0 <= self.fixed_prior <= 1.0):
            raise ValueError("fixed_prior must lie in [0, 1]")


@dataclass(frozen=True)
class BinaryEmResult:
    weights: TrustMap
    p: np.ndarray  # per-rater sensitivity
    q: np.ndarray  # per-rater specificity
    iterations: int
    converged: bool
    log_likelihoods: tuple[float, ...]


@dataclass(frozen=True)
class StapleResult:
    labels: LabelVolume
    per_label_rater_params: dict[int, tuple[np.ndarray, np.ndarray]]
    iterations_used: dict[int, int]
    converged: dict[int, bool]
    posterior: Optional[TrustMap] = None


def staple_binary_em(decisions: Sequence[TrustMask],
                     config: StapleConfig = StapleConfig()) -> BinaryEmResult:
    """Binary STAPLE over rater foreground indicators.

    Per voxel the E-step forms a = prior * prod_j p_j^D (1-p_j)^(1-D) and
    b = (1-prior) * prod_j (1-q_j)^D q_j^(1-D), with W = a/(a+b); the
    M-step refits p_j = sum(W*D)/sum(W) and q_j = sum((1-W)(1-D))/sum(1-W).
    Iterates until the summed absolute parameter change drops below tol.
    """
    masks = list(decisions)
    if not masks:
        raise ValueError("staple_binary_em needs at least one rater")
    validate_compatible(masks)
    spacing = masks[0].spacing
    dims = masks[0].dims
    n = len(masks)
    D = np.stack([m.data.reshape(-1) for m in masks]).astype(np.float64)
    n_vox = D.shape[1]

    pi = config.fixed_prior
    if pi is None:
        pi = float(D.mean())

    # Identical-empty / identical-full ensembles have nothing to estimate:
    # hand back that consensus directly.
    if pi == 0.0 or pi == 1.0:
        w = np.full(dims, pi, dtype="<f4")
        return BinaryEmResult(
            weights=TrustMap.from_array(w, spacing),
            p=np.full(n, config.init_p),
            q=np.full(n, config.init_q),
            iterations=0,
            converged=True,
            log_likelihoods=(),
        )

    p = np.full(n, config.init_p, dtype=np.float64)
    q = np.full(n, config.init_q, dtype=np.float64)
    log_pi = np.log(pi)
    log_1mpi = np.log1p(-pi)

    W = np.empty(n_vox, dtype=np.float64)
    traces: list[float] = []
    iterations = 0
    converged = False
    for _ in range(config.max_iters):
        # E-step in log domain: la - lb is the posterior log-odds.
        la = log_pi + np.log(p) @ D + np.log1p(-p) @ (1.0 - D)
        lb = log_1mpi + np.log1p(-q) @ D + np.log(q) @ (1.0 - D)
        traces.append(float(np.logaddexp(la, lb).sum()))
        W = 1.0 / (1.0 + np.exp(lb - la))

        sw = W.sum()
        s1mw = n_vox - sw
        new_p = (D @ W) / sw
        new_q = ((1.0 - D) @ (1.0 - W)) / s1mw
        np.clip(new_p, _P_EPS, 1.0 - _P_EPS, out=new_p)
        np.clip(new_q, _P_EPS, 1.0 - _P_EPS, out=new_q)

        delta = np.abs(new_p - p).sum() + np.abs(new_q - q).sum()
        p, q = new_p, new_q
        iterations += 1
        if delta < config.tol:
            converged = True
            break

    weights = TrustMap.from_array(
        np.clip(W, 0.0, 1.0).reshape(dims).astype("<f4"), spacing
    )
    return BinaryEmResult(
        weights=weights,
        p=p,
        q=q,
        iterations=iterations,
        converged=converged,
        log_likelihoods=tuple(traces),
    )


def staple_multilabel(atlases, config: StapleConfig = StapleConfig()) -> StapleResult:
    """Run binary STAPLE per structure and arbitrate by posterior argmax.

    A voxel gets structure l = argmax_l W_l (smallest l on ties) when the
    winning posterior reaches 0.5, background otherwise.
    """
    num_labels = atlases.num_labels
    spacing = atlases.spacing
    dims = atlases.dims
    label_stack = [e.labels.data for e in atlases.atlases]

    def run_one(lab: int) -> BinaryEmResult:
        masks = [
            TrustMask.from_array((d == lab).astype("<u1"), spacing)
            for d in label_stack
        ]
        return staple_binary_em(masks, config)

    structures = list(range(1, num_labels + 1))
    results = run_indexed(run_one, structures)

    params = {}
    iters = {}
    conv = {}
    if structures:
        w_stack = np.stack([r.weights.data for r in results])
        best = w_stack.argmax(axis=0)
        best_w = np.take_along_axis(w_stack, best[None], axis=0)[0]
        labels = np.where(best_w >= 0.5, best + 1, 0).astype("<u2")
        posterior = best_w.astype("<f4")
        for lab, r in zip(structures, results):
            params[lab] = (r.p, r.q)
            iters[lab] = r.iterations
            conv[lab] = r.converged
    else:
        labels = np.zeros(dims, dtype="<u2")
        posterior = np.zeros(dims, dtype="<f4")

    return StapleResult(
        labels=LabelVolume.from_array(labels, num_labels, spacing),
        per_label_rater_params=params,
        iterations_used=iters,
        converged=conv,
        posterior=TrustMap.from_array(posterior, spacing),
    )
