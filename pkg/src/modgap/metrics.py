"""Geometry and retrieval metrics for shared embedding spaces: centroid
distance between modalities, true-pair cosine, intra-modal spread,
recall@k, post-hoc gap shifting, and the within-class scatter identity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmall, KOutOfRange, ShapeMismatch, TargetUnreachable
from .losses import MultimodalBatch
from .numerics import as_matrix, normalize_rows

BISECT_BRACKET = 4.0
BISECT_GAP_TOL = 1e-8
BISECT_MAX_ITER = 200


@dataclass
class GapReport:
    """Flat summary of a batch's cross-modal geometry: centroid gap and
    true-pair cosine per unordered modality pair, intra-modal mean cosine
    per modality."""

    pair_gaps: dict[tuple[int, int], float]
    pair_costp: dict[tuple[int, int], float]
    modality_av: dict[int, float]

    def to_flat_dict(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for (m, n), v in sorted(self.pair_gaps.items()):
            out[f"gap_{m}_{n}"] = v
        for (m, n), v in sorted(self.pair_costp.items()):
            out[f"costp_{m}_{n}"] = v
        for m, v in sorted(self.modality_av.items()):
            out[f"av_{m}"] = v
        return out


@dataclass
class ShiftSpec:
    """Translate modality ``target`` along the centroid-difference
    direction toward modality ``source`` until the pair gap equals
    ``target_gap``; optionally re-project rows to the unit sphere."""

    source: int
    target: int
    target_gap: float
    renormalize: bool = True

    def __post_init__(self):
        if self.target_gap < 0:
            raise ValueError("target_gap must be nonnegative")
        if self.source == self.target:
            raise ValueError("source and target modalities must differ")


def modality_gap(batch: MultimodalBatch, m: int, n: int) -> float:
    """Euclidean distance between the mean embeddings of two modalities."""
    batch.check_modality(m)
    batch.check_modality(n)
    cm = batch.embeddings[m].mean(axis=0)
    cn = batch.embeddings[n].mean(axis=0)
    return float(np.linalg.norm(cm - cn))


def cos_tp(batch: MultimodalBatch, m: int, n: int) -> float:
    """Mean cosine similarity of row-aligned (true) pairs."""
    batch.check_modality(m)
    batch.check_modality(n)
    s = float(np.mean((batch.embeddings[m] * batch.embeddings[n]).sum(axis=1)))
    return float(np.clip(s, -1.0, 1.0))


def angular_value(z) -> float:
    """Mean pairwise cosine over unordered distinct pairs within one
    modality; near 1 means the modality has collapsed, near 0 well spread."""
    zm = as_matrix(z, "z")
    n = zm.shape[0]
    if n < 2:
        raise BatchTooSmall("angular value needs at least two rows")
    s = zm @ zm.T
    total = (s.sum() - np.trace(s)) / 2.0
    return float(total / (n * (n - 1) / 2.0))


def recall_at_k(query, gallery, k: int) -> float:
    """Fraction of queries whose true match (gallery row of the same index)
    ranks in the top k by inner-product score.

    Scores are raw inner products, which equal cosine similarity under the
    unit-norm caller contract; ranking by them is what makes the metric
    exactly invariant to a constant translation of every gallery row.
    Ties rank the lower gallery index first.
    """
    q = as_matrix(query, "query")
    g = as_matrix(gallery, "gallery")
    if q.shape[0] != g.shape[0]:
        raise ShapeMismatch("query and gallery must have the same row count")
    n = q.shape[0]
    if not (1 <= k <= n):
        raise KOutOfRange(f"k={k} out of range for N={n}")
    scores = q @ g.T
    true_scores = np.diag(scores)
    better = (scores > true_scores[:, None]).sum(axis=1)
    cols = np.arange(n)
    tied_lower = ((scores == true_scores[:, None]) & (cols[None, :] < cols[:, None])).sum(axis=1)
    ranks = better + tied_lower + 1
    return float(np.mean(ranks <= k))


def _shifted(batch: MultimodalBatch, target_mod: int, direction: np.ndarray,
             alpha: float, renormalize: bool) -> MultimodalBatch:
    mats = [z.copy() for z in batch.embeddings]
    mats[target_mod] = mats[target_mod] + alpha * direction
    if renormalize:
        mats[target_mod] = normalize_rows(mats[target_mod])
    return MultimodalBatch(mats, batch.labels)


def apply_gap_shift(batch: MultimodalBatch, spec: ShiftSpec) -> MultimodalBatch:
    """Translate one modality along the centroid-difference direction so the
    measured gap hits spec.target_gap.

    Without renormalization the required step has a closed form (the gap is
    |1 - alpha| times the current gap). With renormalization the step is
    found by a bracket scan plus bisection on the post-normalization gap;
    an impossible target raises TargetUnreachable.
    """
    m, n = spec.source, spec.target
    batch.check_modality(m)
    batch.check_modality(n)
    cm = batch.embeddings[m].mean(axis=0)
    cn = batch.embeddings[n].mean(axis=0)
    direction = cm - cn
    gap0 = float(np.linalg.norm(direction))

    if abs(gap0 - spec.target_gap) <= BISECT_GAP_TOL:
        return MultimodalBatch([z.copy() for z in batch.embeddings], batch.labels)
    if gap0 < 1e-15:
        raise TargetUnreachable(
            "current gap is zero: no direction to translate along"
        )

    if not spec.renormalize:
        alpha = 1.0 - spec.target_gap / gap0
        return _shifted(batch, n, direction, alpha, renormalize=False)

    def gap_at(alpha: float) -> float:
        shifted = _shifted(batch, n, direction, alpha, renormalize=True)
        return modality_gap(shifted, m, n)

    grid = np.linspace(-BISECT_BRACKET, BISECT_BRACKET, 801)
    vals = np.array([gap_at(a) - spec.target_gap for a in grid])
    zero_hits = np.flatnonzero(np.abs(vals) <= BISECT_GAP_TOL)
    if zero_hits.size:
        a = float(grid[zero_hits[np.argmin(np.abs(grid[zero_hits]))]])
        return _shifted(batch, n, direction, a, renormalize=True)
    sign_change = np.flatnonzero(vals[:-1] * vals[1:] < 0)
    if sign_change.size == 0:
        raise TargetUnreachable(
            f"target gap {spec.target_gap} not attainable within "
            f"alpha in [-{BISECT_BRACKET}, {BISECT_BRACKET}] under renormalization"
        )
    # prefer the crossing closest to alpha = 0 (smallest perturbation)
    mids = 0.5 * (grid[sign_change] + grid[sign_change + 1])
    j = int(sign_change[np.argmin(np.abs(mids))])
    lo, hi = float(grid[j]), float(grid[j + 1])
    f_lo = vals[j]
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f_mid = gap_at(mid) - spec.target_gap
        if abs(f_mid) <= BISECT_GAP_TOL:
            lo = hi = mid
            break
        if f_lo * f_mid < 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    alpha = 0.5 * (lo + hi)
    return _shifted(batch, n, direction, alpha, renormalize=True)


def scatter_decomposition_check(z, centroids0, delta) -> tuple[float, float]:
    """Both sides of the shifted within-class scatter decomposition.

    lhs = mean_i ||z_i - (mu_i + delta)||^2
    rhs = mean_i ||z_i - mu_i||^2 + ||delta||^2

    The residual lhs - rhs equals -2 * mean_i <z_i - mu_i, delta> exactly,
    so it vanishes when delta is orthogonal to every deviation.
    """
    zm = as_matrix(z, "z")
    mu = as_matrix(centroids0, "centroids0")
    if zm.shape != mu.shape:
        raise ShapeMismatch(f"shapes differ: {zm.shape} vs {mu.shape}")
    d = np.asarray(delta, dtype=np.float64).ravel()
    if d.shape[0] != zm.shape[1]:
        raise ShapeMismatch("delta dimension does not match embeddings")
    dev = zm - mu
    lhs = float(np.mean(((dev - d) ** 2).sum(axis=1)))
    rhs = float(np.mean((dev ** 2).sum(axis=1)) + (d @ d))
    return lhs, rhs


def compute_gap_report(batch: MultimodalBatch) -> GapReport:
    """Gap and true-pair cosine for every unordered modality pair, plus the
    intra-modal mean pairwise cosine per modality."""
    m_count = batch.num_modalities
    gaps: dict[tuple[int, int], float] = {}
    costps: dict[tuple[int, int], float] = {}
    avs: dict[int, float] = {}
    for m in range(m_count):
        avs[m] = angular_value(batch.embeddings[m])
        for n in range(m + 1, m_count):
            gaps[(m, n)] = modality_gap(batch, m, n)
            costps[(m, n)] = cos_tp(batch, m, n)
    return GapReport(gaps, costps, avs)
