"""Experiment drivers: sphere-sweep loss landscapes and gradient profiles,
post-hoc gap-shift sweeps, the lambda sensitivity grid, and paired
training comparisons. Every driver is a pure function of (config, seed)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .clustering import cluster_eval
from .errors import InvalidSpec, ModgapError, TargetUnreachable
from .losses import LossConfig, MultimodalBatch, infonce_symmetric, loss_clgap
from .metrics import (
    ShiftSpec,
    apply_gap_shift,
    compute_gap_report,
    modality_gap,
    recall_at_k,
)
from .synthdata import SphereSimConfig, SyntheticDataset, build_sphere_config
from .trainer import EncoderParams, MetricsTimeline, TrainConfig, encode_dataset, train


@dataclass
class EvalConfig:
    """Evaluation knobs shared by the sweep/ablation/comparison drivers."""

    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300
    knn_k: int = 10
    recall_k: int = 1
    seed: int = 0
    source_modality: int = 0
    target_modality: int = 1


@dataclass
class SphereSimResult:
    thetas: np.ndarray
    losses: np.ndarray
    grad_matched: np.ndarray
    grad_mismatched: np.ndarray
    argmin_theta: float
    loss_variant: str
    mismatched_empty: bool


def _sphere_loss(batch: MultimodalBatch, cfg: SphereSimConfig):
    loss_cfg = LossConfig(tau=cfg.tau, lambda1=1.0, lambda2=1.0, anchor=0)
    if cfg.loss_variant == "clip_only":
        return infonce_symmetric(batch, loss_cfg)
    return loss_clgap(batch, loss_cfg)


def _tangential_norms(batch: MultimodalBatch, grads: list[np.ndarray]) -> np.ndarray:
    """Per-embedding norms of the gradients projected to the sphere's
    tangent space (the component a unit-norm-constrained update feels)."""
    norms = []
    for z, g in zip(batch.embeddings, grads):
        tang = g - (g * z).sum(axis=1, keepdims=True) * z
        norms.append(np.linalg.norm(tang, axis=1))
    return np.stack(norms, axis=0)  # (M, N)


def run_sphere_sim(cfg: SphereSimConfig) -> SphereSimResult:
    """Sweep the pair angle over the grid, recording the configured loss
    and the mean per-embedding (tangential) gradient norms of the combined
    objective, split into matched and mismatched pairs."""
    mismatched = cfg.mismatched_rows()
    matched_mask = np.ones(cfg.num_pairs, dtype=bool)
    matched_mask[mismatched] = False
    losses = np.empty(cfg.theta_grid.shape[0])
    g_matched = np.empty_like(losses)
    g_mismatched = np.empty_like(losses)
    for i, theta in enumerate(cfg.theta_grid):
        batch = build_sphere_config(cfg, float(theta))
        result = _sphere_loss(batch, cfg)
        losses[i] = result.value
        norms = _tangential_norms(batch, result.grads)
        g_matched[i] = float(norms[:, matched_mask].mean())
        g_mismatched[i] = (
            float(norms[:, ~matched_mask].mean()) if mismatched.size else float("nan")
        )
    argmin = float(cfg.theta_grid[int(np.argmin(losses))])
    return SphereSimResult(
        thetas=cfg.theta_grid.copy(),
        losses=losses,
        grad_matched=g_matched,
        grad_mismatched=g_mismatched,
        argmin_theta=argmin,
        loss_variant=cfg.loss_variant,
        mismatched_empty=mismatched.size == 0,
    )


def run_gap_gradient_profile(cfg: SphereSimConfig) -> SphereSimResult:
    """Gradient-norm profile of the combined objective along the sweep;
    only meaningful for the combined loss."""
    if cfg.loss_variant != "clgap":
        raise InvalidSpec("gradient profile requires loss_variant == 'clgap'")
    return run_sphere_sim(cfg)


@dataclass
class SweepRow:
    target_gap: float
    measured_gap: Optional[float]
    r1_m2n: Optional[float]
    r1_n2m: Optional[float]
    v_measure: Optional[float]
    knn: Optional[float]
    status: str = "ok"


@dataclass
class SweepResult:
    rows: list[SweepRow]
    renormalize: bool


def run_gap_shift_sweep(batch: MultimodalBatch, targets: list[float],
                        renormalize: bool,
                        eval_cfg: Optional[EvalConfig] = None) -> SweepResult:
    """Shift the pair gap to each target, then re-measure retrieval and
    clustering.

    Retrieval is evaluated per direction with the gallery modality shifted
    to the target gap (queries untouched), which realizes the exact
    ranking-invariance property of constant gallery translations when
    renormalize is off. Clustering metrics come from the batch with the
    target modality shifted. Unreachable targets produce flagged rows.
    """
    ec = eval_cfg or EvalConfig()
    m, n = ec.source_modality, ec.target_modality
    if batch.labels is None:
        raise ModgapError("gap-shift sweep needs a labeled batch")
    k_classes = int(np.unique(batch.labels).size)
    rows: list[SweepRow] = []
    for t in targets:
        try:
            shifted_n = apply_gap_shift(
                batch, ShiftSpec(source=m, target=n, target_gap=t,
                                 renormalize=renormalize))
            shifted_m = apply_gap_shift(
                batch, ShiftSpec(source=n, target=m, target_gap=t,
                                 renormalize=renormalize))
        except TargetUnreachable:
            rows.append(SweepRow(t, None, None, None, None, None, "unreachable"))
            continue
        r1_m2n = recall_at_k(batch.embeddings[m], shifted_n.embeddings[n], ec.recall_k)
        r1_n2m = recall_at_k(batch.embeddings[n], shifted_m.embeddings[m], ec.recall_k)
        v, knn = cluster_eval(shifted_n, k_classes, knn_k=ec.knn_k, seed=ec.seed,
                              restarts=ec.kmeans_restarts,
                              max_iter=ec.kmeans_max_iter)
        rows.append(SweepRow(t, modality_gap(shifted_n, m, n),
                             r1_m2n, r1_n2m, v, knn))
    return SweepResult(rows, renormalize)


@dataclass
class AblationCell:
    lambda1: float
    lambda2: float
    r1: Optional[float]
    v_measure: Optional[float]
    avg: Optional[float]
    status: str = "ok"
    timeline: MetricsTimeline = field(default_factory=list, repr=False)


def final_metrics(params: list[EncoderParams], dataset: SyntheticDataset,
                  eval_cfg: Optional[EvalConfig] = None) -> dict:
    """Metrics of the trained space over the full dataset: flat gap report,
    recall@1 in both directions of the evaluation pair, V-Measure, kNN."""
    ec = eval_cfg or EvalConfig()
    full = encode_dataset(params, dataset.inputs, dataset.labels)
    out: dict = dict(compute_gap_report(full).to_flat_dict())
    m, n = ec.source_modality, ec.target_modality
    r_mn = recall_at_k(full.embeddings[m], full.embeddings[n], ec.recall_k)
    r_nm = recall_at_k(full.embeddings[n], full.embeddings[m], ec.recall_k)
    out[f"r1_{m}_{n}"] = r_mn
    out[f"r1_{n}_{m}"] = r_nm
    out["r1_mean"] = 0.5 * (r_mn + r_nm)
    if dataset.labels is not None:
        k_classes = int(np.unique(dataset.labels).size)
        v, knn = cluster_eval(full, k_classes, knn_k=ec.knn_k, seed=ec.seed,
                              restarts=ec.kmeans_restarts,
                              max_iter=ec.kmeans_max_iter)
        out["v_measure"] = v
        out["knn"] = knn
    return out


def run_lambda_ablation(dataset: SyntheticDataset, grid1: list[float],
                        grid2: list[float], base_cfg: TrainConfig,
                        eval_cfg: Optional[EvalConfig] = None) -> list[AblationCell]:
    """Train one model per (lambda1, lambda2) cell of the combined
    objective and report retrieval and clustering scores per cell.
    Failed cells are flagged, not fatal."""
    if not grid1 or not grid2:
        raise InvalidSpec("lambda grids must be non-empty")
    cells: list[AblationCell] = []
    for l1 in grid1:
        for l2 in grid2:
            cfg = replace(base_cfg, variant="ours",
                          loss=replace(base_cfg.loss, lambda1=l1, lambda2=l2))
            try:
                params, timeline = train(dataset, cfg)
                fin = final_metrics(params, dataset, eval_cfg)
                r1 = fin["r1_mean"]
                v = fin.get("v_measure")
                avg = 0.5 * (r1 + v) if v is not None else None
                cells.append(AblationCell(l1, l2, r1, v, avg, timeline=timeline))
            except ModgapError as exc:
                cells.append(AblationCell(l1, l2, None, None, None,
                                          status=f"failed: {exc}"))
    return cells


@dataclass
class VariantRun:
    variant: str
    config: TrainConfig
    timeline: MetricsTimeline
    finals: dict
    params: list[EncoderParams] = field(repr=False, default_factory=list)


def run_training_comparison(dataset: SyntheticDataset,
                            variants: list[TrainConfig],
                            eval_cfg: Optional[EvalConfig] = None) -> list[VariantRun]:
    """Train each variant on the shared dataset and seed; emit per-epoch
    timelines and a final-epoch metric row per variant."""
    if len({cfg.seed for cfg in variants}) > 1:
        raise InvalidSpec("comparison variants must share one seed")
    runs = []
    for cfg in variants:
        params, timeline = train(dataset, cfg)
        fin = final_metrics(params, dataset, eval_cfg)
        runs.append(VariantRun(cfg.variant, cfg, timeline, fin, params))
    return runs
