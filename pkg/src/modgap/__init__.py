"""Numerical laboratory for gap-closing multimodal contrastive objectives
on the unit hypersphere: losses with analytic gradients, space-geometry
and retrieval metrics, pooled clustering evaluation, synthetic data,
small-MLP training, and the controlled experiments built from them."""

from .losses import (
    LossConfig,
    LossValueAndGrad,
    MultimodalBatch,
    check_gradient,
    compute_centroids,
    infonce_directional,
    infonce_symmetric,
    loss_atp,
    loss_clgap,
    loss_cu,
    loss_gap,
    loss_uniform,
    loss_uniform_batch,
)
from .metrics import (
    GapReport,
    ShiftSpec,
    angular_value,
    apply_gap_shift,
    compute_gap_report,
    cos_tp,
    modality_gap,
    recall_at_k,
    scatter_decomposition_check,
)
from .clustering import (
    ClusteringResult,
    PooledCloud,
    build_pooled_cloud,
    cluster_eval,
    kmeans,
    knn_accuracy,
    v_measure,
)
from .synthdata import (
    SphereSimConfig,
    SyntheticDataset,
    SyntheticDatasetSpec,
    build_sphere_config,
    generate_dataset,
)
from .trainer import (
    EncoderParams,
    EpochRecord,
    TrainConfig,
    backward,
    encode_dataset,
    forward,
    init_encoder,
    train,
)
from .experiments import (
    EvalConfig,
    SphereSimResult,
    SweepResult,
    final_metrics,
    run_gap_gradient_profile,
    run_gap_shift_sweep,
    run_lambda_ablation,
    run_sphere_sim,
    run_training_comparison,
)

__version__ = "0.1.0"
