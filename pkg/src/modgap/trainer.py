"""From-scratch training of small per-modality MLP encoders.

Encoders are plain MLPs whose outputs are projected to the unit sphere;
gradients flow through the normalization Jacobian. Optimization is Adam
with a fixed reduction order, so a run is bitwise reproducible from
(seed, config, dataset). The training objective is selected by variant:

  clip_lt            contrastive, learnable temperature (log-parameterized)
  clip_ft            contrastive, fixed temperature
  ours               contrastive + weighted alignment and centroid uniformity
  atp_only           alignment term alone
  cu_only            centroid uniformity alone
  uniform_baseline   per-modality sample-level uniformity alone
  sparsify_then_clip uniformity until switch_epoch, contrastive afterwards
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DivergedLoss, InvalidSpec, NonFiniteInput, ShapeMismatch
from .losses import (
    LossConfig,
    LossValueAndGrad,
    MultimodalBatch,
    TAU_MAX,
    TAU_MIN,
    infonce_symmetric,
    loss_atp,
    loss_clgap,
    loss_cu,
    loss_uniform_batch,
)
from .metrics import compute_gap_report
from .numerics import normalize_rows, spawn_rngs

TRAIN_VARIANTS = (
    "clip_lt",
    "clip_ft",
    "ours",
    "atp_only",
    "cu_only",
    "uniform_baseline",
    "sparsify_then_clip",
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class EncoderParams:
    """Weights and biases of one MLP encoder; weights[i] maps layer i to
    layer i+1. The final output dimension is the shared embedding dim."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise InvalidSpec(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("weights and biases must pair up")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ShapeMismatch(f"layer {i} output dim does not feed layer {i+1}")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ShapeMismatch("bias shape does not match layer width")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


def init_encoder(layer_sizes: list[int], activation: str,
                 rng: np.random.Generator) -> EncoderParams:
    """He-style initialization for relu, Xavier for tanh; zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        scale = math.sqrt(2.0 / fan_in) if activation == "relu" else math.sqrt(1.0 / fan_in)
        weights.append(rng.normal(size=(fan_in, fan_out)) * scale)
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights, biases, activation)


def _act(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) if params.activation == "relu" else np.tanh(x)


def _forward_cache(params: EncoderParams, x: np.ndarray):
    """Layer activations plus the pre-normalization output and row norms."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != params.weights[0].shape[0]:
        raise ShapeMismatch(
            f"input shape {a.shape} does not match first layer "
            f"({params.weights[0].shape[0]} features)"
        )
    acts = [a]
    h = a
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = _act(params, h)
        acts.append(h)
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    emb = normalize_rows(h)
    return emb, acts, norms


def forward(params: EncoderParams, x) -> np.ndarray:
    """MLP forward pass followed by row normalization; rows are unit-norm."""
    emb, _, _ = _forward_cache(params, x)
    return emb


def backward(params: EncoderParams, x, upstream_grad) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact parameter gradients for d(loss)/d(normalized output) = upstream.

    Includes the row-normalization Jacobian: for y = h/|h| the gradient
    seen by the raw output is (g - <g, y> y) / |h|.
    """
    g_y = np.asarray(upstream_grad, dtype=np.float64)
    emb, acts, norms = _forward_cache(params, x)
    if g_y.shape != emb.shape:
        raise ShapeMismatch(f"upstream shape {g_y.shape} != output shape {emb.shape}")
    g = (g_y - (g_y * emb).sum(axis=1, keepdims=True) * emb) / norms
    w_grads: list[np.ndarray] = [None] * len(params.weights)
    b_grads: list[np.ndarray] = [None] * len(params.biases)
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        a_prev = acts[i]
        w_grads[i] = a_prev.T @ g
        b_grads[i] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
            pre = acts[i]  # activation output of layer i (post-nonlinearity)
            if params.activation == "relu":
                g = g * (pre > 0.0)
            else:
                g = g * (1.0 - pre * pre)
    return w_grads, b_grads


class _Adam:
    """Adam state for one list of parameter arrays."""

    def __init__(self, arrays: list[np.ndarray], lr: float):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - ADAM_BETA1 ** self.t
        b2t = 1.0 - ADAM_BETA2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            a -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)


@dataclass
class TrainConfig:
    variant: str = "ours"
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    switch_epoch: int = 5
    hidden_sizes: list[int] = field(default_factory=lambda: [64, 64])
    embed_dim: int = 16
    activation: str = "relu"
    loss: LossConfig = field(default_factory=LossConfig)
    eval_per_epoch: bool = False

    def __post_init__(self):
        if self.variant not in TRAIN_VARIANTS:
            raise InvalidSpec(f"unknown variant {self.variant!r}")
        if self.batch_size < 2:
            raise InvalidSpec("batch_size must be at least 2")
        if self.epochs < 0:
            raise InvalidSpec("epochs must be nonnegative")
        if self.variant == "sparsify_then_clip" and self.switch_epoch < 0:
            raise InvalidSpec("switch_epoch must be nonnegative")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    gaps: dict[tuple[int, int], float]
    costps: dict[tuple[int, int], float]
    avs: dict[int, float]
    tau: float
    v_measure: Optional[float] = None
    knn: Optional[float] = None
    recall1: Optional[float] = None


MetricsTimeline = list[EpochRecord]


def _objective(variant: str, batch: MultimodalBatch, loss_cfg: LossConfig,
               epoch: int, switch_epoch: int) -> LossValueAndGrad:
    if variant == "clip_lt":
        return infonce_symmetric(batch, loss_cfg)
    if variant == "clip_ft":
        return infonce_symmetric(batch, loss_cfg)
    if variant == "ours":
        return loss_clgap(batch, loss_cfg)
    if variant == "atp_only":
        return loss_atp(batch, loss_cfg.anchor)
    if variant == "cu_only":
        return loss_cu(batch)
    if variant == "uniform_baseline":
        return loss_uniform_batch(batch)
    if variant == "sparsify_then_clip":
        if epoch < switch_epoch:
            return loss_uniform_batch(batch)
        return infonce_symmetric(batch, loss_cfg)
    raise InvalidSpec(f"unknown variant {variant!r}")


def encode_dataset(params: list[EncoderParams], inputs: list[np.ndarray],
                   labels=None) -> MultimodalBatch:
    """Run every modality's encoder over its full input matrix."""
    return MultimodalBatch([forward(p, x) for p, x in zip(params, inputs)], labels)


def train(dataset, cfg: TrainConfig) -> tuple[list[EncoderParams], MetricsTimeline]:
    """Adam training loop, deterministic given (dataset, cfg).

    Mini-batches are a fresh full permutation each epoch from the run's
    own random stream; a trailing batch smaller than 2 is dropped. A
    non-finite loss aborts via DivergedLoss carrying the last good state.
    """
    inputs, labels = dataset.inputs, dataset.labels
    m_count = len(inputs)
    n = inputs[0].shape[0]
    rngs = spawn_rngs(cfg.seed, m_count + 1)
    shuffle_rng = rngs[-1]
    params = [
        init_encoder([inputs[m].shape[1]] + list(cfg.hidden_sizes) + [cfg.embed_dim],
                     cfg.activation, rngs[m])
        for m in range(m_count)
    ]
    optimizers = [_Adam(p.weights + p.biases, cfg.learning_rate) for p in params]

    learnable_tau = cfg.variant == "clip_lt"
    log_tau = math.log(cfg.loss.tau)
    tau_opt = _Adam([np.zeros(1)], cfg.learning_rate) if learnable_tau else None
    log_tau_arr = np.array([log_tau])

    timeline: MetricsTimeline = []

    def current_loss_cfg() -> LossConfig:
        tau = float(np.exp(log_tau_arr[0])) if learnable_tau else cfg.loss.tau
        mode = "learnable" if learnable_tau else "fixed"
        return replace(cfg.loss, tau=tau, tau_mode=mode)

    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if idx.shape[0] < 2:
                break
            xs = [inputs[m][idx] for m in range(m_count)]
            embs = []
            for m in range(m_count):
                emb, _, _ = _forward_cache(params[m], xs[m])
                embs.append(emb)
            batch = MultimodalBatch(embs)
            loss_cfg = current_loss_cfg()
            try:
                result = _objective(cfg.variant, batch, loss_cfg, epoch,
                                    cfg.switch_epoch)
            except NonFiniteInput as exc:
                err = DivergedLoss(f"non-finite loss at epoch {epoch}: {exc}")
                err.params = params
                err.timeline = timeline
                raise err from exc
            batch_losses.append(result.value)
            for m in range(m_count):
                w_g, b_g = backward(params[m], xs[m], result.grads[m])
                optimizers[m].step(params[m].weights + params[m].biases, w_g + b_g)
            if learnable_tau and result.tau_grad is not None:
                tau = loss_cfg.tau
                g_log = np.array([result.tau_grad * tau])
                tau_opt.step([log_tau_arr], [g_log])
                log_tau_arr[0] = float(
                    np.clip(log_tau_arr[0], math.log(TAU_MIN), math.log(TAU_MAX))
                )
        timeline.append(
            _epoch_record(epoch, batch_losses, params, inputs, labels,
                          current_loss_cfg().tau, cfg)
        )
    return params, timeline


def _epoch_record(epoch, batch_losses, params, inputs, labels, tau,
                  cfg: TrainConfig) -> EpochRecord:
    full = encode_dataset(params, inputs, labels)
    report = compute_gap_report(full)
    rec = EpochRecord(
        epoch=epoch,
        loss=float(np.mean(batch_losses)) if batch_losses else float("nan"),
        gaps=report.pair_gaps,
        costps=report.pair_costp,
        avs=report.modality_av,
        tau=float(tau),
    )
    if cfg.eval_per_epoch and labels is not None:
        from .clustering import cluster_eval
        from .metrics import recall_at_k

        k_classes = int(np.unique(labels).size)
        v, knn = cluster_eval(full, k_classes, seed=cfg.seed)
        rec.v_measure = v
        rec.knn = knn
        rec.recall1 = 0.5 * (
            recall_at_k(full.embeddings[0], full.embeddings[1], 1)
            + recall_at_k(full.embeddings[1], full.embeddings[0], 1)
        )
    return rec
