"""Synthetic inputs: labeled Gaussian-class multimodal datasets and the
six-pair sphere configuration used by the controlled loss-landscape
simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidAngle, InvalidSpec
from .losses import MultimodalBatch
from .numerics import normalize_rows, spawn_rngs

SPHERE_TAU_DEFAULT = 0.24


@dataclass
class SyntheticDatasetSpec:
    """Recipe for a labeled multimodal dataset.

    Class prototypes are drawn uniformly on the latent unit sphere; each
    sample adds isotropic Gaussian noise and is pushed through a fixed
    random affine map per modality, plus a per-modality constant offset of
    magnitude ``cone_offset`` (the initialization-cone separation).
    """

    num_classes: int = 10
    samples_per_class: int = 200
    latent_dim: int = 8
    modality_dims: list[int] = field(default_factory=lambda: [24, 24, 24])
    noise_sigma: float = 0.05
    cone_offset: float = 1.0
    seed: int = 0
    identity_maps: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidSpec("num_classes must be at least 2")
        if self.samples_per_class < 1:
            raise InvalidSpec("samples_per_class must be positive")
        if self.latent_dim < 2:
            raise InvalidSpec("latent_dim must be at least 2")
        if len(self.modality_dims) < 1 or any(d < 2 for d in self.modality_dims):
            raise InvalidSpec("every modality dim must be at least 2")
        if self.noise_sigma < 0 or self.cone_offset < 0:
            raise InvalidSpec("noise_sigma and cone_offset must be nonnegative")
        if self.identity_maps and any(d != self.latent_dim for d in self.modality_dims):
            raise InvalidSpec("identity_maps requires modality_dims == latent_dim")


@dataclass
class SyntheticDataset:
    inputs: list[np.ndarray]
    labels: np.ndarray
    spec: SyntheticDatasetSpec

    @property
    def num_samples(self) -> int:
        return self.labels.shape[0]

    @property
    def num_modalities(self) -> int:
        return len(self.inputs)


def generate_dataset(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    """Deterministic dataset from the spec's seed.

    Labels are exactly uniform (samples_per_class per class, class-major
    order); the per-modality map entries are i.i.d. normal scaled by
    1/sqrt(latent_dim) so norms are preserved in expectation.
    """
    rng_proto, rng_noise, rng_maps, rng_offsets = spawn_rngs(spec.seed, 4)
    protos = normalize_rows(rng_proto.normal(size=(spec.num_classes, spec.latent_dim)))
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    n = labels.shape[0]
    latents = protos[labels] + spec.noise_sigma * rng_noise.normal(
        size=(n, spec.latent_dim)
    )
    inputs = []
    for dim in spec.modality_dims:
        if spec.identity_maps:
            a = np.eye(spec.latent_dim)
        else:
            a = rng_maps.normal(size=(spec.latent_dim, dim)) / np.sqrt(spec.latent_dim)
        if spec.cone_offset > 0:
            u = rng_offsets.normal(size=dim)
            offset = spec.cone_offset * u / np.linalg.norm(u)
        else:
            # keep the stream position independent of the offset magnitude
            rng_offsets.normal(size=dim)
            offset = np.zeros(dim)
        inputs.append(latents @ a + offset)
    return SyntheticDataset(inputs, labels, spec)


@dataclass
class SphereSimConfig:
    """Controlled two-modal configuration on the unit 2-sphere.

    num_pairs points sit at equally spaced azimuths; the two modality
    rings slide symmetrically along the meridians, meeting at the equator,
    so every aligned pair subtends exactly the sweep angle theta. With a
    positive initial offset, the last num_mismatched pairs have their
    modality-2 points exchanged (the mismatch); a zero offset starts
    aligned, so there is nothing to mismatch.
    """

    num_pairs: int = 6
    num_mismatched: int = 2
    delta_deg: float = 120.0
    theta_grid: Optional[np.ndarray] = None
    tau: float = SPHERE_TAU_DEFAULT
    loss_variant: str = "clgap"

    def __post_init__(self):
        if self.num_pairs < 2:
            raise InvalidSpec("num_pairs must be at least 2")
        if not (0 <= self.num_mismatched <= self.num_pairs):
            raise InvalidSpec("num_mismatched must lie in [0, num_pairs]")
        if not (0.0 <= self.delta_deg <= 180.0):
            raise InvalidAngle("delta_deg must lie in [0, 180]")
        if self.loss_variant not in ("clip_only", "clgap"):
            raise InvalidSpec(f"unknown loss_variant {self.loss_variant!r}")
        if self.theta_grid is None:
            self.theta_grid = np.arange(0.0, 181.0, 1.0)
        self.theta_grid = np.asarray(self.theta_grid, dtype=np.float64)
        if ((self.theta_grid < 0) | (self.theta_grid > 180)).any():
            raise InvalidAngle("theta grid values must lie in [0, 180]")

    def mismatched_rows(self) -> np.ndarray:
        """Indices of the pairs whose modality-2 points are exchanged."""
        if self.delta_deg <= 0 or self.num_mismatched == 0:
            return np.empty(0, dtype=int)
        return np.arange(self.num_pairs - self.num_mismatched, self.num_pairs)


def _ring_points(colat: float, azims: np.ndarray) -> np.ndarray:
    return np.stack(
        [np.sin(colat) * np.cos(azims), np.sin(colat) * np.sin(azims),
         np.full_like(azims, np.cos(colat))],
        axis=1,
    )


def build_sphere_config(cfg: SphereSimConfig, theta_deg: float) -> MultimodalBatch:
    """Two-modal batch at sweep angle theta.

    Modality 1 sits on the ring at colatitude 90 - theta/2, modality 2 on
    the mirror ring at 90 + theta/2, sharing azimuths, so unswapped pairs
    subtend exactly theta. The mismatched block of modality-2 points is
    cyclically exchanged when the initial offset is positive.
    """
    if not (0.0 <= theta_deg <= 180.0):
        raise InvalidAngle(f"theta must lie in [0, 180], got {theta_deg}")
    theta = np.deg2rad(theta_deg)
    azims = 2.0 * np.pi * np.arange(cfg.num_pairs) / cfg.num_pairs
    half = theta / 2.0
    eq = np.pi / 2.0
    z1 = _ring_points(eq - half, azims)
    z2 = _ring_points(eq + half, azims)
    rows = cfg.mismatched_rows()
    if rows.size >= 2:
        z2[rows] = np.roll(z2[rows], 1, axis=0)
    return MultimodalBatch([z1, z2])
