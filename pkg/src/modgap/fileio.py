"""Embedding/checkpoint file formats, the strict run-configuration schema,
and CSV/JSON emission helpers.

Embedding files are plain CSV with a header line and one record per
(sample, modality): sample_id, modality, label (-1 when absent), then the
d embedding values in shortest round-trip decimal form.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError, DataFormatError
from .experiments import EvalConfig
from .losses import LossConfig, MultimodalBatch
from .synthdata import SyntheticDatasetSpec
from .trainer import EncoderParams, EpochRecord, TrainConfig


def fmt(x) -> str:
    """Round-trip decimal formatting: floats via repr, ints plain, None empty."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# embedding files

EMB_FIXED_COLS = ("sample_id", "modality", "label")


def write_embeddings(path, batch: MultimodalBatch) -> None:
    d = batch.dim
    header = list(EMB_FIXED_COLS) + [f"v{j}" for j in range(d)]
    rows = []
    labels = batch.labels
    for m, z in enumerate(batch.embeddings):
        for i in range(batch.num_samples):
            lab = int(labels[i]) if labels is not None else -1
            rows.append([i, m, lab] + [float(v) for v in z[i]])
    write_csv(path, header, rows)


def read_embeddings(path) -> MultimodalBatch:
    """Parse an embedding file back into a row-aligned batch.

    Raises DataFormatError naming the offending line for malformed rows,
    duplicate (sample_id, modality) pairs, or inconsistent labels.
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    if tuple(header[:3]) != EMB_FIXED_COLS or len(header) < 4:
        raise DataFormatError(
            f"{path}: line 1: header must start with "
            f"'sample_id,modality,label' followed by value columns"
        )
    d = len(header) - 3
    records: dict[tuple[int, int], np.ndarray] = {}
    label_of: dict[int, int] = {}
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != 3 + d:
            raise DataFormatError(
                f"{path}: line {lineno}: expected {3 + d} columns, got {len(parts)}"
            )
        try:
            sid, mod, lab = int(parts[0]), int(parts[1]), int(parts[2])
            vec = np.array([float(v) for v in parts[3:]])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        if (sid, mod) in records:
            raise DataFormatError(
                f"{path}: line {lineno}: duplicate (sample_id={sid}, modality={mod})"
            )
        records[(sid, mod)] = vec
        if sid in label_of and label_of[sid] != lab:
            raise DataFormatError(
                f"{path}: line {lineno}: label {lab} contradicts earlier "
                f"label {label_of[sid]} for sample {sid}"
            )
        label_of[sid] = lab
    if not records:
        raise DataFormatError(f"{path}: no data rows")
    modalities = sorted({mod for (_, mod) in records})
    sample_ids = sorted({sid for (sid, _) in records})
    for m in modalities:
        missing = [sid for sid in sample_ids if (sid, m) not in records]
        if missing:
            raise DataFormatError(
                f"{path}: modality {m} is missing sample_id {missing[0]}"
            )
    mats = [
        np.stack([records[(sid, m)] for sid in sample_ids]) for m in modalities
    ]
    labs = np.array([label_of[sid] for sid in sample_ids])
    labels = None if (labs < 0).all() else labs
    if labels is not None and (labs < 0).any():
        raise DataFormatError(f"{path}: labels must be all present or all -1")
    return MultimodalBatch(mats, labels)


# ---------------------------------------------------------------------------
# run configuration schema

_DATASET_FIELDS = {
    "num_classes": int,
    "samples_per_class": int,
    "latent_dim": int,
    "modality_dims": list,
    "noise_sigma": float,
    "cone_offset": float,
    "seed": int,
    "identity_maps": bool,
}
_LOSS_FIELDS = {
    "variant": str,
    "tau": float,
    "tau_mode": str,
    "lambda1": float,
    "lambda2": float,
    "anchor": int,
    "pair_mode": str,
}
_TRAIN_FIELDS = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "seed": int,
    "switch_epoch": int,
    "hidden_sizes": list,
    "embed_dim": int,
    "activation": str,
    "eval_per_epoch": bool,
}
_EVAL_FIELDS = {
    "kmeans_restarts": int,
    "kmeans_max_iter": int,
    "knn_k": int,
    "recall_k": int,
    "seed": int,
    "source_modality": int,
    "target_modality": int,
}
_SECTIONS = {
    "dataset": _DATASET_FIELDS,
    "loss": _LOSS_FIELDS,
    "train": _TRAIN_FIELDS,
    "eval": _EVAL_FIELDS,
}


def _check_section(name: str, doc: dict, fields: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f'section "{name}" must be an object')
    out = {}
    for key, value in doc.items():
        if key not in fields:
            raise ConfigError(f'unknown key "{key}" in section "{name}"')
        want = fields[key]
        try:
            if want is bool:
                if not isinstance(value, bool):
                    raise TypeError("expected a boolean")
                out[key] = value
            elif want is list:
                out[key] = [int(v) for v in value]
            elif want is float:
                out[key] = float(value)
            elif want is int:
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError("expected an integer")
                out[key] = int(value)
            else:
                out[key] = str(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f'field "{name}.{key}": {exc}') from exc
    return out


@dataclass
class RunConfig:
    dataset: SyntheticDatasetSpec
    train: TrainConfig
    eval: EvalConfig
    output_dir: Optional[str] = None


def parse_run_config(doc: Any) -> RunConfig:
    """Validate a config document against the strict schema; unknown keys
    are rejected by name and defaults are materialized."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    for key in doc:
        if key not in (*_SECTIONS, "output_dir"):
            raise ConfigError(f'unknown key "{key}" at config root')
    parsed = {
        name: _check_section(name, doc.get(name, {}), fields)
        for name, fields in _SECTIONS.items()
    }
    try:
        dataset = SyntheticDatasetSpec(**parsed["dataset"])
        loss_doc = dict(parsed["loss"])
        variant = loss_doc.pop("variant", "ours")
        loss = LossConfig(**loss_doc)
        train = TrainConfig(variant=variant, loss=loss, **parsed["train"])
        eval_cfg = EvalConfig(**parsed["eval"])
    except (ConfigError,) as exc:
        raise
    except Exception as exc:  # invalid field values surface as config errors
        raise ConfigError(str(exc)) from exc
    output_dir = doc.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError('field "output_dir": expected a string')
    return RunConfig(dataset, train, eval_cfg, output_dir)


def resolved_config_dict(cfg: RunConfig, seed_source: str = "config") -> dict:
    """Full configuration with every default materialized, suitable for
    echoing next to run outputs."""
    loss = asdict(cfg.train.loss)
    loss["variant"] = cfg.train.variant
    train = asdict(cfg.train)
    del train["loss"]
    del train["variant"]
    return {
        "dataset": asdict(cfg.dataset),
        "loss": loss,
        "train": train,
        "eval": asdict(cfg.eval),
        "output_dir": cfg.output_dir,
        "seed_source": seed_source,
    }


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "modgap-checkpoint-v1"


def save_checkpoint(path, resolved_config: dict, encoders: list[EncoderParams],
                    log_tau: Optional[float] = None) -> None:
    """One structured JSON file: config, PRNG identity, and all encoder
    parameters as flat arrays with declared shapes."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": resolved_config,
        "prng": {
            "algorithm": "PCG64",
            "seed": resolved_config["train"]["seed"],
        },
        "log_tau": log_tau,
        "encoders": [
            {
                "activation": enc.activation,
                "layer_sizes": enc.layer_sizes,
                "layers": [
                    {
                        "shape": list(w.shape),
                        "weights": [float(v) for v in w.ravel()],
                        "bias": [float(v) for v in b],
                    }
                    for w, b in zip(enc.weights, enc.biases)
                ],
            }
            for enc in encoders
        ],
    }
    write_json(path, payload)


def load_checkpoint(path) -> tuple[dict, list[EncoderParams], Optional[float]]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    encoders = []
    for enc in payload["encoders"]:
        weights, biases = [], []
        for layer in enc["layers"]:
            shape = tuple(layer["shape"])
            weights.append(np.array(layer["weights"]).reshape(shape))
            biases.append(np.array(layer["bias"]))
        encoders.append(EncoderParams(weights, biases, enc["activation"]))
    return payload["config"], encoders, payload.get("log_tau")


# ---------------------------------------------------------------------------
# timeline serialization

def timeline_header(m_count: int, with_eval: bool) -> list[str]:
    pairs = [(m, n) for m in range(m_count) for n in range(m, m_count) if m < n]
    cols = ["epoch", "loss"]
    cols += [f"gap_{m}_{n}" for m, n in pairs]
    cols += [f"costp_{m}_{n}" for m, n in pairs]
    cols += [f"av_{m}" for m in range(m_count)]
    cols.append("tau")
    if with_eval:
        cols += ["v_measure", "knn", "r1"]
    return cols


def timeline_rows(records: list[EpochRecord], m_count: int,
                  with_eval: bool) -> list[list]:
    pairs = [(m, n) for m in range(m_count) for n in range(m, m_count) if m < n]
    rows = []
    for rec in records:
        row = [rec.epoch, rec.loss]
        row += [rec.gaps[p] for p in pairs]
        row += [rec.costps[p] for p in pairs]
        row += [rec.avs[m] for m in range(m_count)]
        row.append(rec.tau)
        if with_eval:
            row += [rec.v_measure, rec.knn, rec.recall1]
        rows.append(row)
    return rows


def write_timeline(path, records: list[EpochRecord], m_count: int,
                   with_eval: bool = False) -> None:
    write_csv(path, timeline_header(m_count, with_eval),
              timeline_rows(records, m_count, with_eval))
