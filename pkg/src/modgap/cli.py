"""Command-line surface.

Exit codes are a stable contract: 0 success, 1 runtime/data error,
2 usage or configuration error. Every command writes into its own output
directory and refuses to reuse an existing one unless --force is given.
The environment variable MODGAP_SEED overrides the config seeds; the
override is recorded in resolved_config.json.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .clustering import cluster_eval
from .errors import ConfigError, DataFormatError, ModgapError
from .experiments import (
    EvalConfig,
    run_gap_shift_sweep,
    run_lambda_ablation,
    run_sphere_sim,
)
from .metrics import compute_gap_report
from .synthdata import SphereSimConfig, generate_dataset
from .trainer import train


class _CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _prepare_out_dir(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not force:
        raise _CliError(
            f"output directory {out} already exists (pass --force to reuse)", 1
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_run_config(path: str) -> fileio.RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise _CliError(f"config file not found: {path}", 2)
    except json.JSONDecodeError as exc:
        raise _CliError(f"config is not valid JSON: {exc}", 2)
    try:
        return fileio.parse_run_config(doc)
    except ConfigError as exc:
        raise _CliError(f"config error: {exc}", 2)


def _apply_env_seed(cfg: fileio.RunConfig) -> tuple[fileio.RunConfig, str]:
    env = os.environ.get("MODGAP_SEED")
    if env is None:
        return cfg, "config"
    try:
        seed = int(env)
    except ValueError:
        raise _CliError(f"MODGAP_SEED must be an integer, got {env!r}", 2)
    cfg = fileio.RunConfig(
        dataset=replace(cfg.dataset, seed=seed),
        train=replace(cfg.train, seed=seed),
        eval=replace(cfg.eval, seed=seed),
        output_dir=cfg.output_dir,
    )
    return cfg, f"env:MODGAP_SEED={seed}"


def _parse_float_list(text: str, flag: str) -> list[float]:
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    if not items:
        raise _CliError(f"{flag} needs a non-empty comma-separated list", 2)
    try:
        return [float(t) for t in items]
    except ValueError as exc:
        raise _CliError(f"{flag}: {exc}", 2)


def cmd_simulate_sphere(args) -> int:
    if args.grid_step <= 0:
        raise _CliError("--grid-step must be positive", 2)
    if not (0 <= args.delta <= 180):
        raise _CliError("--delta must lie in [0, 180]", 2)
    out = _prepare_out_dir(args.out, args.force)
    grid = np.arange(0.0, 180.0 + args.grid_step / 2, args.grid_step)
    variant = {"clip": "clip_only", "ours": "clgap"}[args.variant]
    cfg = SphereSimConfig(delta_deg=args.delta, theta_grid=grid,
                          loss_variant=variant)
    result = run_sphere_sim(cfg)
    rows = []
    for i in range(result.thetas.shape[0]):
        gm = result.grad_mismatched[i]
        rows.append([
            result.thetas[i], result.losses[i], result.grad_matched[i],
            None if np.isnan(gm) else gm,
        ])
    fileio.write_csv(out / "landscape.csv",
                     ["theta", "loss", "grad_matched", "grad_mismatched"], rows)
    fileio.write_json(out / "summary.json", {
        "argmin_theta": result.argmin_theta,
        "variant": args.variant,
        "loss_variant": variant,
        "delta_deg": args.delta,
        "grid_step": args.grid_step,
        "tau": cfg.tau,
        "mismatched_empty": result.mismatched_empty,
    })
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    cfg, seed_source = _apply_env_seed(cfg)
    out = _prepare_out_dir(args.out, args.force)
    resolved = fileio.resolved_config_dict(cfg, seed_source)
    fileio.write_json(out / "resolved_config.json", resolved)
    dataset = generate_dataset(cfg.dataset)
    params, timeline = train(dataset, cfg.train)
    log_tau = None
    if cfg.train.variant == "clip_lt" and timeline:
        log_tau = float(np.log(timeline[-1].tau))
    fileio.save_checkpoint(out / "checkpoint.json", resolved, params, log_tau)
    fileio.write_timeline(out / "timeline.csv", timeline,
                          dataset.num_modalities, cfg.train.eval_per_epoch)
    from .experiments import final_metrics
    from .trainer import encode_dataset

    finals = final_metrics(params, dataset, cfg.eval)
    finals["final_loss"] = timeline[-1].loss if timeline else None
    fileio.write_json(out / "final_metrics.json", finals)
    full = encode_dataset(params, dataset.inputs, dataset.labels)
    fileio.write_embeddings(out / "embeddings.csv", full)
    return 0


def cmd_shift_sweep(args) -> int:
    targets = _parse_float_list(args.targets, "--targets")
    if any(t < 0 for t in targets):
        raise _CliError("--targets must be nonnegative", 2)
    try:
        batch = fileio.read_embeddings(args.embeddings)
    except DataFormatError as exc:
        raise _CliError(str(exc), 1)
    if batch.num_modalities < 2:
        raise _CliError("shift sweep needs at least two modalities", 1)
    if batch.labels is None:
        raise _CliError("shift sweep needs a labeled embedding file", 1)
    out = _prepare_out_dir(args.out, args.force)
    renorm = args.renormalize == "true"
    result = run_gap_shift_sweep(batch, targets, renorm, EvalConfig())
    rows = [[r.target_gap, r.measured_gap, r.r1_m2n, r.r1_n2m,
             r.v_measure, r.knn, r.status] for r in result.rows]
    fileio.write_csv(out / "sweep.csv",
                     ["target_gap", "measured_gap", "r1_m2n", "r1_n2m",
                      "v_measure", "knn", "status"], rows)
    unreachable = [r for r in result.rows if r.status != "ok"]
    if unreachable:
        print(f"{len(unreachable)} target(s) unreachable; see sweep.csv",
              file=sys.stderr)
        return 1
    return 0


def cmd_metrics(args) -> int:
    if args.knn_k < 1:
        raise _CliError("--knn-k must be positive", 2)
    try:
        batch = fileio.read_embeddings(args.embeddings)
    except DataFormatError as exc:
        raise _CliError(str(exc), 1)
    out = _prepare_out_dir(args.out, args.force)
    report: dict = dict(compute_gap_report(batch).to_flat_dict())
    if batch.labels is not None:
        k_classes = int(np.unique(batch.labels).size)
        v, knn = cluster_eval(batch, k_classes, knn_k=args.knn_k)
        report["v_measure"] = v
        report["knn"] = knn
    fileio.write_json(out / "report.json", report)
    return 0


def cmd_ablate(args) -> int:
    grid1 = _parse_float_list(args.lambda1, "--lambda1")
    grid2 = _parse_float_list(args.lambda2, "--lambda2")
    cfg = _load_run_config(args.config)
    cfg, _ = _apply_env_seed(cfg)
    out = _prepare_out_dir(args.out, args.force)
    dataset = generate_dataset(cfg.dataset)
    cells = run_lambda_ablation(dataset, grid1, grid2, cfg.train, cfg.eval)
    rows = [[c.lambda1, c.lambda2, c.r1, c.v_measure, c.avg, c.status]
            for c in cells]
    fileio.write_csv(out / "grid.csv",
                     ["lambda1", "lambda2", "r1", "v_measure", "avg", "status"],
                     rows)
    for c in cells:
        if c.status == "ok":
            cell_dir = out / f"cell_{fmt_cell(c.lambda1)}_{fmt_cell(c.lambda2)}"
            cell_dir.mkdir(exist_ok=True)
            fileio.write_timeline(cell_dir / "timeline.csv", c.timeline,
                                  dataset.num_modalities,
                                  cfg.train.eval_per_epoch)
    return 0 if any(c.status == "ok" for c in cells) else 1


def fmt_cell(x: float) -> str:
    return repr(float(x)).replace(".", "p")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modgap",
        description="Numerical laboratory for gap-closing multimodal objectives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-sphere",
                       help="sweep the two-ring sphere configuration")
    p.add_argument("--delta", type=float, required=True,
                   help="initial pair offset in degrees")
    p.add_argument("--variant", choices=("clip", "ours"), required=True)
    p.add_argument("--grid-step", type=float, required=True,
                   help="sweep resolution in degrees")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate_sphere)

    p = sub.add_parser("train", help="train encoders on synthetic data")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("shift-sweep",
                       help="post-hoc gap sweep over an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--targets", required=True,
                   help="comma-separated target gaps")
    p.add_argument("--renormalize", choices=("true", "false"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_shift_sweep)

    p = sub.add_parser("metrics", help="gap/costp/av report for a file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ablate", help="lambda sensitivity grid")
    p.add_argument("--config", required=True)
    p.add_argument("--lambda1", required=True, help="comma-separated weights")
    p.add_argument("--lambda2", required=True, help="comma-separated weights")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ModgapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
