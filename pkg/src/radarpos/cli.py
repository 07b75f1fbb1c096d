"""Command-line entry point.

Subcommands: simulate, pretrain, finetune, eval, sweep, gradcheck.
Precedence for settings is preset < --config JSON < explicit flags. The
last stdout line of every command is a single JSON object with the
final metrics; human-readable progress goes to stderr. Exit codes are a
stable contract: 0 success, 2 configuration error, 3 file-format error,
4 numeric abort, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import RunConfig, config_to_dict, load_config
from .errors import (ConfigError, FormatError, InsufficientDataError,
                     NumericAbort, RadarPosError)
from .experiments import (RANK_SWEEP_DEFAULT, SIGMA_SWEEP_DEFAULT,
                          SWEEP_PARAMS, ExperimentData, parse_scenario, sweep,
                          sweep_rows_to_csv)
from .finetune import evaluate, finetune
from .gradcheck import REL_TOL, check_model_losses, check_op_gradients
from .model import (ModelConfig, RadarPosModel, finetune_trainable_count,
                    finetune_trainable_fraction)
from .pdw import DatasetSplit, build_pretrain_pool, default_emitters, default_modes, make_split
from .pretraining import masked_position_ce, pretrain
from .runs import (NdjsonLogger, load_dataset_checked, sha256_file, utc_stamp,
                   write_run_manifest)
from .serialization import write_checkpoint, read_checkpoint, write_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5


def _progress(msg: str):
    print(msg, file=sys.stderr)


def _emit(metrics: dict):
    print(json.dumps(metrics, sort_keys=True))


def _thread_cap() -> int:
    raw = os.environ.get("RADARPOS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"RADARPOS_THREADS must be an integer, got {raw!r}")


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config, preset=args.preset)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    for section, flag in (("pretrain", "epochs"), ("pretrain", "lr"),
                          ("pretrain", "sigma"), ("pretrain", "batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = dataclasses.replace(
                cfg, **{section: dataclasses.replace(getattr(cfg, section), **{flag: value})}
            )
    if getattr(args, "rank", None) is not None:
        cfg = dataclasses.replace(
            cfg, finetune=dataclasses.replace(cfg.finetune, lora_rank=args.rank)
        )
    return cfg


def _checkpoint_meta(cfg: RunConfig, model: RadarPosModel, stage: str) -> dict:
    return {
        "model": dataclasses.asdict(model.cfg),
        "stage": stage,
        "seed": cfg.seed,
        "lora_rank": model.lora_rank,
        "dtype": str(np.dtype(model.dtype)),
    }


def _model_from_checkpoint(path: str):
    if not os.path.exists(path):
        raise FormatError(f"checkpoint not found: {path}")
    tensors, meta = read_checkpoint(path)
    if "model" not in meta:
        raise FormatError(f"{path}: missing model configuration sidecar")
    try:
        model_cfg = ModelConfig(**meta["model"])
    except TypeError as exc:
        raise FormatError(f"{path}: bad model configuration: {exc}") from exc
    model = RadarPosModel(model_cfg, seed=int(meta.get("seed", 0)))
    required = [f"encoder.{i}.attn.wq" for i in range(model_cfg.encoder_layers)]
    missing = [n for n in required if n not in tensors]
    if missing:
        raise FormatError(f"{path}: missing encoder tensors: {missing[:3]}")
    rank = meta.get("lora_rank")
    if rank:
        model.attach_lora(int(rank), seed=int(meta.get("seed", 0)) + 1)
    model.load_state_dict(tensors)
    return model, meta


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _build_config(args)
    started = utc_stamp()
    os.makedirs(args.out, exist_ok=True)
    specs = {"modes": default_modes(), "emitters": default_emitters(), "noise": cfg.sim.noise}

    hashes = {}
    counts = {}
    for mode in default_modes():
        split = make_split(mode, ratio=cfg.sim.ratio, test_total=cfg.sim.test_total,
                           seed=cfg.seed, noise=cfg.sim.noise, n_pulses=cfg.sim.n_pulses)
        path = os.path.join(args.out, f"m{mode.mode_id}.rpdw")
        write_dataset(path, split, specs=specs)
        hashes[os.path.basename(path)] = sha256_file(path)
        counts[f"m{mode.mode_id}"] = {"train": len(split.train), "test": len(split.test)}
        _progress(f"wrote {path}: {len(split.train)} train / {len(split.test)} test")

    pool = build_pretrain_pool(cfg.sim.pool_size, seed=cfg.seed,
                               noise=cfg.sim.noise, n_pulses=cfg.sim.n_pulses)
    pool_path = os.path.join(args.out, "pretrain.rpdw")
    write_dataset(pool_path, DatasetSplit(train=pool, test=[], ratio=(), seed=cfg.seed))
    hashes["pretrain.rpdw"] = sha256_file(pool_path)
    counts["pretrain_pool"] = len(pool)
    _progress(f"wrote {pool_path}: {len(pool)} records")

    metrics = {"command": "simulate", "counts": counts, "files": hashes, "seed": cfg.seed}
    write_run_manifest(args.out, "simulate", config_to_dict(cfg), {"root": cfg.seed},
                       hashes, metrics, started)
    _emit(metrics)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _build_config(args)
    started = utc_stamp()
    os.makedirs(args.out, exist_ok=True)
    split = load_dataset_checked(args.dataset)
    records = split.train + split.test

    model = RadarPosModel(cfg.model, seed=cfg.seed)
    log = NdjsonLogger(os.path.join(args.out, "pretrain_log.ndjson"))
    try:
        result = pretrain(model, records, cfg.pretrain, seed=cfg.seed, log_fn=log)
    finally:
        log.close()

    ckpt_path = os.path.join(args.out, "checkpoint.rpck")
    write_checkpoint(ckpt_path, model.state_dict(), _checkpoint_meta(cfg, model, "pretrained"))
    ce = masked_position_ce(model, records, seed=cfg.seed)
    metrics = {
        "command": "pretrain",
        "epochs": cfg.pretrain.epochs,
        "final_loss": result.final_loss,
        "masked_position_ce": ce,
        "checkpoint": os.path.basename(ckpt_path),
        "checkpoint_sha256": sha256_file(ckpt_path),
        "seed": cfg.seed,
    }
    write_run_manifest(args.out, "pretrain", config_to_dict(cfg), {"root": cfg.seed},
                       {os.path.basename(args.dataset): sha256_file(args.dataset)},
                       metrics, started)
    _emit(metrics)
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _build_config(args)
    started = utc_stamp()
    os.makedirs(args.out, exist_ok=True)
    split = load_dataset_checked(args.dataset)
    model, _ = _model_from_checkpoint(args.checkpoint)

    log = NdjsonLogger(os.path.join(args.out, "finetune_log.ndjson"))
    try:
        history = finetune(model, split.train, cfg.finetune.schedule,
                           rank=cfg.finetune.lora_rank, seed=cfg.seed + 1,
                           batch_size=cfg.finetune.batch_size,
                           weight_decay=cfg.finetune.weight_decay, log_fn=log)
    finally:
        log.close()

    ckpt_path = os.path.join(args.out, "finetuned.rpck")
    # Decoder and projector serve pretraining only; the recognition
    # artifact ships without them.
    state = {name: arr for name, arr in model.state_dict().items()
             if not name.startswith(("decoder.", "projector."))}
    write_checkpoint(ckpt_path, state, _checkpoint_meta(cfg, model, "finetuned"))
    metrics = {
        "command": "finetune",
        "final_loss": history[-1]["loss"],
        "lora_rank": cfg.finetune.lora_rank,
        "trainable_parameters": finetune_trainable_count(model.cfg, cfg.finetune.lora_rank),
        "trainable_fraction": finetune_trainable_fraction(model.cfg, cfg.finetune.lora_rank),
        "checkpoint": os.path.basename(ckpt_path),
        "checkpoint_sha256": sha256_file(ckpt_path),
        "seed": cfg.seed,
    }
    write_run_manifest(args.out, "finetune", config_to_dict(cfg), {"root": cfg.seed},
                       {os.path.basename(args.dataset): sha256_file(args.dataset)},
                       metrics, started)
    _emit(metrics)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    started = utc_stamp()
    split = load_dataset_checked(args.dataset)
    model, _ = _model_from_checkpoint(args.checkpoint)
    scenario = None
    if args.scenario:
        src, tgt = parse_scenario(args.scenario)
        scenario = (f"m{src}", f"m{tgt}")
    report = evaluate(model, split.test if split.test else split.train, scenario=scenario)
    metrics = {"command": "eval", **report.to_dict(), "seed": cfg.seed}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_run_manifest(args.out, "eval", config_to_dict(cfg), {"root": cfg.seed},
                           {os.path.basename(args.dataset): sha256_file(args.dataset)},
                           metrics, started)
    _emit(metrics)
    return EXIT_OK


def _default_sweep_values(param: str):
    if param == "sigma":
        return list(SIGMA_SWEEP_DEFAULT)
    if param == "lora_rank":
        return list(RANK_SWEEP_DEFAULT)
    return ["on", "off"]


def _parse_sweep_values(param: str, raw: str | None):
    if raw is None:
        return _default_sweep_values(param)
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values must name at least one value")
    if param == "sigma":
        return [float(v) for v in values]
    if param == "lora_rank":
        return [int(v) for v in values]
    return values


def cmd_sweep(args) -> int:
    cfg = _build_config(args)
    started = utc_stamp()
    os.makedirs(args.out, exist_ok=True)
    scenario = parse_scenario(args.scenario)
    values = _parse_sweep_values(args.param, args.values)
    threads = _thread_cap()

    data = ExperimentData(cfg)
    if threads > 1 and len(values) > 1:
        rows = _parallel_sweep(args.param, values, scenario, cfg, threads)
    else:
        rows = sweep(args.param, values, scenario, cfg, data)

    csv_text = sweep_rows_to_csv(rows)
    csv_path = os.path.join(args.out, f"sweep_{args.param}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    _progress(f"wrote {csv_path} ({len(rows)} rows)")
    metrics = {"command": "sweep", "param": args.param, "rows": rows, "seed": cfg.seed,
               "csv": os.path.basename(csv_path)}
    write_run_manifest(args.out, "sweep", config_to_dict(cfg), {"root": cfg.seed},
                       {}, metrics, started)
    _emit(metrics)
    return EXIT_OK


def _sweep_single_point(payload):
    """Top-level worker so process pools can pickle it."""
    param, value, scenario, cfg_dict, preset = payload
    from .config import merge_config, preset_config

    cfg = merge_config(preset_config(preset), cfg_dict)
    rows = sweep(param, [value], tuple(scenario), cfg)
    return rows[0]


def _parallel_sweep(param, values, scenario, cfg: RunConfig, threads: int):
    from concurrent.futures import ProcessPoolExecutor

    cfg_dict = config_to_dict(cfg)
    preset = cfg_dict.pop("preset")
    payloads = [(param, v, list(scenario), cfg_dict, preset) for v in values]
    with ProcessPoolExecutor(max_workers=min(threads, len(values))) as pool:
        return list(pool.map(_sweep_single_point, payloads))


def cmd_gradcheck(args) -> int:
    cfg = _build_config(args)
    op_results = check_op_gradients(seed=cfg.seed, corrupt=args.self_test_corrupt)
    for name, err in op_results:
        _progress(f"op {name:20s} max rel err {err:.3e}")
    failed_ops = [name for name, err in op_results if err >= REL_TOL]
    metrics = {
        "command": "gradcheck",
        "ops": {name: err for name, err in op_results},
        "tolerance": REL_TOL,
    }

    if args.self_test_corrupt:
        # Plumbing self-test: the op sweep alone must trip the failure path.
        metrics["failed"] = failed_ops
        _emit(metrics)
        _progress(f"gradcheck FAILED: {failed_ops}")
        return EXIT_GRADCHECK if failed_ops else EXIT_OK

    report = check_model_losses(cfg=cfg.model if args.preset == "tiny" else None,
                                seed=cfg.seed, h=args.h)
    for name, err in report.max_errors.items():
        _progress(f"loss {name:18s} max rel err {err:.3e}")
    failed_losses = [name for name, err in report.max_errors.items() if err >= REL_TOL]
    metrics.update({
        "losses": report.max_errors,
        "max_abs_diff": report.max_abs_diff,
        "worst": max(max(err for _, err in op_results), report.worst),
        "failed": failed_ops + failed_losses,
        "entries_checked": report.entries_checked,
    })
    _emit(metrics)
    if failed_ops or failed_losses:
        _progress(f"gradcheck FAILED: {failed_ops + failed_losses}")
        return EXIT_GRADCHECK
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radarpos",
        description="Position-aware self-supervised pretraining for radar pulses",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--preset", choices=("paper", "tiny"), default="paper")
        p.add_argument("--seed", type=int, default=None)
        if out_required:
            p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("simulate", help="write RPDW datasets for all modes")
    common(p)

    p = sub.add_parser("pretrain", help="masked position pretraining")
    common(p)
    p.add_argument("--dataset", required=True, help="pretraining pool (.rpdw)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)

    p = sub.add_parser("finetune", help="LoRA fine-tune on a mode's train split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="mode dataset (.rpdw)")
    p.add_argument("--rank", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("paper", "tiny"), default="paper")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scenario", default=None, help="label, e.g. m0:m1")

    p = sub.add_parser("sweep", help="hyperparameter sweep over full runs")
    common(p)
    p.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p.add_argument("--values", default=None, help="comma-separated values")
    p.add_argument("--scenario", required=True, help="e.g. m0:m1")

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("paper", "tiny"), default="tiny")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--self-test-corrupt", action="store_true", help=argparse.SUPPRESS)
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        _progress(f"configuration error: {exc}")
        return EXIT_CONFIG
    except (FormatError, InsufficientDataError) as exc:
        _progress(f"format error: {exc}")
        return EXIT_FORMAT
    except NumericAbort as exc:
        _progress(f"numeric abort: {exc}")
        _progress(f"batch index: {exc.batch_index}")
        _progress(f"recent losses: {exc.loss_history[-10:]}")
        return EXIT_NUMERIC
    except RadarPosError as exc:
        _progress(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
