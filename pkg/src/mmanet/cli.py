"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
Every command writes into ``output_dir`` from the config unless ``--out``
is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .config import TrainConfig, dump_config, load_config
from .errors import ConfigError, NumericalError
from .evaluation import emit_report, evaluate_combinations, format_table, predict
from .mar import MiningState, finalize_mining, format_mining_report, mining_report, update_memory_bank
from .models import load_checkpoint, save_checkpoint
from .train import TrainLog, init_networks, load_data, pretrain_teacher, train_deployment

log = logging.getLogger("mmanet")

TEACHER_CKPT = "teacher.ckpt"
DEPLOYMENT_CKPT = "deployment.ckpt"
TEACHER_LOG = "teacher_log.jsonl"
TRAIN_LOG = "train_log.jsonl"
MINING_REPORT = "mining_report.json"


def _out_dir(cfg: TrainConfig, override) -> Path:
    out = Path(override or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(cfg, role, train):
    return {
        "role": role,
        "input_dims": [int(f.shape[1]) for f in train.features],
        "num_classes": cfg.data.num_classes,
        "seed": cfg.seed,
    }


def _load_role(path, role, module):
    try:
        meta = load_checkpoint(path, {role: module})
    except (KeyError, RuntimeError) as exc:
        raise ConfigError("checkpoint", f"{path} does not match the configured {role} network: {exc}") from None
    return meta


def cmd_train_teacher(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out)
    train, _ = load_data(cfg)
    teacher, _ = init_networks(cfg, [f.shape[1] for f in train.features])
    teacher, history = pretrain_teacher(cfg, train, teacher)
    save_checkpoint(out / TEACHER_CKPT, {"teacher": teacher}, _meta(cfg, "teacher", train))
    (out / TEACHER_LOG).write_text(history.to_jsonl())
    dump_config(cfg, out / "config.yaml")
    print(f"teacher checkpoint: {out / TEACHER_CKPT}")
    return 0


def cmd_train_deployment(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args.out)
    train, _ = load_data(cfg)
    teacher, deployment = init_networks(cfg, [f.shape[1] for f in train.features])
    _load_role(args.teacher, "teacher", teacher)
    result = train_deployment(cfg, teacher, train, deployment)
    save_checkpoint(out / DEPLOYMENT_CKPT, {"deployment": result.deployment}, _meta(cfg, "deployment", train))
    (out / TRAIN_LOG).write_text(result.log.to_jsonl())
    report = mining_report(result.mining, cfg.names)
    (out / MINING_REPORT).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    dump_config(cfg, out / "config.yaml")
    print(f"deployment checkpoint: {out / DEPLOYMENT_CKPT}")
    print(format_mining_report(report))
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    _, test = load_data(cfg)
    _, deployment = init_networks(cfg, [f.shape[1] for f in test.features])
    _load_role(args.ckpt, "deployment", deployment)
    deployment.eval()
    report = evaluate_combinations(deployment, test, names=cfg.names)
    print(format_table(report))
    out = _out_dir(cfg, args.out)
    path = out / f"report.{'png' if args.format == 'plot' else args.format}"
    extra = {}
    if args.format == "plot":
        logits = predict(deployment, test.features, [True] * test.num_modalities)
        extra = dict(logits=logits, labels=test.labels)
    emit_report(report, args.format, path, **extra)
    print(f"report: {path}")
    return 0


def _names_for(run_dir: Path, m):
    cfg_path = run_dir / "config.yaml"
    if cfg_path.exists():
        return load_config(cfg_path).names
    return [f"M{j}" for j in range(m)]


def cmd_mining_report(args) -> int:
    run_dir = Path(args.log)
    log_path = run_dir / TRAIN_LOG
    if not log_path.exists():
        raise ConfigError("log", f"no {TRAIN_LOG} in {run_dir}")
    rows = [r.mining["g_d"] for r in TrainLog.from_jsonl(log_path.read_text()).records if r.mining]
    if not rows:
        raise ConfigError("log", f"{log_path} holds no mining records")
    state = MiningState.empty(len(rows), len(rows[0]))
    for epoch, g_d in enumerate(rows, start=1):
        state = update_memory_bank(state, g_d, epoch)
    report = mining_report(finalize_mining(state), _names_for(run_dir, len(rows[0])))
    print(format_mining_report(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmanet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="pretrain the complete-modality teacher")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-deployment", help="train the dropout-tolerant network against a teacher")
    p.add_argument("--config", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_deployment)

    p = sub.add_parser("evaluate", help="per-combination error table for a deployment checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--format", choices=("csv", "json", "plot"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mining-report", help="print the strong-modality mining summary of a run")
    p.add_argument("--log", required=True, help="run directory holding train_log.jsonl")
    p.set_defaults(func=cmd_mining_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
