"""Command line entry point: ``ratenorm {train,convert,simulate,diagnose,run,validate}``.

Exit codes: 0 on success, 1 for internal failures, 2 for bad user input
(missing files, invalid configs or checkpoints).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from ratenorm.checkpoint import load_checkpoint, save_checkpoint
from ratenorm.config import ExperimentConfig, load_config
from ratenorm.errors import ConfigError, FormatError
from ratenorm.experiment import (
    convert,
    dump_json,
    evaluate,
    load_data,
    run_experiment,
    simulate,
    train,
)
from ratenorm.diagnostics import write_energy, write_k_curves
from ratenorm.snn import export_trace
from ratenorm.validate import validate_dir

USER_ERRORS = (FileNotFoundError, ConfigError, FormatError)


def _load(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = Path(args.out) if args.out else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _checkpoint(args, out: Path):
    return load_checkpoint(args.checkpoint or out / "checkpoint.json")


def cmd_train(args) -> int:
    cfg, out = _load(args)
    train_set, _ = load_data(cfg)
    net, logs, _ = train(cfg, train_set, stage1_only=args.stage1_only)
    save_checkpoint(net, out / "checkpoint.json")
    for log in logs:
        log.to_csv(out / f"train_log_{log.stage}.csv")
    print(f"wrote {out / 'checkpoint.json'}")
    return 0


def cmd_convert(args) -> int:
    cfg, out = _load(args)
    net = _checkpoint(args, out)
    train_set, _ = load_data(cfg)
    _, report = convert(cfg, net, train_set.inputs)
    report.save(out / "conversion_report.json")
    print(f"{report.scheme}: v_th={report.v_th}")
    return 0


def cmd_simulate(args) -> int:
    cfg, out = _load(args)
    net = _checkpoint(args, out)
    train_set, test = load_data(cfg)
    snn, _ = convert(cfg, net, train_set.inputs)
    trace = simulate(cfg, snn, test)
    export_trace(trace, out / "trace.csv", out / "trace.json")
    print(f"accuracy at T={trace.T}: {trace.accuracy_series()[-1]:.4f}")
    return 0


def cmd_diagnose(args) -> int:
    cfg, out = _load(args)
    net = _checkpoint(args, out)
    train_set, test = load_data(cfg)
    ann_acc = net.accuracy(test.inputs, test.labels)
    snn, report = convert(cfg, net, train_set.inputs)
    ev = evaluate(cfg, snn, test, ann_acc - cfg.latency["target_drop"], cfg.energy["target_fraction"] * ann_acc)
    write_k_curves(ev.k_curves, out / "k_curves.csv")
    write_energy(ev.energy, ev.accuracy, out / "energy.csv")
    summary = {
        "seed": cfg.seed,
        "T": cfg.simulation["T"],
        "scheme": report.scheme,
        "ann_accuracy": ann_acc,
        "snn_accuracy": float(ev.accuracy[-1]),
        "time_to_accuracy": ev.time_to_target,
        "energy_to_accuracy": ev.energy_to_target,
        "total_spikes": int(ev.trace.total_spikes()[-1]),
        "k_settle_time": ev.settle_times(cfg.simulation["k_threshold"]),
    }
    dump_json(summary, out / "summary.json")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    cfg, out = _load(args)
    result = run_experiment(cfg, out, stage1_only=args.stage1_only)
    s = result.summary
    print(f"ANN {s['ann_accuracy']:.4f}  SNN@T {s['snn_accuracy']:.4f}  time-to-accuracy {s['time_to_accuracy']}"
          f"  speedup {s.get('speedup')}  energy ratio {s.get('energy_ratio')}")
    print(f"artifacts in {out}")
    return 0


def cmd_validate(args) -> int:
    errors = validate_dir(args.dir)
    for e in errors:
        print(e, file=sys.stderr)
    if errors:
        return 2
    print(f"{args.dir}: all output files valid")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratenorm", description="Rate Norm ANN-to-SNN conversion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, stage1=False):
        p.add_argument("--config", required=True, help="experiment JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
        if checkpoint:
            p.add_argument("--checkpoint", default=None, help="checkpoint JSON (default: OUT/checkpoint.json)")
        if stage1:
            p.add_argument("--stage1-only", action="store_true", help="skip threshold training")

    common(sub.add_parser("train", help="two-stage training; writes checkpoint and logs"), stage1=True)
    common(sub.add_parser("convert", help="convert a checkpoint; writes the conversion report"), checkpoint=True)
    common(sub.add_parser("simulate", help="convert and simulate; writes trace CSV/JSON"), checkpoint=True)
    common(sub.add_parser("diagnose", help="K curves, energy and latency for a checkpoint"), checkpoint=True)
    common(sub.add_parser("run", help="whole pipeline"), stage1=True)
    v = sub.add_parser("validate", help="check every output file in a run directory")
    v.add_argument("dir")
    return parser


COMMANDS = {
    "train": cmd_train,
    "convert": cmd_convert,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "run": cmd_run,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except USER_ERRORS as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every failure becomes a structured message
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
