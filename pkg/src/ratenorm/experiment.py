"""End-to-end pipeline: data, two-stage training, conversion, simulation, diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ratenorm.checkpoint import save_checkpoint
from ratenorm.config import ExperimentConfig
from ratenorm.conversion import (
    ConversionReport,
    convert_direct,
    convert_max_norm,
    convert_robust_norm,
    relu_equivalent,
    scale_thresholds,
)
from ratenorm.core.layers import Network
from ratenorm.data import Dataset, gen_synthetic, load_idx, train_test_subset
from ratenorm.diagnostics import (
    KCurve,
    k_curves_from_trace,
    layer_omegas,
    power_series,
    time_to_accuracy,
    write_energy,
    write_k_curves,
    write_summary,
)
from ratenorm.snn import SimulationTrace, SpikingNetwork, run
from ratenorm.training import TrainLog, mean_omega, stage1_train, stage2_train


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.dataset
    if d["source"] == "synthetic":
        full = gen_synthetic(cfg.seed, d["n_train"] + d["n_test"], d["classes"], d["dim"])
        train, test = train_test_subset(full, None, d["n_train"], d["n_test"], cfg.seed)
    else:
        cfg.check_paths()
        full = load_idx(d["train_images"], d["train_labels"])
        held = load_idx(d["test_images"], d["test_labels"], split="test") if "test_images" in d else None
        train, test = train_test_subset(full, held, d["n_train"], d["n_test"], cfg.seed)
    flatten = d.get("flatten", cfg.architecture[0]["kind"] == "affine")
    if flatten:
        train, test = train.flat(), test.flat()
    return train, test


def has_rate_norm(net: Network) -> bool:
    return bool(net.rate_norm_states())


def convert(cfg: ExperimentConfig, net: Network, calibration: np.ndarray) -> tuple[SpikingNetwork, ConversionReport]:
    """Convert with the configured scheme; Rate Norm nets go through their ReLU form for weight normalization."""
    conv = cfg.conversion
    readout = cfg.simulation["readout"]
    if conv["scheme"] == "direct":
        return convert_direct(net, readout=readout)
    ann = relu_equivalent(net) if has_rate_norm(net) else net
    if conv["scheme"] == "max_norm":
        return convert_max_norm(ann, calibration, readout=readout)
    return convert_robust_norm(ann, calibration, percentile=conv["percentile"], readout=readout)


def convert_baseline(cfg: ExperimentConfig, net: Network, calibration: np.ndarray):
    """Max Norm conversion of the network as it stood before threshold training."""
    ann = relu_equivalent(net, p_override=1.0) if has_rate_norm(net) else net
    return convert_max_norm(ann, calibration, readout=cfg.simulation["readout"])


def simulate(cfg: ExperimentConfig, snn: SpikingNetwork, test: Dataset, seed_offset: int = 0) -> SimulationTrace:
    """Run on the test split, accumulating K errors against the SNN's limit rates."""
    sim = cfg.simulation
    rng = np.random.default_rng(cfg.seed + seed_offset) if sim["coding"] == "poisson" else None
    return run(
        snn,
        test.inputs,
        sim["T"],
        sim["coding"],
        rng=rng,
        labels=test.labels,
        k_reference=snn.analog_rates(test.inputs),
    )


@dataclass
class Evaluation:
    trace: SimulationTrace
    accuracy: np.ndarray
    k_curves: list[KCurve]
    energy: object
    time_to_target: int | None
    energy_to_target: float | None

    def settle_times(self, threshold: float) -> list[int | None]:
        return [c.settle_time(threshold) for c in self.k_curves]


def evaluate(cfg: ExperimentConfig, snn: SpikingNetwork, test: Dataset, latency_target: float,
             energy_target: float, seed_offset: int = 0) -> Evaluation:
    trace = simulate(cfg, snn, test, seed_offset)
    acc = trace.accuracy_series()
    curves = k_curves_from_trace(None, trace)
    energy = power_series(trace, cfg.energy["alpha"], acc, energy_target)
    return Evaluation(trace, acc, curves, energy, time_to_accuracy(acc, latency_target), energy.energy_to_target)


def _ratio(num, den) -> float | None:
    if num is None or den is None or den == 0:
        return None
    return float(num) / float(den)


def _clean(x):
    """Plain JSON types; non-finite floats become None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


@dataclass
class ExperimentResult:
    out_dir: Path
    summary: dict
    net: Network
    logs: list[TrainLog] = field(default_factory=list)
    main: Evaluation | None = None
    baseline: Evaluation | None = None


def train(cfg: ExperimentConfig, train_set: Dataset, stage1_only: bool = False) -> tuple[Network, list[TrainLog], dict]:
    net = Network(cfg.architecture, seed=cfg.seed)
    logs = [stage1_train(net, train_set, cfg.stage1)]
    info = {}
    if has_rate_norm(net):
        info["mean_omega_stage1_train"] = mean_omega(net, train_set.inputs)
    if not stage1_only and cfg.stage2 is not None and has_rate_norm(net):
        logs.append(stage2_train(net, train_set, cfg.stage2))
        info["mean_omega_stage2_train"] = mean_omega(net, train_set.inputs)
    return net, logs, info


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, stage1_only: bool = False) -> ExperimentResult:
    """Execute the whole pipeline and write every artifact into ``out_dir``."""
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    train_set, test = load_data(cfg)

    net = Network(cfg.architecture, seed=cfg.seed)
    logs = [stage1_train(net, train_set, cfg.stage1)]
    rnl = has_rate_norm(net)
    ann_acc1 = net.accuracy(test.inputs, test.labels)
    latency_target = ann_acc1 - cfg.latency["target_drop"]
    energy_target = cfg.energy["target_fraction"] * ann_acc1
    omega1 = mean_omega(net, test.inputs) if rnl else None
    layer_omega1 = layer_omegas(net.rates(test.inputs)) if rnl else None

    base_eval = base_report = scaled_eval = None
    if cfg.conversion["baseline"] == "max_norm":
        base_snn, base_report = convert_baseline(cfg, net, train_set.inputs)
        base_report.save(out / "baseline_conversion_report.json")
        base_eval = evaluate(cfg, base_snn, test, latency_target, energy_target, seed_offset=1)
        scaled = scale_thresholds(base_snn, cfg.conversion["threshold_scale"])
        scaled_eval = evaluate(cfg, scaled, test, latency_target, energy_target, seed_offset=2)

    stage2_ran = False
    if not stage1_only and cfg.stage2 is not None and rnl:
        logs.append(stage2_train(net, train_set, cfg.stage2))
        stage2_ran = True
    ann_acc = net.accuracy(test.inputs, test.labels)

    save_checkpoint(net, out / "checkpoint.json")
    for log in logs:
        log.to_csv(out / f"train_log_{log.stage}.csv")

    snn, report = convert(cfg, net, train_set.inputs)
    report.save(out / "conversion_report.json")
    main = evaluate(cfg, snn, test, latency_target, energy_target, seed_offset=3)
    write_k_curves(main.k_curves, out / "k_curves.csv")
    write_energy(main.energy, main.accuracy, out / "energy.csv")

    k_thr = cfg.simulation["k_threshold"]
    summary = {
        "seed": cfg.seed,
        "T": cfg.simulation["T"],
        "coding": cfg.simulation["coding"],
        "scheme": report.scheme,
        "stage2": stage2_ran,
        "n_train": len(train_set),
        "n_test": len(test),
        "ann_accuracy_stage1": ann_acc1,
        "ann_accuracy": ann_acc,
        "snn_accuracy": float(main.accuracy[-1]),
        "conversion_loss": ann_acc - float(main.accuracy[-1]),
        "thresholds": report.v_th,
        "p": net.rate_norm_states()[0].p if rnl else None,
        "mean_omega_stage1": omega1,
        "mean_omega": mean_omega(net, test.inputs) if rnl else None,
        "layer_omega_stage1": layer_omega1,
        "layer_omega": layer_omegas(net.rates(test.inputs)) if rnl else None,
        "latency_target": latency_target,
        "energy_target": energy_target,
        "alpha": cfg.energy["alpha"],
        "time_to_accuracy": main.time_to_target,
        "energy_to_accuracy": main.energy_to_target,
        "total_spikes": int(main.trace.total_spikes()[-1]),
        "energy_total": float(main.energy.energy[-1]),
        "k_settle_time": main.settle_times(k_thr),
        "k_final": [float(c.K[-1]) for c in main.k_curves],
    }
    if base_eval is not None:
        write_k_curves(base_eval.k_curves, out / "k_curves_baseline.csv")
        write_energy(base_eval.energy, base_eval.accuracy, out / "energy_baseline.csv")
        summary["baseline"] = {
            "scheme": base_report.scheme,
            "scale_factors": base_report.scale_factors,
            "snn_accuracy": float(base_eval.accuracy[-1]),
            "time_to_accuracy": base_eval.time_to_target,
            "energy_to_accuracy": base_eval.energy_to_target,
            "total_spikes": int(base_eval.trace.total_spikes()[-1]),
            "k_settle_time": base_eval.settle_times(k_thr),
            "k_settle_time_scaled": scaled_eval.settle_times(k_thr),
            "threshold_scale": cfg.conversion["threshold_scale"],
            "time_to_accuracy_scaled": scaled_eval.time_to_target,
        }
        summary["speedup"] = _ratio(base_eval.time_to_target, main.time_to_target)
        summary["energy_ratio"] = _ratio(main.energy_to_target, base_eval.energy_to_target)
    summary = _clean(summary)
    write_summary(summary, out / "summary.json")
    return ExperimentResult(out, summary, net, logs, main, base_eval)


def dump_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True))
