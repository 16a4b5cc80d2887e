"""Conversion-quality and latency measures.

``K(r_hat, r) = |r - r_hat|^2 / |r_hat|^2`` measures how far the spiking
rates are from the rates they converge to, ``omega(r_hat) = |r_hat|_1 /
|r_hat|^2`` is the coefficient of the ``2 * omega / t`` upper bound on K
under constant coding, and the power model charges ``alpha`` joules per
spike with 1 ms time-steps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ratenorm.snn import SimulationTrace

STEP_SECONDS = 1e-3
DEFAULT_ALPHA = 1e-9


def k_value(r_hat, r) -> float:
    r_hat = np.asarray(r_hat, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if r_hat.shape != r.shape:
        raise ValueError(f"rate shapes differ: {r_hat.shape} vs {r.shape}")
    denom = float(np.sum(r_hat * r_hat))
    if denom == 0.0:
        raise ValueError("K is undefined when the reference rates are all zero")
    return float(np.sum((r - r_hat) ** 2)) / denom


def omega(r_hat) -> float:
    r_hat = np.asarray(r_hat, dtype=np.float64)
    if r_hat.size and r_hat.min() < 0:
        raise ValueError("rates must be non-negative")
    l2sq = float(np.sum(r_hat * r_hat))
    if l2sq == 0.0:
        raise ValueError("omega is undefined for an all-zero rate vector")
    return float(np.sum(r_hat)) / l2sq


def floor_rates(r_hat, t: int) -> np.ndarray:
    """Rates of an ideal cumulate-and-round neuron after ``t`` steps."""
    return np.floor(np.asarray(r_hat, dtype=np.float64) * t) / t


def bound_margin(r_hat, t: int) -> float:
    """``2 * omega / t - K(r_hat, floor(r_hat * t) / t)``; always positive."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    r_hat = np.asarray(r_hat, dtype=np.float64)
    if r_hat.size and (r_hat.min() < 0 or r_hat.max() > 1):
        raise ValueError("rates must lie in [0, 1]")
    return 2.0 * omega(r_hat) / t - k_value(r_hat, floor_rates(r_hat, t))


@dataclass
class KCurve:
    layer: int
    t: np.ndarray
    K: np.ndarray
    label: str = "batch-mean"

    def settle_time(self, threshold: float = 0.1) -> int | None:
        """First step after which K stays below ``threshold`` through T."""
        above = np.nonzero(~(self.K < threshold))[0]
        if above.size == 0:
            return int(self.t[0])
        last = above[-1]
        if last + 1 >= len(self.t):
            return None
        return int(self.t[last + 1])

    def first_below(self, threshold: float = 0.1) -> int | None:
        idx = np.nonzero(self.K < threshold)[0]
        return int(self.t[idx[0]]) if idx.size else None


def _k_from_errors(layer: int, sq_err: np.ndarray, norms: np.ndarray, mode: str) -> np.ndarray:
    if mode == "pooled":
        if norms.sum() == 0:
            raise ValueError(f"layer {layer}: reference rates are all zero")
        return sq_err.sum(axis=1) / norms.sum()
    keep = norms > 0
    if not keep.any():
        raise ValueError(f"layer {layer}: reference rates are all zero for every sample")
    return (sq_err[:, keep] / norms[keep]).mean(axis=1)


def k_curves_from_trace(
    ann_rates: Sequence[np.ndarray] | None, trace: SimulationTrace, mode: str = "mean"
) -> list[KCurve]:
    """K(t) for each spiking layer of ``trace``.

    ``ann_rates[l]`` holds the reference rates of layer ``l`` for the same
    inputs, shape ``(batch, *neurons)``. With ``mode="mean"`` K is computed
    per sample and averaged over samples whose reference is not all zero;
    with ``mode="pooled"`` all samples form one population. Passing
    ``ann_rates=None`` uses the errors accumulated during the run against
    its ``k_reference``.
    """
    if mode not in ("mean", "pooled"):
        raise ValueError(f"mode must be 'mean' or 'pooled', got {mode!r}")
    ts = np.arange(1, trace.T + 1)
    if ann_rates is None:
        if trace.k_sq_err is None:
            raise ValueError("trace holds no accumulated K errors; pass reference rates")
        return [
            KCurve(layer, ts.copy(), _k_from_errors(layer, err, norms, mode), label=mode)
            for layer, (err, norms) in enumerate(zip(trace.k_sq_err, trace.k_ref_norms))
        ]
    if len(ann_rates) != trace.n_layers:
        raise ValueError(f"got reference rates for {len(ann_rates)} layers, trace has {trace.n_layers}")
    if trace.counts is None:
        raise ValueError("K curves need a trace recorded with record_counts=True")
    curves = []
    for layer, ref in enumerate(ann_rates):
        ref = np.asarray(ref, dtype=np.float64)
        if ref.shape != trace.counts[layer].shape[1:]:
            raise ValueError(f"layer {layer}: reference shape {ref.shape} != trace shape {trace.counts[layer].shape[1:]}")
        flat_ref = ref.reshape(ref.shape[0], -1)
        rates = trace.counts[layer].reshape(trace.T, ref.shape[0], -1) / ts[:, None, None]
        sq_err = np.sum((rates - flat_ref[None]) ** 2, axis=2)
        norms = np.sum(flat_ref * flat_ref, axis=1)
        curves.append(KCurve(layer, ts.copy(), _k_from_errors(layer, sq_err, norms, mode), label=mode))
    return curves


def layer_omegas(ann_rates: Sequence[np.ndarray]) -> list[float]:
    """Mean per-sample omega of each layer, skipping silent samples."""
    out = []
    for ref in ann_rates:
        flat = np.asarray(ref, dtype=np.float64).reshape(len(ref), -1)
        l2 = np.sum(flat * flat, axis=1)
        keep = l2 > 0
        out.append(float(np.mean(flat[keep].sum(axis=1) / l2[keep])) if keep.any() else float("nan"))
    return out


@dataclass
class EnergyReport:
    alpha: float
    power: np.ndarray
    energy: np.ndarray
    spikes: np.ndarray
    time_to_target: int | None = None
    energy_to_target: float | None = None
    target: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("power", "energy", "spikes"):
            d[k] = d[k].tolist()
        return d


def time_to_accuracy(accuracy: Sequence[float], target: float) -> int | None:
    """Smallest step ``t`` (1-based) with ``accuracy[t-1] >= target``."""
    acc = np.asarray(accuracy, dtype=np.float64)
    idx = np.nonzero(acc >= target)[0]
    return int(idx[0]) + 1 if idx.size else None


def power_series(
    trace: SimulationTrace,
    alpha: float = DEFAULT_ALPHA,
    accuracy: Sequence[float] | None = None,
    target: float | None = None,
) -> EnergyReport:
    """Power ``P(t) = spikes(t) / 1 ms * alpha`` and cumulative energy.

    When ``accuracy`` and ``target`` are given the report also holds the
    first step reaching the target and the energy spent up to it.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    spikes = trace.spikes_per_step()
    cumulative = np.cumsum(spikes, dtype=np.int64)
    report = EnergyReport(alpha, spikes / STEP_SECONDS * alpha, cumulative * alpha, spikes)
    if accuracy is not None and target is not None:
        report.target = target
        report.time_to_target = time_to_accuracy(accuracy, target)
        if report.time_to_target is not None:
            report.energy_to_target = float(cumulative[report.time_to_target - 1] * alpha)
    return report


def write_k_curves(curves: Sequence[KCurve], path: str | Path) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "layer", "K"])
        for c in curves:
            for t, k in zip(c.t, c.K):
                w.writerow([int(t), c.layer, repr(float(k))])


def write_energy(report: EnergyReport, accuracy: Sequence[float], path: str | Path) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "P", "E", "accuracy"])
        for i, (p, e, a) in enumerate(zip(report.power, report.energy, accuracy)):
            w.writerow([i + 1, repr(float(p)), repr(float(e)), repr(float(a))])


def write_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True))
