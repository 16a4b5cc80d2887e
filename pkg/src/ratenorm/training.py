"""Two-stage training of Rate Norm networks.

Stage 1 fits weights and biases for accuracy with every ``p`` fixed at 1.
Stage 2 freezes the weights and the running maxima and trains one shared
``p`` against ``1 - cos(r_ref, r) + lam * mean_l omega_l``, where ``r_ref``
is the output of the same network with ``p = 1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ratenorm.core.layers import ACTIVATIONS, Network
from ratenorm.core.ops import cosine_similarity, cross_entropy_loss, omega, stack_mean
from ratenorm.core.optim import SGD
from ratenorm.core.tensor import Tensor
from ratenorm.errors import DegenerateThresholdError, StateError, TrainingError
from ratenorm.rnl import DEFAULT_P_RAW, tie_shared_p


@dataclass
class StageConfig:
    epochs: int = 10
    lr: float = 0.1
    lam: float = 0.5
    batch_size: int = 50
    seed: int = 0
    momentum: float = 0.9
    p_raw_init: float = DEFAULT_P_RAW

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainLog:
    stage: str
    rows: list[dict] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        n_theta = max((len(r["thetas"]) for r in self.rows), default=0)
        return ["epoch", "loss", "acc", "mean_omega", "p"] + [f"theta_{i + 1}" for i in range(n_theta)]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[k])) for k in ("loss", "acc", "mean_omega", "p")]
                           + [repr(float(t)) for t in r["thetas"]])


def fast_loss(r_star, r_prime, omegas: Sequence[Tensor], lam: float) -> Tensor:
    """``1 - cos(r_star, r_prime) + lam * mean(omegas)``."""
    return 1.0 - cosine_similarity(r_star, r_prime) + lam * stack_mean(list(omegas))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _scores(net: Network, out: Tensor) -> np.ndarray:
    if net.specs[-1].kind in ACTIVATIONS:
        return net.preacts[-1].data
    return out.data


def _batch_omega(activations: Sequence[Tensor]) -> float:
    values = [omega(a).item() for a in activations if np.any(a.data)]
    return float(np.mean(values)) if values else float("nan")


def mean_omega(net: Network, x: np.ndarray, p_override: float | None = None) -> float:
    """Mean over activation layers of omega of the layer's rates on ``x``."""
    rates = net.rates(x, p_override=p_override)
    return float(np.mean([omega(Tensor(r)).item() for r in rates]))


def _shared_p(net: Network) -> float:
    states = net.rate_norm_states()
    return states[0].p if states else 1.0


def stage1_train(net: Network, dataset, cfg: StageConfig) -> TrainLog:
    """Minimize cross-entropy over weights and biases with ``p`` locked at 1."""
    for s in net.rate_norm_states():
        if s.p_trained:
            raise StateError("stage 1 after threshold training would change the trained thresholds")
        s.locked = True
    net.train()
    x = np.asarray(dataset.inputs, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.int64)
    opt = SGD(net.params(), cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog("stage1")
    for epoch in range(1, cfg.epochs + 1):
        total_loss = correct = seen = 0
        omegas = []
        for idx in _batches(len(x), cfg.batch_size, rng):
            opt.zero_grad()
            try:
                out = net(x[idx])
            except DegenerateThresholdError as e:
                raise TrainingError(f"epoch {epoch}: {e}") from e
            loss = cross_entropy_loss(out, y[idx])
            if not np.isfinite(loss.item()):
                raise TrainingError(f"stage 1 loss is not finite at epoch {epoch}")
            loss.backward()
            try:
                opt.step()
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}: {e}") from e
            total_loss += loss.item() * len(idx)
            correct += int(np.sum(_scores(net, out).argmax(axis=1) == y[idx]))
            seen += len(idx)
            omegas.append(_batch_omega(net.activations))
        log.rows.append(
            {
                "epoch": epoch,
                "loss": total_loss / seen,
                "acc": correct / seen,
                "mean_omega": float(np.nanmean(omegas)) if omegas else float("nan"),
                "p": 1.0,
                "thetas": net.thresholds(),
            }
        )
    net.eval()
    return log


def stage2_train(net: Network, dataset, cfg: StageConfig) -> TrainLog:
    """Train one shared ``p`` for fast inference; weights stay untouched."""
    states = net.rate_norm_states()
    if not states:
        raise StateError("stage 2 needs a network with Rate Norm layers")
    net.eval()
    if states[0].shared_group is None or any(s.p_raw is not states[0].p_raw for s in states):
        shared = tie_shared_p(states, p_raw=cfg.p_raw_init)
    else:
        shared = states[0].p_raw
    for s in states:
        s.locked = False

    weights = net.params()
    for w in weights:
        w.requires_grad = False
    x = np.asarray(dataset.inputs, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog("stage2")
    try:
        for epoch in range(1, cfg.epochs + 1):
            total = cos_sum = om_sum = correct = seen = 0.0
            for idx in _batches(len(x), cfg.batch_size, rng):
                r_star = net.forward(x[idx], p_override=1.0).data
                r_prime = net.forward(x[idx])
                omegas = [omega(a) for a in net.activations]
                cos = cosine_similarity(Tensor(r_star), r_prime)
                om = stack_mean(omegas)
                loss = 1.0 - cos + cfg.lam * om
                if not np.isfinite(loss.item()):
                    raise TrainingError(f"stage 2 loss is not finite at epoch {epoch}")
                shared.zero_grad()
                loss.backward()
                if not np.isfinite(shared.grad).all():
                    raise TrainingError(f"non-finite gradient for {shared.name} at epoch {epoch}")
                shared.data = np.asarray(shared.data - cfg.lr * shared.grad, dtype=np.float64)
                for s in states:
                    s.p_trained = True
                n = len(idx)
                total += loss.item() * n
                cos_sum += cos.item() * n
                om_sum += om.item() * n
                correct += int(np.sum(_scores(net, r_prime).argmax(axis=1) == y[idx]))
                seen += n
            log.rows.append(
                {
                    "epoch": epoch,
                    "loss": total / seen,
                    "cos": cos_sum / seen,
                    "acc": correct / seen,
                    "mean_omega": om_sum / seen,
                    "p": _shared_p(net),
                    "thetas": net.thresholds(),
                }
            )
    finally:
        for w in weights:
            w.requires_grad = True
    return log
