"""SGD with momentum and a central-difference gradient checker."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ratenorm.core.ops import cross_entropy_loss
from ratenorm.core.tensor import Param, Tensor
from ratenorm.errors import TrainingError


class SGD:
    """``v <- momentum * v + grad``; ``value <- value - lr * v``.

    Parameters are updated in the order given, so runs are reproducible.
    """

    def __init__(self, params: Sequence[Param], lr: float, momentum: float = 0.0):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in {p.name or 'unnamed parameter'}")
        for p in self.params:
            if p.velocity is None or self.momentum == 0.0:
                p.velocity = p.grad.copy()
            else:
                p.velocity = self.momentum * p.velocity + p.grad
            p.data = np.asarray(p.data - self.lr * p.velocity, dtype=np.float64)


def sgd_step(params: Sequence[Param], lr: float, momentum: float = 0.0) -> None:
    """One in-place SGD update using the velocity stored on each parameter."""
    SGD(params, lr, momentum).step()


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Param],
    eps: float = 1e-4,
    max_entries: int = 20,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    At most ``max_entries`` entries per parameter are sampled. The relative
    error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_entries else rng.choice(n, size=max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn().item()
            flat[i] = old - eps
            down = loss_fn().item()
            flat[i] = old
            num = (up - down) / (2 * eps)
            a = g.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst


def grad_check(network, x, labels, eps: float = 1e-4, max_entries: int = 20, seed: int = 0) -> float:
    """Gradient check of the cross-entropy loss of ``network`` on one batch.

    Rate Norm statistics are frozen for the duration of the check.
    """
    params = list(network.params()) + [s.p_raw for s in network.rate_norm_states() if not s.locked]
    unique = list({id(p): p for p in params}.values())
    with network.evaluating():
        return check_gradients(lambda: cross_entropy_loss(network(x), labels), unique, eps, max_entries, seed)
