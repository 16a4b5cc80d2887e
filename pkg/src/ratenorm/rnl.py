"""Rate Norm Layer: a clip with a trainable threshold that outputs a rate in [0, 1].

The threshold is ``theta = p * running_max`` where ``running_max`` tracks the
maximum pre-activation with momentum and ``p = sigmoid(p_raw)``. The layer
outputs ``clip(pre, 0, theta) / theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ratenorm.core.ops import sigmoid
from ratenorm.core.tensor import Param, Tensor, as_tensor, make_node
from ratenorm.errors import DegenerateThresholdError, StateError

MIN_THRESHOLD = 1e-12
DEFAULT_P_RAW = 6.0


@dataclass(eq=False)
class RateNormState:
    p_raw: Param = field(default_factory=lambda: Param(np.float64(DEFAULT_P_RAW), name="p_raw"))
    running_max: float = 1.0
    momentum: float = 0.1
    mode: str = "train"
    shared_group: str | None = None
    # Stage 1 runs with p fixed at exactly 1.
    locked: bool = True
    p_trained: bool = False
    _cache: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if self.running_max < 0:
            raise ValueError(f"running_max must be >= 0, got {self.running_max}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")

    @property
    def p(self) -> float:
        if self.locked:
            return 1.0
        return float(sigmoid(self.p_raw.detach()).data)

    def set_p(self, p: float) -> None:
        """Unlock and set ``p`` through its pre-sigmoid parameter."""
        if not 0.0 < p < 1.0:
            raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
        self.p_raw.data = np.asarray(math.log(p / (1.0 - p)), dtype=np.float64)
        self.locked = False


def rnl_threshold(state: RateNormState) -> float:
    """Current threshold ``p * running_max``."""
    return state.p * state.running_max


def update_running_max(state: RateNormState, batch_max: float) -> float:
    m = state.momentum
    state.running_max = (1.0 - m) * state.running_max + m * max(float(batch_max), 0.0)
    return state.running_max


def rnl_forward(state: RateNormState, pre, p_override: float | None = None) -> Tensor:
    """Normalized firing rate of one layer.

    In train mode the running max is first updated from this batch. With
    ``p_override`` the layer uses that constant ``p`` and records no
    gradient for ``p_raw``.
    """
    pre = as_tensor(pre)
    if state.mode == "train":
        update_running_max(state, float(pre.data.max()) if pre.data.size else 0.0)
    rmax = state.running_max

    if p_override is not None:
        p_t = Tensor(np.float64(p_override))
    elif state.locked:
        p_t = Tensor(np.float64(1.0))
    else:
        p_t = sigmoid(state.p_raw)
    p = float(p_t.data)
    theta = p * rmax
    if not theta > MIN_THRESHOLD:
        raise DegenerateThresholdError(f"threshold {theta!r} <= {MIN_THRESHOLD} (p={p}, running_max={rmax})")

    x = pre.data
    mask = (x >= 0.0) & (x <= theta)
    r = np.clip(x, 0.0, theta) / theta
    state._cache = {"mask": mask, "r": r, "theta": theta, "p": p, "trainable_p": p_t.requires_grad}

    def backward(g):
        d_pre = g * mask / theta
        d_p = np.float64(-np.sum(g * mask * r) / p)
        return d_pre, d_p

    return make_node(r, (pre, p_t), backward)


def rnl_backward(state: RateNormState, upstream: np.ndarray) -> tuple[np.ndarray, float]:
    """Gradients w.r.t. the pre-activation and ``p_raw`` from the last forward.

    Saturated and negative components carry no gradient for either input;
    the running-max path carries none at all.
    """
    if state._cache is None:
        raise StateError("rnl_backward called before rnl_forward")
    c = state._cache
    g = np.asarray(upstream, dtype=np.float64)
    d_pre = g * c["mask"] / c["theta"]
    if not c["trainable_p"]:
        return d_pre, 0.0
    p = c["p"]
    d_p = -float(np.sum(g * c["mask"] * c["r"])) / p
    return d_pre, d_p * p * (1.0 - p)


def tie_shared_p(states: Sequence[RateNormState], group: str = "shared", p_raw: float | None = None) -> Param:
    """Make all ``states`` read one ``p_raw`` parameter.

    Gradients from every layer accumulate into that single parameter.
    """
    if not states:
        raise ValueError("no states to tie")
    if any(s.p_trained for s in states):
        raise StateError("cannot tie p after threshold training has started")
    init = float(states[0].p_raw.data) if p_raw is None else float(p_raw)
    shared = Param(np.float64(init), name=f"p_raw[{group}]")
    for s in states:
        s.p_raw = shared
        s.shared_group = group
    return shared
