"""Adam and AdamW over named parameter groups."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .encoder import ParamGroup
from .errors import NumericError

BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass
class OptimizerState:
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)
    param_steps: dict[str, int] = field(default_factory=dict)
    group_lr: dict[str, float] = field(default_factory=dict)  # rates applied at the last step


def optimizer_step(kind: str, groups: Sequence[ParamGroup], lrs: Sequence[float], state: OptimizerState,
                   weight_decay: float = 0.0, betas: tuple[float, float] = BETAS, eps: float = EPS) -> None:
    """One in-place update of every parameter in ``groups`` from its ``.grad``.

    Bias correction uses a per-parameter step count, so a group that joins
    late (after unfreezing) starts with a full-size first update. Parameters
    without a gradient are skipped. AdamW applies ``θ -= lr·wd·θ`` before and
    independently of the moment update; plain Adam ignores ``weight_decay``.
    """
    if kind not in ("adam", "adamw"):
        raise ValueError(f"unknown optimizer {kind!r}")
    if len(groups) != len(lrs):
        raise ValueError("one learning rate per group required")
    for g in groups:
        for name, p in g.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                bad = int(np.size(p.grad) - np.count_nonzero(np.isfinite(p.grad)))
                raise NumericError(f"non-finite gradient in {name} ({bad} entries); step aborted")

    b1, b2 = betas
    state.step += 1
    for g, lr in zip(groups, lrs):
        state.group_lr[g.name] = lr
        for name, p in g.params.items():
            if p.grad is None:
                continue
            grad = p.grad.astype(p.data.dtype, copy=False)
            if name not in state.exp_avg:
                state.exp_avg[name] = np.zeros_like(p.data)
                state.exp_avg_sq[name] = np.zeros_like(p.data)
                state.param_steps[name] = 0
            t = state.param_steps[name] = state.param_steps[name] + 1
            m, v = state.exp_avg[name], state.exp_avg_sq[name]
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            if kind == "adamw" and weight_decay:
                p.data -= lr * weight_decay * p.data
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
