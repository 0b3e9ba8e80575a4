"""Training objective: mean absolute error plus a pairwise ranking hinge.

The ranking term runs over all ordered pairs (i, j) inside a mini-batch,
including the zero-contribution diagonal, and is normalized by n^2. The
pairwise sign is +1 when target_i >= target_j (ties take +1), -1 otherwise.
Subgradients at the hinge and absolute-value kinks are 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _make_node, add, scale


@dataclass(frozen=True)
class LossConfig:
    """Weight balancing the two terms: total = mae + rank_weight * rank."""

    rank_weight: float = 1.0

    def __post_init__(self):
        if self.rank_weight < 0:
            raise ValueError(f"rank_weight must be >= 0, got {self.rank_weight}")


def _as_column(t: Tensor, name: str) -> np.ndarray:
    d = t.data
    if d.ndim == 2 and d.shape[1] == 1:
        return d[:, 0]
    if d.ndim == 1:
        return d
    raise ValueError(f"{name}: expected [N, 1] or [N], got shape {d.shape}")


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """(1/N) sum |pred_i - target_i| as a scalar graph node."""
    p = _as_column(pred, "mae_loss pred")
    y = _as_column(target, "mae_loss target")
    if p.shape != y.shape:
        raise ValueError(f"mae_loss: shape mismatch {pred.data.shape} vs {target.data.shape}")
    n = p.shape[0]
    if n < 1:
        raise ValueError("mae_loss: empty batch")
    diff = p - y
    value = np.asarray(np.abs(diff).mean())
    sgn = np.sign(diff) / n  # sign(0) = 0 at ties

    def vjp(g: np.ndarray):
        gp = (g.reshape(()) * sgn).reshape(pred.data.shape)
        gy = (-g.reshape(()) * sgn).reshape(target.data.shape)
        return (gp, gy)

    return _make_node(value, (pred, target), vjp)


def rank_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Pairwise ranking hinge over all ordered pairs in the batch.

    (1/n^2) sum_ij max(0, |y_i - y_j| - e_ij * (p_i - p_j)) with
    e_ij = +1 if y_i >= y_j else -1.
    """
    p = _as_column(pred, "rank_loss pred")
    y = _as_column(target, "rank_loss target")
    if p.shape != y.shape:
        raise ValueError(f"rank_loss: shape mismatch {pred.data.shape} vs {target.data.shape}")
    n = p.shape[0]
    if n < 1:
        raise ValueError("rank_loss: empty batch")
    dy = y[:, None] - y[None, :]
    e = np.where(dy >= 0, 1.0, -1.0)
    arg = np.abs(dy) - e * (p[:, None] - p[None, :])
    value = np.asarray(np.maximum(arg, 0.0).sum() / (n * n))

    active_e = np.where(arg > 0, e, 0.0)  # hinge subgradient 0 at the kink

    def vjp(g: np.ndarray):
        gs = g.reshape(()) / (n * n)
        gp = gs * (active_e.sum(axis=0) - active_e.sum(axis=1))
        # d/dy: d|dy|/dy_k with sign(dy), treating e as the constant sign choice
        active_sgn = np.where(arg > 0, np.sign(dy), 0.0)
        gy = gs * (active_sgn.sum(axis=1) - active_sgn.sum(axis=0))
        return (gp.reshape(pred.data.shape), gy.reshape(target.data.shape))

    return _make_node(value, (pred, target), vjp)


def l1_rank_loss(pred: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """mae_loss + rank_weight * rank_loss, differentiable through both terms."""
    cfg = cfg or LossConfig()
    total = mae_loss(pred, target)
    if cfg.rank_weight != 0.0:
        total = add(total, scale(rank_loss(pred, target), cfg.rank_weight))
    return total
