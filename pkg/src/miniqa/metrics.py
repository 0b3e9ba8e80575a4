"""Rank and linear correlation metrics plus the combined final score.

SRCC is the Pearson correlation of fractional ranks. When both rank vectors
are tie-free this is mathematically identical to the classic closed form
1 - 6*sum(d^2)/(n(n^2-1)), and the implementation dispatches to the closed
form in that case so the identity holds bit-for-bit; with ties it falls back
to Pearson-of-ranks, which is the variant that stays valid. Constant inputs
raise instead of returning NaN: a silent zero would corrupt result tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConstantInputError


@dataclass(frozen=True)
class EvalReport:
    srcc: float
    plcc: float
    final_score: float
    n: int

    def to_dict(self) -> dict:
        return {
            "srcc": self.srcc,
            "plcc": self.plcc,
            "final_score": self.final_score,
            "n": self.n,
        }


def ranks(values: Sequence[float]) -> np.ndarray:
    """Ascending fractional ranks starting at 1; ties get the mean of the
    positions they occupy."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"ranks: expected non-empty 1-d input, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("ranks: input contains NaN or infinity")
    order = np.argsort(v, kind="stable")
    out = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        # positions i+1 .. j+1 share the value; assign their mean rank
        out[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return out


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise ConstantInputError("correlation undefined for constant input")
    return float((xc @ yc) / math.sqrt(sx * sy))


def _validate_pair(x, y, name: str) -> tuple[np.ndarray, np.ndarray]:
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.ndim != 1 or yv.ndim != 1:
        raise ValueError(f"{name}: expected 1-d inputs")
    if xv.size != yv.size:
        raise ValueError(f"{name}: length mismatch {xv.size} vs {yv.size}")
    if xv.size < 2:
        raise ValueError(f"{name}: need at least 2 samples, got {xv.size}")
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv))):
        raise ValueError(f"{name}: input contains NaN or infinity")
    return xv, yv


def srcc_closed_form(rank_diff_sq_sum: float, n: int) -> float:
    """1 - 6*sum(d^2) / (n(n^2-1)); valid only for tie-free ranks."""
    return 1.0 - 6.0 * rank_diff_sq_sum / (n * (n * n - 1))


def srcc(x: Sequence[float], y: Sequence[float]) -> float:
    xv, yv = _validate_pair(x, y, "srcc")
    rx, ry = ranks(xv), ranks(yv)
    if np.ptp(rx) == 0.0 or np.ptp(ry) == 0.0:
        raise ConstantInputError("srcc undefined for constant input")
    tie_free = np.unique(rx).size == rx.size and np.unique(ry).size == ry.size
    if tie_free:
        d = rx - ry
        return srcc_closed_form(float(d @ d), rx.size)
    return _pearson(rx, ry)


def plcc(x: Sequence[float], y: Sequence[float]) -> float:
    xv, yv = _validate_pair(x, y, "plcc")
    return _pearson(xv, yv)


def final_score(x: Sequence[float], y: Sequence[float]) -> EvalReport:
    """Evaluate predictions x against ground truth y; score is the mean of
    SRCC and PLCC."""
    s = srcc(x, y)
    p = plcc(x, y)
    return EvalReport(srcc=s, plcc=p, final_score=0.5 * s + 0.5 * p, n=len(np.asarray(x)))
