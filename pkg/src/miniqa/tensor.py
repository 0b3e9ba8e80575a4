"""Minimal dense tensor type with reverse-mode automatic differentiation.

Covers exactly the operations the quality-regression micro-network needs:
grouped 2-d convolution, batch normalization, a small activation family,
global average pooling, affine layers and a handful of elementwise helpers.
Values are 64-bit floats throughout; the graph is rebuilt dynamically on
every forward pass and freed after ``backward``.

Subgradient convention at the non-smooth points (ReLU at 0, the hard
activations at +-3, hinge/abs kinks in the losses built on top): the
derivative is taken as 0 for the clamp factor, i.e. strict inequalities in
the indicator masks. ``grad_check`` callers are expected to keep test points
away from these kinks.

Graphs are single-threaded; distinct graphs share no mutable state and may
be used concurrently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import StateError

_node_ids = itertools.count()

ACTIVATIONS = ("relu", "hard_swish", "hard_sigmoid", "sigmoid")


class Tensor:
    """A float64 ndarray plus graph linkage for reverse-mode differentiation.

    ``data`` is the value, ``grad`` accumulates d(root)/d(self) across
    ``backward`` calls (``None`` until the first one). Interior nodes carry
    ``_parents`` and a ``_vjp`` closure mapping the incoming gradient to
    per-parent gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _make_node(data: np.ndarray, parents: Iterable[Tensor], vjp) -> Tensor:
    """Wire up an op output. Gradient tracking is dropped when no parent needs it."""
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._vjp = vjp
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Parents-first topological order of the subgraph that requires grad."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every tracked tensor reachable from ``root``.

    ``root`` must be scalar. Each call computes one full reverse pass and
    adds it to the existing grads, so repeated calls without ``zero_grad``
    accumulate.
    """
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    local: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = local.get(id(node))
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = local.get(id(parent))
            local[id(parent)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make_node(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _make_node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make_node(a.data * c, (a,), lambda g: (g * c,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    return _make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sum_all(a: Tensor) -> Tensor:
    shp = a.data.shape
    return _make_node(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shp).copy(),)
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    shp = a.data.shape
    return _make_node(
        np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shp).copy(),)
    )


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(kind: str, x: Tensor) -> Tensor:
    """Elementwise activation. ``kind`` is one of ``ACTIVATIONS``."""
    xd = x.data
    if kind == "relu":
        y = np.maximum(xd, 0.0)
        mask = xd > 0

        def vjp(g):
            return (g * mask,)

    elif kind == "hard_sigmoid":
        y = np.clip(xd + 3.0, 0.0, 6.0) / 6.0
        mask = (xd > -3.0) & (xd < 3.0)

        def vjp(g):
            return (g * mask / 6.0,)

    elif kind == "hard_swish":
        hs = np.clip(xd + 3.0, 0.0, 6.0) / 6.0
        y = xd * hs
        deriv = hs + xd * ((xd > -3.0) & (xd < 3.0)) / 6.0

        def vjp(g):
            return (g * deriv,)

    elif kind == "sigmoid":
        y = _sigmoid(xd)
        deriv = y * (1.0 - y)

        def vjp(g):
            return (g * deriv,)

    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return _make_node(y, (x,), vjp)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-d convolution on NCHW input.

    weight is [Cout, Cin/groups, Kh, Kw]. Output spatial size is
    (H + 2p - Kh)//s + 1 (same for W). Implemented as one batched matmul
    over groups via an im2col buffer, which the backward pass reuses.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: input must be NCHW, got ndim {x.data.ndim}")
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d: weight must be 4-d, got ndim {weight.data.ndim}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError(f"conv2d: bad stride/padding/groups ({stride},{padding},{groups})")
    n, cin, h, w = x.data.shape
    cout, cpg, kh, kw = weight.data.shape
    if cin % groups != 0:
        raise ValueError(f"conv2d: Cin={cin} not divisible by groups={groups}")
    if cout % groups != 0:
        raise ValueError(f"conv2d: Cout={cout} not divisible by groups={groups}")
    if cpg != cin // groups:
        raise ValueError(
            f"conv2d: weight dim 1 is {cpg}, expected Cin/groups = {cin // groups}"
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ValueError(
            f"conv2d: padded spatial dims ({hp},{wp}) smaller than kernel ({kh},{kw})"
        )
    if bias is not None and bias.data.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.data.shape}, expected ({cout},)")

    opg = cout // groups
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, Cin, Ho, Wo, Kh, Kw]
    win = win.reshape(n, groups, cpg, ho, wo, kh, kw)
    # [G, N*Ho*Wo, cpg*Kh*Kw]; contiguous copy so matmul hits BLAS
    cols = np.ascontiguousarray(win.transpose(1, 0, 3, 4, 2, 5, 6)).reshape(
        groups, n * ho * wo, cpg * kh * kw
    )
    wmat = weight.data.reshape(groups, opg, cpg * kh * kw)
    out = np.matmul(cols, wmat.transpose(0, 2, 1))  # [G, N*Ho*Wo, opg]
    out = (
        out.reshape(groups, n, ho, wo, opg)
        .transpose(1, 0, 4, 2, 3)
        .reshape(n, cout, ho, wo)
    )
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g: np.ndarray):
        gmat = (
            g.reshape(n, groups, opg, ho, wo)
            .transpose(1, 0, 3, 4, 2)
            .reshape(groups, n * ho * wo, opg)
        )
        dw = np.matmul(gmat.transpose(0, 2, 1), cols).reshape(cout, cpg, kh, kw)
        dx = None
        if x.requires_grad:
            dcols = np.matmul(gmat, wmat)  # [G, N*Ho*Wo, cpg*Kh*Kw]
            dwin = dcols.reshape(groups, n, ho, wo, cpg, kh, kw).transpose(
                1, 0, 4, 2, 3, 5, 6
            ).reshape(n, cin, ho, wo, kh, kw)
            dxp = np.zeros((n, cin, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[
                        :, :, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride,
                    ] += dwin[:, :, :, :, i, j]
            dx = dxp[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return (dx, dw)
        return (dx, dw, g.sum(axis=(0, 2, 3)))

    return _make_node(out, parents, vjp)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class BatchNormStats:
    """Running mean/variance for one batch-norm layer.

    Starts uninitialized; the first train-mode batch initializes to (0, 1)
    and then applies the exponential update
    ``run <- (1 - momentum) * run + momentum * batch``. Variances are biased
    (population) moments throughout.
    """

    __slots__ = ("mean", "var")

    def __init__(self, channels: Optional[int] = None):
        if channels is None:
            self.mean: Optional[np.ndarray] = None
            self.var: Optional[np.ndarray] = None
        else:
            self.mean = np.zeros(channels)
            self.var = np.ones(channels)

    @property
    def initialized(self) -> bool:
        return self.mean is not None

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, momentum: float) -> None:
        if self.mean is None:
            self.mean = np.zeros_like(batch_mean)
            self.var = np.ones_like(batch_var)
        self.mean = (1.0 - momentum) * self.mean + momentum * batch_mean
        self.var = (1.0 - momentum) * self.var + momentum * batch_var

    def set(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.mean = np.array(mean, dtype=np.float64)
        self.var = np.array(var, dtype=np.float64)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    mode: str = "train",
    momentum: float = 0.1,
    epsilon: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Per-channel batch normalization of NCHW input.

    Train mode normalizes by the batch moments over (N, H, W) and, unless
    ``update_stats`` is off, folds them into ``stats``. Eval mode uses the
    running stats only and raises ``StateError`` if they were never set.
    """
    if x.data.ndim != 4:
        raise ValueError(f"batch_norm: input must be NCHW, got ndim {x.data.ndim}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(
            f"batch_norm: gamma/beta shapes {gamma.data.shape}/{beta.data.shape}, "
            f"expected ({c},)"
        )
    if epsilon <= 0:
        raise ValueError("batch_norm: epsilon must be > 0")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm: unknown mode {mode!r}")

    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_stats:
            stats.update(mu, var, momentum)
    else:
        if not stats.initialized:
            raise StateError("batch_norm: eval mode with uninitialized running stats")
        mu, var = stats.mean, stats.var

    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

    def vjp(g: np.ndarray):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if mode == "train":
            # batch moments depend on x
            mean_dxhat = dxhat.sum(axis=(0, 2, 3)) / m
            mean_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3)) / m
            dx = inv_std[None, :, None, None] * (
                dxhat
                - mean_dxhat[None, :, None, None]
                - xhat * mean_dxhat_xhat[None, :, None, None]
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return (dx, dgamma, dbeta)

    return _make_node(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# pooling, affine, channel gating
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over each HxW plane: NCHW -> NC11."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avg_pool: input must be NCHW, got ndim {x.data.ndim}")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def vjp(g: np.ndarray):
        return (np.broadcast_to(g / (h * w), (n, c, h, w)).copy(),)

    return _make_node(out, (x,), vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map [N, Fin] x [Fout, Fin] + [Fout] -> [N, Fout]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ValueError(
            f"linear: expected 2-d input/weight, got {x.data.ndim}-d/{weight.data.ndim}-d"
        )
    if x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            f"linear: input features {x.data.shape[1]} != weight features "
            f"{weight.data.shape[1]}"
        )
    if bias.data.shape != (weight.data.shape[0],):
        raise ValueError(
            f"linear: bias shape {bias.data.shape}, expected ({weight.data.shape[0]},)"
        )
    out = x.data @ weight.data.T + bias.data

    def vjp(g: np.ndarray):
        return (g @ weight.data, g.T @ x.data, g.sum(axis=0))

    return _make_node(out, (x, weight, bias), vjp)


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Per-channel gating: NCHW input scaled by an NC11 gate."""
    n, c = x.data.shape[:2]
    if gate.data.shape != (n, c, 1, 1):
        raise ValueError(
            f"scale_channels: gate shape {gate.data.shape}, expected ({n},{c},1,1)"
        )
    out = x.data * gate.data

    def vjp(g: np.ndarray):
        return (g * gate.data, (g * x.data).sum(axis=(2, 3), keepdims=True))

    return _make_node(out, (x, gate), vjp)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradReport:
    """Result of one analytic-vs-central-difference comparison."""

    op_name: str
    max_rel_error: float
    element_errors: np.ndarray = field(repr=False)
    tol: float = 1e-4

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    builder: Callable[[Tensor], Tensor],
    point: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
    name: str = "op",
) -> GradReport:
    """Compare the analytic gradient of ``builder`` at ``point`` against
    central differences (f(x+h) - f(x-h)) / 2h.

    Relative error per element uses denominator max(|analytic|, |numeric|,
    1e-8). ``builder`` must map a tensor of ``point``'s shape to a scalar and
    be re-invocable with perturbed copies.
    """
    if h <= 0:
        raise ValueError("grad_check: h must be > 0")
    base = np.array(point.data, dtype=np.float64, copy=True)
    tracked = Tensor(base.copy(), requires_grad=True)
    root = builder(tracked)
    if root.data.size != 1:
        raise ValueError("grad_check: builder must produce a scalar")
    backward(root)
    analytic = tracked.grad.reshape(-1).copy()

    numeric = np.empty_like(analytic)
    work = base.copy()
    flat = work.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = builder(Tensor(work.copy())).item()
        flat[i] = orig - h
        fm = builder(Tensor(work.copy())).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    return GradReport(
        op_name=name,
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        element_errors=rel.reshape(base.shape),
        tol=tol,
    )
