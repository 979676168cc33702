"""Dense layer primitives with hand-derived backward rules, Adam, and a
finite-difference gradient checker.

Matrices are plain float64 ``np.ndarray`` objects with one sample per row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateBatchError, DimensionError, PoisonedGradientError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class LayerParams:
    """One dense layer, optionally followed by batch norm.

    Layers without batch norm (latent and output heads) carry ``bn_gamma is None``.
    """

    weight: np.ndarray
    bias: np.ndarray
    bn_gamma: np.ndarray | None = None
    bn_beta: np.ndarray | None = None
    bn_running_mean: np.ndarray | None = None
    bn_running_var: np.ndarray | None = None

    @property
    def has_bn(self) -> bool:
        return self.bn_gamma is not None

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    @classmethod
    def create(cls, weight, bias=None, batchnorm=False) -> "LayerParams":
        weight = np.asarray(weight, dtype=np.float64)
        out = weight.shape[0]
        bias = np.zeros(out) if bias is None else np.asarray(bias, dtype=np.float64)
        if not batchnorm:
            return cls(weight, bias)
        return cls(weight, bias, np.ones(out), np.zeros(out), np.zeros(out), np.ones(out))

    def trainable(self) -> dict[str, np.ndarray]:
        blocks = {"weight": self.weight, "bias": self.bias}
        if self.has_bn:
            blocks["bn_gamma"] = self.bn_gamma
            blocks["bn_beta"] = self.bn_beta
        return blocks

    def buffers(self) -> dict[str, np.ndarray]:
        if not self.has_bn:
            return {}
        return {"bn_running_mean": self.bn_running_mean, "bn_running_var": self.bn_running_var}


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def linear_forward(x, p: LayerParams) -> np.ndarray:
    """y = x W^T + b."""
    x = _as_matrix(x)
    if x.shape[1] != p.weight.shape[1]:
        raise DimensionError(
            f"input has {x.shape[1]} columns, layer expects {p.weight.shape[1]}")
    return x @ p.weight.T + p.bias


def linear_backward(dy: np.ndarray, x: np.ndarray, p: LayerParams):
    """Returns (dx, dW, db)."""
    return dy @ p.weight, dy.T @ x, dy.sum(axis=0)


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    mode: str


def batchnorm_forward(x, p: LayerParams, mode: str = "train", track: bool = True,
                      return_cache: bool = False):
    """Per-feature batch normalization.

    In ``train`` mode the batch statistics are used and, if ``track`` is set,
    folded into the running estimates (``new = 0.9 old + 0.1 batch``; the
    running variance uses the unbiased batch estimate). ``eval`` mode uses the
    running estimates.
    """
    x = _as_matrix(x)
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise DegenerateBatchError("batch norm in train mode needs at least 2 rows")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if track:
            p.bn_running_mean *= BN_MOMENTUM
            p.bn_running_mean += (1.0 - BN_MOMENTUM) * mean
            p.bn_running_var *= BN_MOMENTUM
            p.bn_running_var += (1.0 - BN_MOMENTUM) * var * (n / (n - 1))
    elif mode == "eval":
        mean = p.bn_running_mean
        var = p.bn_running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    y = p.bn_gamma * xhat + p.bn_beta
    if return_cache:
        return y, BatchNormCache(xhat, inv_std, mode)
    return y


def batchnorm_backward(dy: np.ndarray, cache: BatchNormCache, p: LayerParams):
    """Returns (dx, dgamma, dbeta)."""
    dgamma = (dy * cache.xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * p.bn_gamma
    if cache.mode == "eval":
        return dxhat * cache.inv_std, dgamma, dbeta
    n = dy.shape[0]
    dx = (cache.inv_std / n) * (
        n * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# relu
# ---------------------------------------------------------------------------

def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


# ---------------------------------------------------------------------------
# layer stacks
# ---------------------------------------------------------------------------

def stack_forward(layers: list[LayerParams], x, mode: str = "eval", track: bool = True):
    """Run linear -> [BN -> ReLU] for every layer. Returns (output, cache).

    Layers without batch norm are purely affine.
    """
    h = _as_matrix(x)
    cache = []
    for p in layers:
        a = linear_forward(h, p)
        entry = {"x": h}
        if p.has_bn:
            b, bn_cache = batchnorm_forward(a, p, mode, track=track, return_cache=True)
            entry["bn"] = bn_cache
            entry["pre_relu"] = b
            h = relu(b)
        else:
            h = a
        cache.append(entry)
    return h, cache


def stack_backward(layers: list[LayerParams], cache, dy: np.ndarray):
    """Backpropagate through a stack. Returns (dx, per-layer grad dicts)."""
    grads: list[dict[str, np.ndarray]] = [None] * len(layers)
    g = dy
    for i in range(len(layers) - 1, -1, -1):
        p, entry = layers[i], cache[i]
        layer_grads = {}
        if p.has_bn:
            g = relu_backward(g, entry["pre_relu"])
            g, layer_grads["bn_gamma"], layer_grads["bn_beta"] = batchnorm_backward(
                g, entry["bn"], p)
        g, layer_grads["weight"], layer_grads["bias"] = linear_backward(g, entry["x"], p)
        grads[i] = layer_grads
    return g, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def reset(self) -> None:
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``.

    Every gradient block is checked for finiteness before anything is touched,
    so a poisoned step leaves both params and state unchanged.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise PoisonedGradientError(name)

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], point,
               h: float = 1e-5) -> float:
    """Max relative error between ``fun``'s analytic gradient and central differences.

    ``fun(x)`` must return ``(value, gradient)``. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    x = np.array(point, dtype=np.float64).ravel()
    _, analytic = fun(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        numeric = (fun(xp)[0] - fun(xm)[0]) / (2.0 * h)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst
