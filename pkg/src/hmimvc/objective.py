"""Contrastive, dual-prediction and reconstruction losses with their gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PairBatch
from .errors import DegenerateTemperatureError
from .model import ModelParams
from .numerics import stack_backward, stack_forward

ALL_LOSSES = frozenset({"rec", "cl", "pre"})
DEFAULT_EXPONENTS = (0.5, 1.5)


@dataclass(frozen=True)
class Temperature:
    tau: float
    n_p: int
    n_n: int


@dataclass(frozen=True)
class LossBreakdown:
    l_cl: float
    l_pre: float
    l_rec: float
    total: float
    active: frozenset = ALL_LOSSES

    def as_dict(self) -> dict:
        return {"l_cl": self.l_cl, "l_pre": self.l_pre, "l_rec": self.l_rec, "total": self.total,
                "active": sorted(self.active)}


def _row_dist(z1, z2):
    return np.sqrt(((np.asarray(z1, dtype=np.float64) - np.asarray(z2, dtype=np.float64)) ** 2).sum(axis=-1))


def compute_tau(z1, z2, pairs: PairBatch) -> Temperature:
    """Mean positive plus mean negative Euclidean distance between paired latents.

    ``pairs`` indexes rows of ``z1`` (anchors) and ``z2`` (partners).
    """
    y = pairs.y.astype(bool)
    if y.sum() == 0 or (~y).sum() == 0:
        raise ValueError("temperature needs at least one positive and one negative pair")
    d = _row_dist(z1[pairs.anchor_idx], z2[pairs.partner_idx])
    tau = float(d[y].mean() + d[~y].mean())
    if not np.isfinite(tau) or tau <= 1e-12:
        raise DegenerateTemperatureError(f"temperature {tau!r} is degenerate (collapsed latents)")
    return Temperature(tau, int(y.sum()), int((~y).sum()))


def loss_positive(z1, z2):
    """Squared Euclidean distance, row-wise."""
    diff = np.asarray(z1, dtype=np.float64) - np.asarray(z2, dtype=np.float64)
    return (diff * diff).sum(axis=-1)


def negative_from_distance(r, tau: float, exponents=DEFAULT_EXPONENTS):
    """(1/tau) * max(tau * r**a - r**b, 0)**2 evaluated literally."""
    a, b = exponents
    r = np.asarray(r, dtype=np.float64)
    return np.maximum(tau * r ** a - r ** b, 0.0) ** 2 / tau


def negative_slope(r, tau: float, exponents=DEFAULT_EXPONENTS):
    """d/dr of :func:`negative_from_distance`, finite at r = 0 for the default exponents."""
    a, b = exponents
    r = np.asarray(r, dtype=np.float64)
    active = tau * r ** a - r ** b > 0
    rs = np.where(r > 0, r, 1.0)
    slope = (2.0 / tau) * (tau * a * (tau * rs ** (2 * a - 1) - rs ** (a + b - 1))
                           - b * (tau * rs ** (a + b - 1) - rs ** (2 * b - 1)))
    if 2 * a - 1 == 0:
        slope = np.where(r > 0, slope, tau)
    else:
        slope = np.where(r > 0, slope, 0.0)
    return np.where(active, slope, 0.0)


def loss_negative(z1, z2, tau: float, exponents=DEFAULT_EXPONENTS):
    return negative_from_distance(_row_dist(z1, z2), tau, exponents)


def contrastive_grad(z1, z2, pairs: PairBatch, tau: float, exponents=DEFAULT_EXPONENTS):
    """Pair-averaged contrastive loss and its gradients w.r.t. ``z1`` and ``z2``."""
    m = len(pairs)
    if m == 0:
        raise ValueError("contrastive loss over an empty pair batch")
    a, p = pairs.anchor_idx, pairs.partner_idx
    y = pairs.y.astype(bool)
    diff = z1[a] - z2[p]
    sq = (diff * diff).sum(axis=1)
    r = np.sqrt(sq)
    per_pair = np.where(y, sq, negative_from_distance(r, tau, exponents))
    value = per_pair.sum() / (2.0 * m)

    # d per_pair / d diff
    coef = np.where(y, 2.0, negative_slope(r, tau, exponents) / np.where(r > 0, r, 1.0))
    coef = np.where(~y & (r == 0), 0.0, coef)
    g = diff * (coef / (2.0 * m))[:, None]
    dz1 = np.zeros_like(z1)
    dz2 = np.zeros_like(z2)
    np.add.at(dz1, a, g)
    np.add.at(dz2, p, -g)
    return float(value), dz1, dz2


def contrastive_loss(z1, z2, pairs: PairBatch, tau: float, exponents=DEFAULT_EXPONENTS) -> float:
    return contrastive_grad(np.asarray(z1, dtype=np.float64), np.asarray(z2, dtype=np.float64),
                            pairs, tau, exponents)[0]


def prediction_loss(z1, z2, params: ModelParams, mode: str = "eval") -> float:
    """Row mean of ||d1(z1) - z2||^2 + ||d2(z2) - z1||^2."""
    p1 = stack_forward(params.layers("pred", 1), z1, mode, track=False)[0]
    p2 = stack_forward(params.layers("pred", 2), z2, mode, track=False)[0]
    return float((loss_positive(p1, z2) + loss_positive(p2, z1)).mean())


def reconstruction_loss(x1, x2, z1, z2, params: ModelParams, mode: str = "eval") -> float:
    """Sum over views of squared reconstruction error, divided by 2 * rows."""
    zc = np.hstack([z1, z2])
    err = 0.0
    for v, x in ((1, x1), (2, x2)):
        xh = stack_forward(params.layers("dec", v), zc, mode, track=False)[0]
        err += loss_positive(x, xh).sum()
    return float(err / (2.0 * zc.shape[0]))


def total_loss(l_cl: float, l_pre: float, l_rec: float, active=ALL_LOSSES) -> LossBreakdown:
    """Combine components; only ``active`` ones enter the total."""
    active = frozenset(active)
    parts = {"cl": l_cl, "pre": l_pre, "rec": l_rec}
    total = float(sum(v for k, v in parts.items() if k in active))
    return LossBreakdown(float(l_cl), float(l_pre), float(l_rec), total, active)


def _collect(grads, name, layer_grads):
    for i, lg in enumerate(layer_grads):
        for key, g in lg.items():
            full = f"{name}.{i}.{key}"
            grads[full] = grads[full] + g if full in grads else g


def objective(params: ModelParams, x1, x2, pairs: PairBatch | None, tau: float | None,
              active=ALL_LOSSES, mode: str = "train", exponents=DEFAULT_EXPONENTS,
              need_grads: bool = True):
    """Forward (and backward) pass of the full objective on one aligned batch.

    Rows of ``x1`` and ``x2`` correspond; ``pairs`` holds row positions. Every
    component is evaluated for reporting, but only ``active`` ones contribute
    gradients, and batch-norm running statistics are only updated by stacks
    that are being trained. With ``tau is None`` the contrastive term is
    reported as 0 and must not be active.

    Returns ``(LossBreakdown, grads)`` where ``grads`` maps trainable block
    names to arrays (``None`` if ``need_grads`` is false).
    """
    active = frozenset(active)
    if "cl" in active and tau is None:
        raise ValueError("contrastive loss is active but the temperature has not been computed")
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    train = mode == "train"
    n = x1.shape[0]

    z1, enc1_cache = stack_forward(params.layers("enc", 1), x1, mode, track=train)
    z2, enc2_cache = stack_forward(params.layers("enc", 2), x2, mode, track=train)
    dz1 = np.zeros_like(z1)
    dz2 = np.zeros_like(z2)
    grads: dict[str, np.ndarray] = {}

    # reconstruction
    zc = np.hstack([z1, z2])
    rec_on = "rec" in active
    l_rec = 0.0
    dzc = np.zeros_like(zc)
    for v, x in ((1, x1), (2, x2)):
        xh, cache = stack_forward(params.layers("dec", v), zc, mode, track=train and rec_on)
        diff = xh - x
        l_rec += (diff * diff).sum()
        if rec_on and need_grads:
            dzc_v, lg = stack_backward(params.layers("dec", v), cache, diff / n)
            dzc += dzc_v
            _collect(grads, f"dec{v}", lg)
    l_rec /= 2.0 * n
    dz1 += dzc[:, :params.latent_dim]
    dz2 += dzc[:, params.latent_dim:]

    # dual prediction
    pre_on = "pre" in active
    p1, c1 = stack_forward(params.layers("pred", 1), z1, mode, track=train and pre_on)
    p2, c2 = stack_forward(params.layers("pred", 2), z2, mode, track=train and pre_on)
    e1 = p1 - z2
    e2 = p2 - z1
    l_pre = float(((e1 * e1).sum() + (e2 * e2).sum()) / n)
    if pre_on and need_grads:
        dp1 = 2.0 * e1 / n
        dp2 = 2.0 * e2 / n
        g1, lg1 = stack_backward(params.layers("pred", 1), c1, dp1)
        g2, lg2 = stack_backward(params.layers("pred", 2), c2, dp2)
        _collect(grads, "pred1", lg1)
        _collect(grads, "pred2", lg2)
        dz1 += g1 - dp2
        dz2 += g2 - dp1

    # contrastive
    l_cl = 0.0
    if tau is not None and pairs is not None:
        l_cl, gz1, gz2 = contrastive_grad(z1, z2, pairs, tau, exponents)
        if "cl" in active:
            dz1 += gz1
            dz2 += gz2

    breakdown = total_loss(l_cl, l_pre, l_rec, active)
    if not need_grads:
        return breakdown, None

    _, lg = stack_backward(params.layers("enc", 1), enc1_cache, dz1)
    _collect(grads, "enc1", lg)
    _, lg = stack_backward(params.layers("enc", 2), enc2_cache, dz2)
    _collect(grads, "enc2", lg)
    return breakdown, grads
