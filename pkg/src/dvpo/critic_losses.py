"""Risk-aware distributional critic losses with analytic gradients.

Every loss takes predicted and target quantiles shaped ``(M,)`` or ``(B, M)``
and returns ``(loss, grad)`` where ``loss`` is the batch mean of the
per-sample loss and ``grad`` is its gradient w.r.t. the predictions, shaped
like the predictions. Targets are constants.

Tail statistics (variance, curvature) are taken in each vector's own sorted
order; the tail-sum losses index both vectors by the permutation that sorts
the target.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .distvalue import QuantileGrid, TailSpec, sort_permutation
from .errors import ConfigError, ShapeError

Array = np.ndarray

COMPONENTS = ("qr", "risk", "cvar", "gain", "shift", "shape", "curv", "consist")


@dataclass(frozen=True)
class LossWeights:
    w_risk: float = 0.3
    w_cvar: float = 0.5
    w_gain: float = 0.3
    w_shift: float = 0.2
    w_shape: float = 0.1
    w_curv: float = 0.2
    w_consist: float = 0.1
    risk_gamma: float = 1.0
    huber_delta: float = 1.0
    alpha: float = 0.1
    beta: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("w_") and getattr(self, f.name) < 0:
                raise ConfigError("loss weights must be >= 0", f"loss.{f.name}")
        if self.risk_gamma < 0:
            raise ConfigError("must be >= 0", "loss.risk_gamma")
        if self.huber_delta <= 0:
            raise ConfigError("must be > 0", "loss.huber_delta")

    def tails(self, m: int) -> TailSpec:
        return TailSpec(self.alpha, self.beta, m)

    def weight(self, name: str) -> float:
        return 1.0 if name == "qr" else getattr(self, f"w_{name}")


@dataclass
class LossBreakdown:
    qr: float = 0.0
    risk: float = 0.0
    cvar: float = 0.0
    gain: float = 0.0
    shift: float = 0.0
    shape: float = 0.0
    curv: float = 0.0
    consist: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _pair(pred, target) -> tuple[Array, Array, bool]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} differ in shape")
    single = p.ndim == 1
    if single:
        p, t = p[None, :], t[None, :]
    if p.ndim != 2:
        raise ShapeError("expected (M,) or (B, M) quantile arrays")
    return p, t, single


def _out(loss_rows: Array, grad: Array, single: bool) -> tuple[float, Array]:
    b = loss_rows.shape[0]
    grad = grad / b
    return float(loss_rows.mean()), grad[0] if single else grad


def huber(u, delta: float = 1.0):
    u = np.asarray(u, dtype=np.float64)
    a = np.abs(u)
    out = np.where(a <= delta, 0.5 * u * u, delta * (a - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def huber_grad(u, delta: float = 1.0):
    u = np.asarray(u, dtype=np.float64)
    return np.where(np.abs(u) <= delta, u, delta * np.sign(u))


def _quantile_huber(p, t, taus, delta, per_quantile_weight=None):
    u = t - p
    w = np.abs(taus - (u < 0))
    if per_quantile_weight is not None:
        w = w * per_quantile_weight
    m = p.shape[1]
    rows = (w * huber(u, delta)).sum(axis=1) / m
    grad = -w * huber_grad(u, delta) / m
    return rows, grad


def qr_loss(pred, target, grid: QuantileGrid, delta: float = 1.0) -> tuple[float, Array]:
    """Quantile Huber regression, index-aligned (u_j = target_j - pred_j)."""
    p, t, single = _pair(pred, target)
    if p.shape[1] != grid.m:
        raise ShapeError(f"vectors have {p.shape[1]} quantiles, grid has {grid.m}")
    rows, grad = _quantile_huber(p, t, grid.levels, delta)
    return _out(rows, grad, single)


def risk_weights(grid: QuantileGrid, risk_gamma: float) -> Array:
    """(1 - tau + 1/M) ** risk_gamma over the grid, rescaled to mean 1."""
    raw = (1.0 - grid.levels + 1.0 / grid.m) ** risk_gamma
    return raw / raw.mean()


def risk_weight(tau: float, risk_gamma: float, m: int) -> float:
    """Risk weight of a single level ``tau`` on an M-point grid."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    grid = QuantileGrid(m)
    norm = ((1.0 - grid.levels + 1.0 / m) ** risk_gamma).mean()
    return float((1.0 - tau + 1.0 / m) ** risk_gamma / norm)


def risk_loss(pred, target, grid: QuantileGrid, delta: float = 1.0, risk_gamma: float = 1.0) -> tuple[float, Array]:
    """Quantile Huber loss with lower quantiles up-weighted by ``risk_weights``."""
    p, t, single = _pair(pred, target)
    if p.shape[1] != grid.m:
        raise ShapeError(f"vectors have {p.shape[1]} quantiles, grid has {grid.m}")
    rows, grad = _quantile_huber(p, t, grid.levels, delta, risk_weights(grid, risk_gamma))
    return _out(rows, grad, single)


def _tail_sum_loss(p, t, sel, k):
    # sel: (B, k) positions chosen by the target's sort permutation
    rows_idx = np.arange(p.shape[0])[:, None]
    gap = t[rows_idx, sel].sum(axis=1) - p[rows_idx, sel].sum(axis=1)
    grad = np.zeros_like(p)
    grad[rows_idx, sel] = (-2.0 * gap / k)[:, None]
    return gap * gap / k, grad


def cvar_loss(pred, target, tails: TailSpec, target_order=None) -> tuple[float, Array]:
    """(1/K_alpha) * (lower-tail sum of target - same positions of pred) ** 2."""
    p, t, single = _pair(pred, target)
    k = tails.k_alpha
    if k < 1:
        raise ConfigError("lower tail is empty (K_alpha < 1)", "tails.alpha")
    order = sort_permutation(t) if target_order is None else target_order
    sel = order[:, :k]
    rows, grad = _tail_sum_loss(p, t, sel, k)
    return _out(rows, grad, single)


def gain_loss(pred, target, tails: TailSpec, target_order=None) -> tuple[float, Array]:
    """Upper-tail counterpart of :func:`cvar_loss` over the top K_beta positions."""
    p, t, single = _pair(pred, target)
    k = tails.k_beta
    if k < 1:
        raise ConfigError("upper tail is empty (K_beta < 1)", "tails.beta")
    order = sort_permutation(t) if target_order is None else target_order
    sel = order[:, p.shape[1] - k:]
    rows, grad = _tail_sum_loss(p, t, sel, k)
    return _out(rows, grad, single)


def shift_loss(pred, target) -> tuple[float, Array]:
    """Hinge on the predicted mean falling below the target mean."""
    p, t, single = _pair(pred, target)
    gap = t.mean(axis=1) - p.mean(axis=1)
    active = gap > 0
    grad = np.where(active[:, None], -1.0 / p.shape[1], 0.0) * np.ones_like(p)
    return _out(np.maximum(gap, 0.0), grad, single)


def _sorted_tail_var(x, pos, order=None):
    """Variance over sorted positions ``pos`` and its gradient w.r.t. ``x``."""
    if order is None:
        order = sort_permutation(x)
    rows_idx = np.arange(x.shape[0])[:, None]
    idx = order[:, pos]
    vals = x[rows_idx, idx]
    mu = vals.mean(axis=1, keepdims=True)
    var = ((vals - mu) ** 2).mean(axis=1)
    grad = np.zeros_like(x)
    grad[rows_idx, idx] = 2.0 * (vals - mu) / len(pos)
    return var, grad


def shape_loss(pred, target, tails: TailSpec, pred_order=None, target_order=None) -> tuple[float, Array]:
    """One-way tail-variance bounds.

    Lower tail: penalize predicted variance above the target's.
    Upper tail: penalize predicted variance below the target's.
    A disabled tail contributes nothing.
    """
    p, t, single = _pair(pred, target)
    rows = np.zeros(p.shape[0])
    grad = np.zeros_like(p)
    if tails.k_alpha:
        vp, gp = _sorted_tail_var(p, tails.lower, pred_order)
        vt, _ = _sorted_tail_var(t, tails.lower, target_order)
        d = vp - vt
        rows += np.maximum(d, 0.0)
        grad += np.where((d > 0)[:, None], gp, 0.0)
    if tails.k_beta:
        vp, gp = _sorted_tail_var(p, tails.upper, pred_order)
        vt, _ = _sorted_tail_var(t, tails.upper, target_order)
        d = vt - vp
        rows += np.maximum(d, 0.0)
        grad -= np.where((d > 0)[:, None], gp, 0.0)
    return _out(rows, grad, single)


def _tail_curvature(x, pos, order=None):
    """Mean second difference over interior sorted positions in ``pos``.

    Returns (value per row, gradient w.r.t. x); value is 0 when no position
    in ``pos`` has two neighbours.
    """
    m = x.shape[1]
    pos = np.asarray([j for j in pos if 0 < j < m - 1], dtype=np.int64)
    if pos.size == 0:
        return np.zeros(x.shape[0]), np.zeros_like(x)
    if order is None:
        order = sort_permutation(x)
    rows_idx = np.arange(x.shape[0])[:, None]
    s = x[rows_idx, order]
    d2 = s[:, pos + 1] - 2.0 * s[:, pos] + s[:, pos - 1]
    coef = np.zeros(m)
    np.add.at(coef, pos + 1, 1.0)
    np.add.at(coef, pos, -2.0)
    np.add.at(coef, pos - 1, 1.0)
    coef /= pos.size
    grad = np.zeros_like(x)
    grad[rows_idx, order] = coef[None, :]
    return d2.mean(axis=1), grad


def curvature_loss(pred, tails: TailSpec, pred_order=None) -> tuple[float, Array]:
    """Penalize convex lower-tail and concave upper-tail quantile curves."""
    p = np.asarray(pred, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    if p.shape[1] < 3:
        raise ConfigError("curvature needs at least 3 quantiles", "m")
    rows = np.zeros(p.shape[0])
    grad = np.zeros_like(p)
    if tails.k_alpha:
        c, g = _tail_curvature(p, tails.lower, pred_order)
        rows += np.maximum(c, 0.0)
        grad += np.where((c > 0)[:, None], g, 0.0)
    if tails.k_beta:
        c, g = _tail_curvature(p, tails.upper, pred_order)
        rows += np.maximum(-c, 0.0)
        grad -= np.where((c < 0)[:, None], g, 0.0)
    return _out(rows, grad, single)


def consistency_loss(heads) -> tuple[float, Array]:
    """Mean squared L2 distance over all unordered head pairs.

    ``heads`` is ``(N, M)`` or ``(B, N, M)``; the gradient has the same shape.
    """
    h = np.asarray(heads, dtype=np.float64)
    single = h.ndim == 2
    if single:
        h = h[None]
    n = h.shape[1]
    if n < 2:
        return 0.0, np.zeros(h.shape[1:] if single else h.shape)
    n_pair = n * (n - 1) / 2
    total = h.sum(axis=1, keepdims=True)
    rows = (n * (h * h).sum(axis=(1, 2)) - (total * total).sum(axis=(1, 2))) / n_pair
    grad = 2.0 * (n * h - total) / n_pair
    return _out(rows, grad, single)


def composite_loss(heads, target, weights: LossWeights, grid: QuantileGrid) -> tuple[LossBreakdown, Array]:
    """Weighted critic objective on the ensemble quantiles.

    All components except consistency see the head-averaged vector; the
    consistency term sees the raw heads. Tail terms whose tail is disabled,
    and curvature when M < 3, contribute 0. Returns the breakdown and the
    gradient w.r.t. ``heads``.
    """
    h = np.asarray(heads, dtype=np.float64)
    single = h.ndim == 2
    if single:
        h = h[None]
    t = np.asarray(target, dtype=np.float64)
    if t.ndim == 1:
        t = t[None]
    if h.ndim != 3 or h.shape[2] != grid.m or t.shape != (h.shape[0], grid.m):
        raise ShapeError(f"heads {h.shape} / target {t.shape} do not fit M={grid.m}")
    n = h.shape[1]
    ens = h.mean(axis=1)
    tails = weights.tails(grid.m)
    delta = weights.huber_delta
    p_order = sort_permutation(ens)
    t_order = sort_permutation(t)

    parts: dict[str, tuple[float, Array]] = {
        "qr": qr_loss(ens, t, grid, delta),
        "risk": risk_loss(ens, t, grid, delta, weights.risk_gamma),
        "shift": shift_loss(ens, t),
        "shape": shape_loss(ens, t, tails, p_order, t_order),
    }
    if tails.k_alpha:
        parts["cvar"] = cvar_loss(ens, t, tails, t_order)
    if tails.k_beta:
        parts["gain"] = gain_loss(ens, t, tails, t_order)
    if grid.m >= 3:
        parts["curv"] = curvature_loss(ens, tails, p_order)

    breakdown = LossBreakdown()
    g_ens = np.zeros_like(ens)
    total = 0.0
    for name, (val, g) in parts.items():
        w = weights.weight(name)
        setattr(breakdown, name, val)
        total += w * val
        if w:
            g_ens += w * g
    grad = np.repeat((g_ens / n)[:, None, :], n, axis=1)

    c_val, c_grad = consistency_loss(h)
    breakdown.consist = c_val
    total += weights.w_consist * c_val
    if weights.w_consist:
        grad += weights.w_consist * c_grad
    breakdown.total = total
    return breakdown, grad[0] if single else grad
