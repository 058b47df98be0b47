"""Latency-inducing loss terms and the baseline attack objectives.

Each term comes in two flavors: the value used for reporting (including exact
indicator versions of the box-plausibility terms) and a `*_with_grad` variant
returning hand-derived gradients with respect to its direct inputs. The
indicator terms are optimized through sigmoid surrogates with temperature
``beta``; the exact versions are kept for metrics.
"""

from __future__ import annotations

import numpy as np

from .fusion import sigmoid
from .types import AttackConfig, ValidationError


def loss_conf(scores: np.ndarray, tau: float) -> float:
    """Mean hinge pushing every objectness score up to at least tau."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
        raise ValidationError("scores must lie in [0, 1]")
    return float(np.mean(np.maximum(0.0, tau - scores)))


def loss_conf_with_grad(scores: np.ndarray, tau: float, beta: float = 10.0):
    """Softplus-smoothed hinge: pressure decays past tau instead of vanishing.

    The exact hinge has zero gradient the moment a score crosses tau, which
    leaves freshly activated cells defenseless against competing gradient
    pressure and parks them right at the filtering threshold. The softplus
    surrogate (exact as beta grows) keeps a small restoring force just above
    tau while still not spending real effort on well-activated cells.
    """
    scores = np.asarray(scores, dtype=np.float64)
    t = beta * (tau - scores)
    # log1p(exp(t)) evaluated stably on both tails
    value = float(np.mean(np.logaddexp(0.0, t))) / beta
    grad = -sigmoid(t) / scores.size
    return value, grad


def _bound_surrogate(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    """Smooth OR of two sigmoid violation terms, elementwise."""
    return primary + secondary - primary * secondary


def loss_shape(length: np.ndarray, width: np.ndarray, l_max: float,
               w_max: float, beta: float) -> float:
    """Smooth fraction of boxes wider or longer than the plausibility bounds."""
    length = np.asarray(length, dtype=np.float64)
    width = np.asarray(width, dtype=np.float64)
    if length.size == 0:
        return 0.0
    term = _bound_surrogate(sigmoid(beta * (length - l_max)),
                            sigmoid(beta * (width - w_max)))
    return float(np.mean(term))


def loss_shape_with_grad(length, width, l_max, w_max, beta):
    length = np.asarray(length, dtype=np.float64)
    width = np.asarray(width, dtype=np.float64)
    if length.size == 0:
        return 0.0, np.zeros(0), np.zeros(0)
    sl = sigmoid(beta * (length - l_max))
    sw = sigmoid(beta * (width - w_max))
    value = float(np.mean(_bound_surrogate(sl, sw)))
    n = length.size
    grad_l = beta * sl * (1.0 - sl) * (1.0 - sw) / n
    grad_w = beta * sw * (1.0 - sw) * (1.0 - sl) / n
    return value, grad_l, grad_w


def shape_violation_rate(length, width, l_max, w_max) -> float:
    """Exact indicator mean: fraction of boxes exceeding either bound."""
    length = np.asarray(length, dtype=np.float64)
    width = np.asarray(width, dtype=np.float64)
    if length.size == 0:
        return 0.0
    return float(np.mean((length > l_max) | (width > w_max)))


def loss_vertical(z: np.ndarray, z_min: float, z_max: float, beta: float) -> float:
    """Smooth fraction of boxes outside the valid elevation range."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        return 0.0
    term = _bound_surrogate(sigmoid(beta * (z_min - z)),
                            sigmoid(beta * (z - z_max)))
    return float(np.mean(term))


def loss_vertical_with_grad(z, z_min, z_max, beta):
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        return 0.0, np.zeros(0)
    lo = sigmoid(beta * (z_min - z))
    hi = sigmoid(beta * (z - z_max))
    value = float(np.mean(_bound_surrogate(lo, hi)))
    n = z.size
    grad = beta * (hi * (1.0 - hi) * (1.0 - lo)
                   - lo * (1.0 - lo) * (1.0 - hi)) / n
    return value, grad


def vertical_violation_rate(z, z_min, z_max) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        return 0.0
    return float(np.mean((z < z_min) | (z > z_max)))


def combine_losses(conf: float, shape: float, vertical: float,
                   cfg: AttackConfig) -> float:
    return cfg.lambda1 * conf + cfg.lambda2 * (shape + vertical)


def loss_total(scores, length, width, z, cfg: AttackConfig) -> float:
    """The attacker's unified objective over scores and decoded box geometry."""
    return combine_losses(
        loss_conf(scores, cfg.tau),
        loss_shape(length, width, cfg.l_max, cfg.w_max, cfg.surrogate_beta),
        loss_vertical(z, cfg.z_min, cfg.z_max, cfg.surrogate_beta),
        cfg)


# --- baseline objectives ---------------------------------------------------

_EPS = 1e-6


def baseline_pgd_loss(scores: np.ndarray, benign_scores: np.ndarray) -> float:
    """Negative BCE against benign hard predictions (untargeted degradation)."""
    scores = np.asarray(scores, dtype=np.float64)
    benign = np.asarray(benign_scores, dtype=np.float64)
    if scores.shape != benign.shape:
        raise ValidationError("score arrays must have equal shape")
    labels = (benign >= 0.5).astype(np.float64)
    s = np.clip(scores, _EPS, 1.0 - _EPS)
    bce = -np.mean(labels * np.log(s) + (1.0 - labels) * np.log(1.0 - s))
    return float(-bce)


def baseline_pgd_loss_with_grad(scores, benign_scores):
    scores = np.asarray(scores, dtype=np.float64)
    benign = np.asarray(benign_scores, dtype=np.float64)
    labels = (benign >= 0.5).astype(np.float64)
    s = np.clip(scores, _EPS, 1.0 - _EPS)
    bce = -np.mean(labels * np.log(s) + (1.0 - labels) * np.log(1.0 - s))
    inside = (scores > _EPS) & (scores < 1.0 - _EPS)
    grad = np.where(inside, (labels / s - (1.0 - labels) / (1.0 - s)) / s.size, 0.0)
    return float(-bce), grad


def soft_pairwise_iou(x, y, length, width):
    """Mean soft axis-aligned IoU over all pairs; differentiable a.e.

    Used by the prior-art objective to spread proposals apart. Disjoint pairs
    contribute exactly zero.
    """
    value, *_ = soft_pairwise_iou_with_grad(x, y, length, width)
    return value


def soft_pairwise_iou_with_grad(x, y, length, width):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    length = np.asarray(length, dtype=np.float64)
    width = np.asarray(width, dtype=np.float64)
    k = x.size
    zeros = np.zeros(k)
    if k < 2:
        return 0.0, zeros, zeros, zeros.copy(), zeros.copy()

    def overlap(c, e):
        """1-d overlap of intervals (c +- e/2) with branch indicators."""
        lo = c - e / 2.0
        hi = c + e / 2.0
        top = np.minimum(hi[:, None], hi[None, :])
        bot = np.maximum(lo[:, None], lo[None, :])
        ov = np.maximum(top - bot, 0.0)
        i_top = (hi[:, None] <= hi[None, :]).astype(np.float64)  # row box sets min
        i_bot = (lo[:, None] >= lo[None, :]).astype(np.float64)  # row box sets max
        return ov, i_top, i_bot

    ox, ax_top, ax_bot = overlap(x, length)
    oy, ay_top, ay_bot = overlap(y, width)
    inter = ox * oy
    area = length * width
    denom = area[:, None] + area[None, :] - inter
    iou = np.where(denom > 0, inter / np.maximum(denom, _EPS), 0.0)

    mask = np.triu(np.ones((k, k), dtype=bool), 1)
    n_pairs = k * (k - 1) // 2
    value = float(iou[mask].sum() / n_pairs)

    # d iou / d inter and / d own-area
    act = mask & (inter > 0)
    d_inter = np.where(act, (area[:, None] + area[None, :]) / denom ** 2, 0.0)
    d_area_row = np.where(act, -inter / denom ** 2, 0.0)

    dox = d_inter * oy
    doy = d_inter * ox
    live_x = ox > 0
    live_y = oy > 0

    # row-box derivatives (gradients are symmetric: accumulate row + column roles)
    def accumulate(d_o, i_top, i_bot, live):
        d_c_row = np.where(live, d_o * (i_top - i_bot), 0.0)
        d_e_row = np.where(live, d_o * 0.5 * (i_top + i_bot), 0.0)
        # as column box the indicators complement
        d_c_col = np.where(live, d_o * ((1 - i_top) - (1 - i_bot)), 0.0)
        d_e_col = np.where(live, d_o * 0.5 * ((1 - i_top) + (1 - i_bot)), 0.0)
        d_c = d_c_row.sum(axis=1) + d_c_col.sum(axis=0)
        d_e = d_e_row.sum(axis=1) + d_e_col.sum(axis=0)
        return d_c, d_e

    gx, gl_ov = accumulate(dox, ax_top, ax_bot, live_x)
    gy, gw_ov = accumulate(doy, ay_top, ay_bot, live_y)

    # own-area term: d iou/d area_i = d_area for row role and column role
    d_area = d_area_row.sum(axis=1) + d_area_row.T.sum(axis=1)
    gl = gl_ov + d_area * width
    gw = gw_ov + d_area * length

    scale = 1.0 / n_pairs
    return value, gx * scale, gy * scale, gl * scale, gw * scale


def baseline_prior_art_loss(scores, x, y, length, width, top_k: int = 32) -> float:
    """Unbounded confidence maximization plus pairwise-overlap minimization."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    conf_term = -float(np.mean(scores)) if scores.size else 0.0
    idx = np.argsort(-scores)[:top_k]
    x = np.asarray(x, dtype=np.float64).reshape(-1)[idx]
    y = np.asarray(y, dtype=np.float64).reshape(-1)[idx]
    length = np.asarray(length, dtype=np.float64).reshape(-1)[idx]
    width = np.asarray(width, dtype=np.float64).reshape(-1)[idx]
    return conf_term + soft_pairwise_iou(x, y, length, width)
