"""Feature-level perturbation optimization against the fusion pipeline.

The chain fuse -> head -> differentiable decode -> objective is differentiated
by hand (see `fusion` for the attention and convolution backward passes); the
optimizer is plain BIM: signed-gradient steps clamped to an L-infinity budget.
Objectives are strategy objects so the latency loss and the two baseline
attacks share one loop.
"""

from __future__ import annotations

import numpy as np

from . import losses, warp
from .fusion import (attention_backward, attention_fuse_stack,
                     conv_backward_input, head_forward_raw, sigmoid)
from .types import (AnchorConfig, AttackConfig, FeatureMap, HeadWeights,
                    Perturbation, StructuralError, ValidationError)


class LatencyObjective:
    """Confidence activation + shape + vertical plausibility (the main attack)."""

    name = "cp-freezer"

    def __call__(self, s, x, y, length, width, z, cfg: AttackConfig):
        v_conf, g_conf = losses.loss_conf_with_grad(s, cfg.tau,
                                                    cfg.surrogate_beta)
        v_shape, gl, gw = losses.loss_shape_with_grad(
            length, width, cfg.l_max, cfg.w_max, cfg.surrogate_beta)
        v_vert, gz = losses.loss_vertical_with_grad(
            z, cfg.z_min, cfg.z_max, cfg.surrogate_beta)
        value = losses.combine_losses(v_conf, v_shape, v_vert, cfg)
        return (value,
                cfg.lambda1 * g_conf,
                np.zeros_like(x), np.zeros_like(y),
                cfg.lambda2 * gl, cfg.lambda2 * gw, cfg.lambda2 * gz)


class PgdObjective:
    """Untargeted accuracy-degradation surrogate: negative BCE vs benign labels."""

    name = "pgd"

    def __init__(self, benign_scores: np.ndarray):
        self.benign_scores = np.asarray(benign_scores, dtype=np.float64).reshape(-1)

    def __call__(self, s, x, y, length, width, z, cfg: AttackConfig):
        value, gs = losses.baseline_pgd_loss_with_grad(s, self.benign_scores)
        zero = np.zeros_like(x)
        return value, gs, zero, zero.copy(), zero.copy(), zero.copy(), zero.copy()


class PriorArtObjective:
    """Unbounded confidence maximization plus top-K pairwise-overlap spreading."""

    name = "prior-art"

    def __init__(self, top_k: int = 32):
        self.top_k = top_k

    def __call__(self, s, x, y, length, width, z, cfg: AttackConfig):
        n = s.size
        conf_value = -float(np.mean(s))
        gs = np.full(n, -1.0 / n)

        idx = np.argsort(-s)[:self.top_k]
        v_iou, gx_k, gy_k, gl_k, gw_k = losses.soft_pairwise_iou_with_grad(
            x[idx], y[idx], length[idx], width[idx])
        gx = np.zeros(n)
        gy = np.zeros(n)
        gl = np.zeros(n)
        gw = np.zeros(n)
        gx[idx] = gx_k
        gy[idx] = gy_k
        gl[idx] = gl_k
        gw[idx] = gw_k
        return (conf_value + v_iou, gs, gx, gy, gl, gw, np.zeros(n))


def _decode_pieces(deltas_raw: np.ndarray, anchors: AnchorConfig,
                   height: int, width_cells: int):
    """Differentiable parts of the decoder in the local frame, flattened."""
    b = anchors.num_anchors
    d = deltas_raw.reshape(b, 7, height, width_cells)
    res = anchors.resolution
    cols, rows = np.meshgrid(np.arange(width_cells), np.arange(height))
    cell_x = (cols - (width_cells - 1) / 2.0) * res
    cell_y = (rows - (height - 1) / 2.0) * res
    l0 = np.asarray(anchors.length)[:, None, None]
    w0 = np.asarray(anchors.width)[:, None, None]
    h0 = np.asarray(anchors.height)[:, None, None]
    x = (cell_x[None] + d[:, 0] * l0).reshape(-1)
    y = (cell_y[None] + d[:, 1] * w0).reshape(-1)
    z = (anchors.z_center + d[:, 2] * h0).reshape(-1)
    length = (l0 * np.exp(d[:, 3])).reshape(-1)
    width = (w0 * np.exp(d[:, 4])).reshape(-1)
    return x, y, z, length, width


def loss_and_grad(features: list[FeatureMap], attacker_index: int,
                  ego_index: int, delta: np.ndarray, head: HeadWeights,
                  anchors: AnchorConfig, cfg: AttackConfig, objective,
                  transport=None):
    """Objective value, its exact gradient w.r.t. delta, and current scores.

    `transport` is an optional AffineTransform2D aligning the perturbation from
    the attacker's own frame into the fused frame, modelling the victim-side
    spatial alignment the injected feature passes through; the returned
    gradient is pulled back through it.
    """
    stack = np.stack([f.data for f in features]).astype(np.float64)
    if delta.shape != stack.shape[1:]:
        raise StructuralError("delta shape must match the attacker feature")
    applied = delta if transport is None else warp.warp_array(delta, transport)
    stack[attacker_index] = stack[attacker_index] + applied

    fused = attention_fuse_stack(stack, ego_index)
    logits, deltas_raw = head_forward_raw(fused, head)
    s = sigmoid(logits)
    b, h, w = s.shape
    x, y, z, length, width = _decode_pieces(deltas_raw, anchors, h, w)

    value, gs, gx, gy, gl, gw, gz = objective(
        s.reshape(-1), x, y, length, width, z, cfg)
    if not np.isfinite(value):
        raise ValidationError("non-finite loss value in attack objective")

    # chain back through sigmoid / exponential decode into the head output
    dlogits = (gs * s.reshape(-1) * (1.0 - s.reshape(-1))).reshape(b, h, w)
    l0 = np.asarray(anchors.length)[:, None, None]
    w0 = np.asarray(anchors.width)[:, None, None]
    h0 = np.asarray(anchors.height)[:, None, None]
    gd = np.zeros((b, 7, h, w))
    gd[:, 0] = gx.reshape(b, h, w) * l0
    gd[:, 1] = gy.reshape(b, h, w) * w0
    gd[:, 2] = gz.reshape(b, h, w) * h0
    gd[:, 3] = gl.reshape(b, h, w) * length.reshape(b, h, w)
    gd[:, 4] = gw.reshape(b, h, w) * width.reshape(b, h, w)

    grad_out = np.concatenate([dlogits, gd.reshape(7 * b, h, w)])
    dfused = conv_backward_input(grad_out, head.kernels)
    if not np.all(np.isfinite(dfused)):
        raise ValidationError("non-finite gradient after the head backward pass")
    ddelta = attention_backward(stack, ego_index, attacker_index, dfused)
    if not np.all(np.isfinite(ddelta)):
        raise ValidationError("non-finite gradient after the fusion backward pass")
    if transport is not None:
        ddelta = warp.warp_adjoint(ddelta, transport)
    return value, ddelta, s


def grad_wrt_delta(victim_features: list[FeatureMap],
                   attacker_feature: FeatureMap, delta: np.ndarray,
                   head: HeadWeights, anchors: AnchorConfig,
                   cfg: AttackConfig) -> np.ndarray:
    """Exact gradient of the latency objective w.r.t. the injected perturbation."""
    features = list(victim_features) + [attacker_feature]
    _, grad, _ = loss_and_grad(features, len(features) - 1, 0, delta, head,
                               anchors, cfg, LatencyObjective())
    return grad


def bim_optimize(features: list[FeatureMap], attacker_index: int,
                 ego_index: int, head: HeadWeights, anchors: AnchorConfig,
                 cfg: AttackConfig, objective=None,
                 count_threshold: float = 0.2, transport=None) -> Perturbation:
    """Iterative signed-gradient descent under the L-infinity budget.

    The trace records the loss and above-threshold proposal count at each
    visited perturbation, including the final one (steps + 1 entries).
    """
    objective = objective or LatencyObjective()
    delta = np.zeros_like(features[attacker_index].data)
    result = Perturbation(delta=delta)
    for _ in range(cfg.steps):
        value, grad, s = loss_and_grad(features, attacker_index, ego_index,
                                       delta, head, anchors, cfg, objective,
                                       transport=transport)
        result.losses.append(value)
        result.pre_nms_counts.append(int(np.count_nonzero(s >= count_threshold)))
        delta = np.clip(delta - cfg.step_size * np.sign(grad),
                        -cfg.linf_budget, cfg.linf_budget)
    value, _, s = loss_and_grad(features, attacker_index, ego_index, delta,
                                head, anchors, cfg, objective,
                                transport=transport)
    result.losses.append(value)
    result.pre_nms_counts.append(int(np.count_nonzero(s >= count_threshold)))
    result.delta = delta
    return result
