"""Per-cell dot-product attention fusion and the convolutional inference head.

Forward passes are plain vectorized numpy; matching hand-derived reverse-mode
backward passes live alongside them so the attack optimizer can differentiate
the whole victim pipeline without an autodiff framework. Every backward here is
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .types import FeatureMap, HeadWeights, RawPrediction, StructuralError, ValidationError


def _stack(features: list[FeatureMap]) -> np.ndarray:
    if not features:
        raise StructuralError("fusion requires at least one feature map")
    shape = features[0].data.shape
    for f in features[1:]:
        if f.data.shape != shape:
            raise StructuralError(
                f"feature shape mismatch: {f.data.shape} vs {shape}")
    stack = np.stack([f.data for f in features])
    if not np.all(np.isfinite(stack)):
        raise ValidationError("non-finite feature input to fusion")
    return stack


def attention_weights(stack: np.ndarray, ego_index: int) -> np.ndarray:
    """Softmax over agents of scaled per-cell dot products with the ego feature."""
    c = stack.shape[1]
    dots = np.einsum("chw,nchw->nhw", stack[ego_index], stack) / np.sqrt(c)
    dots = dots - dots.max(axis=0, keepdims=True)
    w = np.exp(dots)
    w /= w.sum(axis=0, keepdims=True)
    return w


def attention_fuse_stack(stack: np.ndarray, ego_index: int) -> np.ndarray:
    if stack.shape[0] == 2:
        # two-agent softmax reduces to a sigmoid of the dot-product gap
        f0 = stack[ego_index]
        diff = stack[1 - ego_index] - f0
        gap = np.einsum("chw,chw->hw", f0, diff) / np.sqrt(stack.shape[1])
        w_other = sigmoid(gap)
        return f0 + w_other[None] * diff
    w = attention_weights(stack, ego_index)
    return np.einsum("nhw,nchw->chw", w, stack)


def fuse_attention(features: list[FeatureMap], ego_index: int) -> FeatureMap:
    """Fuse spatially aligned per-agent features with ego-queried attention."""
    if len(features) == 2:
        # FeatureMap construction already guarantees finite, shape-checked
        # data, so the two-agent case skips the stack copy entirely
        f0 = features[ego_index].data
        f1 = features[1 - ego_index].data
        if f0.shape != f1.shape:
            raise StructuralError(
                f"feature shape mismatch: {f1.shape} vs {f0.shape}")
        diff = f1 - f0
        gap = np.einsum("chw,chw->hw", f0, diff) / np.sqrt(f0.shape[0])
        fused = f0 + sigmoid(gap)[None] * diff
    else:
        stack = _stack(features)
        fused = attention_fuse_stack(stack, ego_index)
    ego = features[ego_index]
    return FeatureMap(agent_id=ego.agent_id, timestamp=ego.timestamp,
                      pose=ego.pose, data=fused, resolution=ego.resolution)


def attention_backward(stack: np.ndarray, ego_index: int, agent_index: int,
                       grad_out: np.ndarray) -> np.ndarray:
    """Gradient of sum(grad_out * fused) with respect to one agent's feature."""
    c = stack.shape[1]
    sqrt_c = np.sqrt(c)
    w = attention_weights(stack, ego_index)
    # gn[n] = <grad_out, f_n> per cell; gbar = sum_n w_n gn_n
    gn = np.einsum("chw,nchw->nhw", grad_out, stack)
    gbar = np.einsum("nhw,nhw->hw", w, gn)
    # a_k = dL/d(dot_k) = w_k (gn_k - gbar)
    a = w * (gn - gbar[None])

    grad = w[agent_index][None] * grad_out
    grad = grad + a[agent_index][None] * stack[ego_index] / sqrt_c
    if agent_index == ego_index:
        grad = grad + np.einsum("nhw,nchw->chw", a, stack) / sqrt_c
    return grad


@njit(cache=True, fastmath=True)
def _conv_kernel(x, kernels, bias):
    out_c, in_c, k, _ = kernels.shape
    c, h, w = x.shape
    pad = k // 2
    out = np.empty((out_c, h, w))
    # tap-major accumulation with explicit border ranges: no padded copy of the
    # input is materialized, and zero taps (common in sparse heads) cost nothing
    for o in range(out_c):
        for i in range(h):
            row = out[o, i]
            for j in range(w):
                row[j] = bias[o]
        for ci in range(in_c):
            for di in range(k):
                i_lo = max(0, pad - di)
                i_hi = min(h, h + pad - di)
                for dj in range(k):
                    kv = kernels[o, ci, di, dj]
                    if kv == 0.0:
                        continue
                    j_lo = max(0, pad - dj)
                    j_hi = min(w, w + pad - dj)
                    for i in range(i_lo, i_hi):
                        src = x[ci, i + di - pad]
                        row = out[o, i]
                        for j in range(j_lo, j_hi):
                            row[j] += kv * src[j + dj - pad]
    return out


def conv_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 2D correlation: (C,H,W) -> (out,H,W)."""
    out_c, in_c, k, _ = kernels.shape
    if x.shape[0] != in_c:
        raise StructuralError(f"head expects {in_c} channels, got {x.shape[0]}")
    return _conv_kernel(np.ascontiguousarray(x, dtype=np.float64),
                        np.ascontiguousarray(kernels, dtype=np.float64),
                        np.ascontiguousarray(bias, dtype=np.float64))


def conv_at_cells(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
                  rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Evaluate the same-padded correlation only at (row, col) cells.

    Returns (out_channels, n). Agrees exactly with gathering `conv_forward`
    output at those cells; intended for sparse reads where computing the dense
    map would be wasted work.
    """
    out_c, in_c, k, _ = kernels.shape
    if x.shape[0] != in_c:
        raise StructuralError(f"head expects {in_c} channels, got {x.shape[0]}")
    h, w = x.shape[1:]
    pad = k // 2
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    # gather all live taps in one shot; zero rows/cols outside the grid
    ci_t, di_t, dj_t = np.nonzero(np.any(kernels != 0.0, axis=0))
    rr = rows[None, :] + (di_t - pad)[:, None]  # (taps, n)
    cc = cols[None, :] + (dj_t - pad)[:, None]
    valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    vals = x[ci_t[:, None], rr.clip(0, h - 1), cc.clip(0, w - 1)]
    vals[~valid] = 0.0
    return bias[:, None] + kernels[:, ci_t, di_t, dj_t] @ vals


def conv_backward_input(grad_out: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Gradient of sum(grad_out * conv_forward(x)) with respect to x."""
    out_c, in_c, k, _ = kernels.shape
    h, w = grad_out.shape[1:]
    pad = k // 2
    g_flat = grad_out.transpose(1, 2, 0).reshape(h * w, out_c)
    dcols = (g_flat @ kernels.reshape(out_c, in_c * k * k)).reshape(h, w, in_c, k, k)
    dxp = np.zeros((in_c, h + 2 * pad, w + 2 * pad))
    for di in range(k):
        for dj in range(k):
            dxp[:, di:di + h, dj:dj + w] += dcols[:, :, :, di, dj].transpose(2, 0, 1)
    return dxp[:, pad:pad + h, pad:pad + w]


def sigmoid(x: np.ndarray) -> np.ndarray:
    # large negative inputs overflow exp and correctly round the result to 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def head_forward_raw(fused_data: np.ndarray, head: HeadWeights):
    """Run the head and split into score logits and regression deltas."""
    raw = conv_forward(fused_data, head.kernels, head.bias)
    b = head.num_anchors
    return raw[:b], raw[b:]


def apply_inference_head(fused: FeatureMap, head: HeadWeights) -> RawPrediction:
    """Deterministic convolutional head: sigmoid scores plus regression deltas."""
    logits, deltas = head_forward_raw(fused.data, head)
    return RawPrediction(scores=sigmoid(logits), deltas=deltas)
