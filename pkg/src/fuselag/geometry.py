"""Rotated-box overlap in the BEV plane and greedy, instrumented NMS.

The IoU of two yaw-rotated rectangles is computed exactly by Sutherland-Hodgman
polygon clipping followed by the shoelace formula. The NMS inner loop is
numba-compiled so its wall time scales with the number of IoU evaluations and
not with Python interpreter overhead.
"""

from __future__ import annotations

import math
import time

import numpy as np
from numba import njit

from .types import NmsStats, ProposalBox, ValidationError


@njit(cache=True)
def _iou_single(x1, y1, l1, w1, r1, x2, y2, l2, w2, r2):
    area1 = l1 * w1
    area2 = l2 * w2
    if area1 <= 0.0 or area2 <= 0.0:
        return 0.0

    # Corner buffers: subject polygon (grows to at most 8 vertices when a
    # rectangle is clipped by a rectangle), clip rectangle, and scratch.
    poly = np.empty((16, 2))
    out = np.empty((16, 2))
    clip = np.empty((4, 2))

    c = math.cos(r1)
    s = math.sin(r1)
    hx = 0.5 * l1
    hy = 0.5 * w1
    # counter-clockwise corners
    poly[0, 0] = x1 + c * hx - s * hy
    poly[0, 1] = y1 + s * hx + c * hy
    poly[1, 0] = x1 - c * hx - s * hy
    poly[1, 1] = y1 - s * hx + c * hy
    poly[2, 0] = x1 - c * hx + s * hy
    poly[2, 1] = y1 - s * hx - c * hy
    poly[3, 0] = x1 + c * hx + s * hy
    poly[3, 1] = y1 + s * hx - c * hy

    c = math.cos(r2)
    s = math.sin(r2)
    hx = 0.5 * l2
    hy = 0.5 * w2
    clip[0, 0] = x2 + c * hx - s * hy
    clip[0, 1] = y2 + s * hx + c * hy
    clip[1, 0] = x2 - c * hx - s * hy
    clip[1, 1] = y2 - s * hx + c * hy
    clip[2, 0] = x2 - c * hx + s * hy
    clip[2, 1] = y2 - s * hx - c * hy
    clip[3, 0] = x2 + c * hx + s * hy
    clip[3, 1] = y2 + s * hx - c * hy

    n = 4
    for e in range(4):
        px = clip[e, 0]
        py = clip[e, 1]
        qx = clip[(e + 1) % 4, 0]
        qy = clip[(e + 1) % 4, 1]
        ex = qx - px
        ey = qy - py
        m = 0
        for i in range(n):
            cx = poly[i, 0]
            cy = poly[i, 1]
            nx = poly[(i + 1) % n, 0]
            ny = poly[(i + 1) % n, 1]
            cur_side = ex * (cy - py) - ey * (cx - px)
            nxt_side = ex * (ny - py) - ey * (nx - px)
            if cur_side >= 0.0:
                out[m, 0] = cx
                out[m, 1] = cy
                m += 1
                if nxt_side < 0.0:
                    t = cur_side / (cur_side - nxt_side)
                    out[m, 0] = cx + t * (nx - cx)
                    out[m, 1] = cy + t * (ny - cy)
                    m += 1
            elif nxt_side >= 0.0:
                t = cur_side / (cur_side - nxt_side)
                out[m, 0] = cx + t * (nx - cx)
                out[m, 1] = cy + t * (ny - cy)
                m += 1
        if m == 0:
            return 0.0
        for i in range(m):
            poly[i, 0] = out[i, 0]
            poly[i, 1] = out[i, 1]
        n = m

    inter = 0.0
    for i in range(n):
        j = (i + 1) % n
        inter += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    inter = 0.5 * abs(inter)

    union = area1 + area2 - inter
    if union <= 0.0:
        return 0.0
    iou = inter / union
    if iou < 0.0:
        return 0.0
    if iou > 1.0:
        return 1.0
    return iou


@njit(cache=True)
def _nms_kernel(x, y, l, w, r, iou_threshold):
    n = x.shape[0]
    alive = np.ones(n, np.uint8)
    keep = np.zeros(n, np.uint8)
    evaluations = 0
    iterations = 0
    for i in range(n):
        if alive[i] == 0:
            continue
        keep[i] = 1
        iterations += 1
        for j in range(i + 1, n):
            if alive[j] == 1:
                evaluations += 1
                if _iou_single(x[i], y[i], l[i], w[i], r[i],
                               x[j], y[j], l[j], w[j], r[j]) > iou_threshold:
                    alive[j] = 0
    return keep, evaluations, iterations


def rotated_iou(a: ProposalBox, b: ProposalBox) -> float:
    """Exact BEV IoU of two yaw-rotated rectangles (z and height ignored)."""
    if a.length <= 0 or a.width <= 0 or b.length <= 0 or b.width <= 0:
        return 0.0
    return float(_iou_single(a.x, a.y, a.length, a.width, a.yaw,
                             b.x, b.y, b.length, b.width, b.yaw))


def nms_arrays(x, y, length, width, yaw, scores, iou_threshold: float):
    """Greedy NMS over parallel box arrays sorted by descending score.

    Returns (keep_mask, NmsStats). The score array is only used to assert the
    ordering precondition; suppression is decided purely by IoU.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size > 1 and np.any(np.diff(scores) > 1e-12):
        raise ValidationError("nms input must be sorted by descending score")
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    length = np.ascontiguousarray(length, dtype=np.float64)
    width = np.ascontiguousarray(width, dtype=np.float64)
    yaw = np.ascontiguousarray(yaw, dtype=np.float64)

    t0 = time.perf_counter()
    keep, evaluations, iterations = _nms_kernel(x, y, length, width, yaw,
                                                float(iou_threshold))
    wall = time.perf_counter() - t0

    stats = NmsStats(
        input_count=int(scores.size),
        iou_evaluations=int(evaluations),
        iterations=int(iterations),
        survivors=int(keep.sum()),
        wall_time=wall,
    )
    stats.check()
    return keep.astype(bool), stats


def nms(proposals: list[ProposalBox], iou_threshold: float):
    """Greedy NMS over a score-sorted proposal list; records every IoU evaluation."""
    if not proposals:
        return [], NmsStats(0, 0, 0, 0, 0.0)
    arr = np.array([[p.x, p.y, p.length, p.width, p.yaw, p.score] for p in proposals])
    keep, stats = nms_arrays(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4],
                             arr[:, 5], iou_threshold)
    survivors = [p for p, k in zip(proposals, keep) if k]
    return survivors, stats


def warm_up():
    """Trigger numba compilation so timed runs see steady-state costs."""
    from . import fusion

    box = np.array([0.0])
    _nms_kernel(box, box, box + 1.0, box + 1.0, box, 0.5)
    fusion.conv_forward(np.zeros((1, 3, 3)), np.ones((1, 1, 3, 3)), box)
