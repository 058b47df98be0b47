"""The victim's fusion -> head -> decode -> filter -> NMS pipeline.

Internally proposals travel as a structure-of-arrays (`ProposalArray`) so the
benign pipeline stays fast and stage timings reflect the algorithms rather
than Python object churn; `ProposalBox` lists are materialized at the API
boundary. `run_pipeline` applies the confidence filter on raw scores before
decoding, which is observationally identical to decode-then-filter (the filter
only reads scores) but avoids decoding thousands of boxes that are about to be
dropped.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import fusion, geometry
from .types import (AnchorConfig, FeatureMap, HeadWeights, NmsStats, PoseSE2,
                    PostprocessConfig, ProposalBox, RawPrediction,
                    StructuralError, TimingBreakdown, wrap_angle)


@dataclass
class ProposalArray:
    """Vectorized proposal set; fields are parallel 1-d arrays."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    length: np.ndarray
    width: np.ndarray
    height: np.ndarray
    yaw: np.ndarray
    score: np.ndarray
    anchor: np.ndarray
    row: np.ndarray
    col: np.ndarray

    def __len__(self) -> int:
        return self.score.size

    def take(self, idx) -> "ProposalArray":
        return ProposalArray(*[getattr(self, f)[idx] for f in (
            "x", "y", "z", "length", "width", "height", "yaw", "score",
            "anchor", "row", "col")])

    def to_boxes(self) -> list[ProposalBox]:
        return [
            ProposalBox(float(self.x[i]), float(self.y[i]), float(self.z[i]),
                        float(self.length[i]), float(self.width[i]),
                        float(self.height[i]), float(self.yaw[i]),
                        float(self.score[i]),
                        (int(self.anchor[i]), int(self.row[i]), int(self.col[i])))
            for i in range(len(self))
        ]


def decode_proposal_array(raw: RawPrediction, anchors: AnchorConfig,
                          ego_pose: PoseSE2) -> ProposalArray:
    """Anchor decoding (offset centers, exp sizes) into the world frame."""
    b, h, w = raw.scores.shape
    if b != anchors.num_anchors:
        raise StructuralError("score channels do not match anchor count")
    res = anchors.resolution

    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    cell_x = (cols - (w - 1) / 2.0) * res  # (H, W)
    cell_y = (rows - (h - 1) / 2.0) * res

    deltas = raw.deltas.reshape(b, 7, h, w)
    l0 = np.asarray(anchors.length)[:, None, None]
    w0 = np.asarray(anchors.width)[:, None, None]
    h0 = np.asarray(anchors.height)[:, None, None]
    yaw0 = np.asarray(anchors.yaw)[:, None, None]

    x_loc = cell_x[None] + deltas[:, 0] * l0
    y_loc = cell_y[None] + deltas[:, 1] * w0
    z = anchors.z_center + deltas[:, 2] * h0
    length = l0 * np.exp(deltas[:, 3])
    width = w0 * np.exp(deltas[:, 4])
    height = h0 * np.exp(deltas[:, 5])
    yaw_loc = yaw0 + deltas[:, 6]

    c, s = math.cos(ego_pose.yaw), math.sin(ego_pose.yaw)
    x_world = c * x_loc - s * y_loc + ego_pose.x
    y_world = s * x_loc + c * y_loc + ego_pose.y
    yaw_world = yaw_loc + ego_pose.yaw

    anchor_idx, row_idx, col_idx = np.meshgrid(
        np.arange(b), np.arange(h), np.arange(w), indexing="ij")

    flat = lambda a: a.reshape(-1)
    return ProposalArray(
        x=flat(x_world), y=flat(y_world), z=flat(z),
        length=flat(length), width=flat(width), height=flat(height),
        yaw=flat(yaw_world), score=flat(raw.scores.astype(np.float64)),
        anchor=flat(anchor_idx), row=flat(row_idx), col=flat(col_idx))


def decode_proposals(raw: RawPrediction, anchors: AnchorConfig,
                     ego_pose: PoseSE2) -> list[ProposalBox]:
    """List-of-boxes view of `decode_proposal_array`; one box per (anchor, cell)."""
    return decode_proposal_array(raw, anchors, ego_pose).to_boxes()


def _filter_order(score, anchor, row, col, threshold, max_keep):
    keep = np.flatnonzero(score >= threshold)
    # descending score; ties resolved by lower (anchor, row, col)
    order = np.lexsort((col[keep], row[keep], anchor[keep], -score[keep]))
    return keep[order][:max_keep]


def confidence_filter_array(proposals: ProposalArray, threshold: float,
                            max_keep: int) -> ProposalArray:
    idx = _filter_order(proposals.score, proposals.anchor, proposals.row,
                        proposals.col, threshold, max_keep)
    return proposals.take(idx)


def confidence_filter(proposals: list[ProposalBox], threshold: float,
                      max_keep: int) -> list[ProposalBox]:
    """Keep boxes scoring >= threshold, top max_keep by score, sorted descending."""
    if not proposals:
        return []
    score = np.array([p.score for p in proposals])
    anchor = np.array([p.source_index[0] for p in proposals])
    row = np.array([p.source_index[1] for p in proposals])
    col = np.array([p.source_index[2] for p in proposals])
    idx = _filter_order(score, anchor, row, col, threshold, max_keep)
    return [proposals[i] for i in idx]


@dataclass
class PipelineResult:
    detections: list[ProposalBox]
    timing: TimingBreakdown
    nms_stats: NmsStats
    pre_nms_count: int  # proposals above the confidence threshold, before the cap
    nms_input_count: int

    def __iter__(self):
        # allow (detections, timing, stats) unpacking
        return iter((self.detections, self.timing, self.nms_stats))


def _decode_selected(fused_data: np.ndarray, head: HeadWeights,
                     scores: np.ndarray, anchors: AnchorConfig,
                     ego_pose: PoseSE2, flat_idx: np.ndarray) -> ProposalArray:
    """Decode only the cells picked by the confidence filter.

    Regression channels are evaluated per selected cell rather than densely;
    identical to decoding the full head output and gathering, but the benign
    pipeline typically keeps a handful of cells out of thousands.
    """
    b = head.num_anchors
    h, w = fused_data.shape[1:]
    anchor = flat_idx // (h * w)
    rem = flat_idx % (h * w)
    row = rem // w
    col = rem % w
    res = anchors.resolution

    reg = fusion.conv_at_cells(fused_data, head.kernels[b:], head.bias[b:],
                               row, col)  # (7b, n)
    d = reg.reshape(b, 7, -1)[anchor, :, np.arange(flat_idx.size)]  # (n, 7)
    l0 = np.asarray(anchors.length)[anchor]
    w0 = np.asarray(anchors.width)[anchor]
    h0 = np.asarray(anchors.height)[anchor]
    yaw0 = np.asarray(anchors.yaw)[anchor]

    x_loc = (col - (w - 1) / 2.0) * res + d[:, 0] * l0
    y_loc = (row - (h - 1) / 2.0) * res + d[:, 1] * w0
    c, s = math.cos(ego_pose.yaw), math.sin(ego_pose.yaw)
    return ProposalArray(
        x=c * x_loc - s * y_loc + ego_pose.x,
        y=s * x_loc + c * y_loc + ego_pose.y,
        z=anchors.z_center + d[:, 2] * h0,
        length=l0 * np.exp(d[:, 3]),
        width=w0 * np.exp(d[:, 4]),
        height=h0 * np.exp(d[:, 5]),
        yaw=yaw0 + d[:, 6] + ego_pose.yaw,
        score=scores.reshape(-1)[flat_idx],
        anchor=anchor, row=row, col=col)


def run_pipeline(features: list[FeatureMap], head: HeadWeights,
                 anchors: AnchorConfig, post: PostprocessConfig) -> PipelineResult:
    """Full victim pipeline with per-stage wall times on a monotonic clock."""
    timing = TimingBreakdown()

    t0 = time.perf_counter()
    fused = fusion.fuse_attention(features, ego_index=0)
    timing.fuse = time.perf_counter() - t0

    t0 = time.perf_counter()
    b = head.num_anchors
    # only objectness is needed densely; regression is read per kept cell later
    logits = fusion.conv_forward(fused.data, head.kernels[:b], head.bias[:b])
    scores = fusion.sigmoid(logits)
    timing.head = time.perf_counter() - t0

    t0 = time.perf_counter()
    score = scores.reshape(-1)
    above = np.flatnonzero(score >= post.confidence_threshold)
    pre_nms_count = int(above.size)
    # flatnonzero yields ascending (anchor, row, col), so a stable sort on
    # descending score reproduces the documented tie-break for free
    order = np.argsort(-score[above], kind="stable")
    selected = above[order[:post.max_keep]]
    timing.filter = time.perf_counter() - t0

    t0 = time.perf_counter()
    kept = _decode_selected(fused.data, head, scores, anchors, fused.pose,
                            selected)
    timing.decode = time.perf_counter() - t0

    t0 = time.perf_counter()
    keep_mask, stats = geometry.nms_arrays(
        kept.x, kept.y, kept.length, kept.width, kept.yaw, kept.score,
        post.iou_threshold)
    timing.nms = time.perf_counter() - t0

    detections = kept.take(keep_mask).to_boxes()
    return PipelineResult(detections=detections, timing=timing, nms_stats=stats,
                          pre_nms_count=pre_nms_count, nms_input_count=len(kept))
