"""Timing harness and evaluation metrics (rate-of-increase, ASR, %RSD, AP)."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import rotated_iou
from .types import ProposalBox, ValidationError


def roi_latency(t_attack: float, t_benign: float) -> float:
    """Rate of increase of latency: (attacked - benign) / benign."""
    if t_benign <= 0:
        raise ValidationError("benign latency must be positive")
    return (t_attack - t_benign) / t_benign


def roi_proposals(p_attack: float, p_benign: float) -> float:
    """Rate of increase of pre-NMS proposal counts."""
    if p_benign <= 0:
        raise ValidationError("benign proposal count must be positive")
    return (p_attack - p_benign) / p_benign


def attack_success_rate(latencies, threshold_seconds: float) -> float:
    """Fraction of frames whose latency exceeds the safety threshold."""
    latencies = np.asarray(list(latencies), dtype=np.float64)
    if latencies.size == 0:
        raise ValidationError("attack_success_rate needs at least one sample")
    if threshold_seconds <= 0:
        raise ValidationError("threshold must be positive")
    return float(np.mean(latencies > threshold_seconds))


@dataclass
class LatencyStats:
    samples: list

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    @property
    def std(self) -> float:
        # population standard deviation, to keep %RSD comparable across tools
        return float(np.std(self.samples))

    @property
    def rsd_percent(self) -> float:
        return 100.0 * self.std / self.mean

    def to_dict(self) -> dict:
        return {"samples": list(self.samples), "mean": self.mean,
                "median": self.median, "std": self.std,
                "rsd_percent": self.rsd_percent}


def measure_latency(runnable, warmups: int = 3, repetitions: int = 10) -> LatencyStats:
    """Serial monotonic-clock timing; warmup runs are discarded."""
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    for _ in range(warmups):
        runnable()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        runnable()
        samples.append(time.perf_counter() - t0)
    return LatencyStats(samples=samples)


def fit_complexity_exponent(sizes, costs) -> float:
    """Least-squares slope of log(cost) against log(size)."""
    sizes = np.asarray(list(sizes), dtype=np.float64)
    costs = np.asarray(list(costs), dtype=np.float64)
    if sizes.size < 3:
        raise ValidationError("need at least 3 sizes")
    if np.any(np.diff(sizes) <= 0):
        raise ValidationError("sizes must be strictly increasing")
    if np.any(sizes <= 0) or np.any(costs <= 0):
        raise ValidationError("sizes and costs must be positive")
    slope, _ = np.polyfit(np.log(sizes), np.log(costs), 1)
    return float(slope)


def _as_box(g) -> ProposalBox:
    if isinstance(g, ProposalBox):
        return g
    return ProposalBox(x=g["x"], y=g["y"], z=g.get("z", 0.0),
                       length=g["length"], width=g["width"],
                       height=g.get("height", 1.0), yaw=g["yaw"],
                       score=1.0, source_index=(0, 0, 0))


def average_precision(detections: list[ProposalBox], ground_truth,
                      iou_threshold: float = 0.5) -> float:
    """All-points-interpolated AP with greedy score-ordered BEV IoU matching."""
    gt = [_as_box(g) for g in ground_truth]
    if not gt:
        return 1.0 if not detections else 0.0
    if not detections:
        return 0.0

    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    matched = [False] * len(gt)
    tp = np.zeros(len(detections))
    for rank, i in enumerate(order):
        det = detections[i]
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(gt):
            if matched[j]:
                continue
            iou = rotated_iou(det, g)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            tp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    precision = cum_tp / (np.arange(len(detections)) + 1)
    recall = cum_tp / len(gt)
    # precision envelope, then area under the PR curve at every recall step
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p, t in zip(recall, env, tp):
        if t > 0:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


@dataclass
class FrameRecord:
    frame: int
    benign_latency: float
    attacked_latency: float
    benign_pre_nms: int
    attacked_pre_nms: int
    benign_iou_evals: int
    attacked_iou_evals: int
    benign_detections: int
    attacked_detections: int
    benign_ap: float
    attacked_ap: float

    @property
    def roi_l(self) -> float:
        return roi_latency(self.attacked_latency, self.benign_latency)

    @property
    def roi_p(self) -> float:
        return roi_proposals(self.attacked_pre_nms, max(self.benign_pre_nms, 1))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "frame", "benign_latency", "attacked_latency", "benign_pre_nms",
            "attacked_pre_nms", "benign_iou_evals", "attacked_iou_evals",
            "benign_detections", "attacked_detections", "benign_ap",
            "attacked_ap")}
        d["roi_l"] = self.roi_l
        d["roi_p"] = self.roi_p
        return d


@dataclass
class RunReport:
    """Per-frame measurements of one benign/attacked experiment plus aggregates."""

    label: str
    frames: list = field(default_factory=list)
    asr_threshold_seconds: float = 1.5
    meta: dict = field(default_factory=dict)

    def add_frame(self, record: FrameRecord):
        self.frames.append(record)

    # aggregates: RoI averaged per frame then across frames (the reported
    # variant) plus the ratio-of-means alternative for cross-checking
    def aggregates(self) -> dict:
        if not self.frames:
            return {}
        roi_l = [f.roi_l for f in self.frames]
        roi_p = [f.roi_p for f in self.frames]
        att_lat = [f.attacked_latency for f in self.frames]
        ben_lat = [f.benign_latency for f in self.frames]
        stats = LatencyStats(att_lat)
        return {
            "mean_roi_l": float(np.mean(roi_l)),
            "mean_roi_p": float(np.mean(roi_p)),
            "roi_l_of_means": roi_latency(float(np.mean(att_lat)),
                                          float(np.mean(ben_lat))),
            "roi_p_of_means": roi_proposals(
                float(np.mean([f.attacked_pre_nms for f in self.frames])),
                max(float(np.mean([f.benign_pre_nms for f in self.frames])), 1e-9)),
            "asr": attack_success_rate(att_lat, self.asr_threshold_seconds),
            "attacked_rsd_percent": stats.rsd_percent if len(att_lat) > 1 else 0.0,
            "mean_benign_ap": float(np.mean([f.benign_ap for f in self.frames])),
            "mean_attacked_ap": float(np.mean([f.attacked_ap for f in self.frames])),
            "median_attacked_pre_nms": float(np.median(
                [f.attacked_pre_nms for f in self.frames])),
            "median_benign_pre_nms": float(np.median(
                [f.benign_pre_nms for f in self.frames])),
        }

    def to_dict(self) -> dict:
        return {"schema_version": 1, "label": self.label,
                "asr_threshold_seconds": self.asr_threshold_seconds,
                "meta": self.meta,
                "frames": [f.to_dict() for f in self.frames],
                "aggregates": self.aggregates()}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "RunReport":
        with open(path) as fh:
            d = json.load(fh)
        report = cls(label=d["label"],
                     asr_threshold_seconds=d["asr_threshold_seconds"],
                     meta=d.get("meta", {}))
        for f in d["frames"]:
            report.add_frame(FrameRecord(**{k: f[k] for k in (
                "frame", "benign_latency", "attacked_latency", "benign_pre_nms",
                "attacked_pre_nms", "benign_iou_evals", "attacked_iou_evals",
                "benign_detections", "attacked_detections", "benign_ap",
                "attacked_ap")}))
        return report

    def to_csv(self, path):
        if not self.frames:
            raise ValidationError("cannot write an empty report")
        rows = [f.to_dict() for f in self.frames]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
