"""Defense-side analyses: post-processing ablation sweeps and subset consensus.

The sweep quantifies how much of the induced slowdown survives when the victim
tightens its confidence threshold, NMS IoU threshold, or proposal cap. The
consensus defense re-runs the full pipeline on randomly sampled collaborator
subsets and compares each result against an ego-only reference, which restores
detection quality at the cost of one attacked-pipeline latency per sampled
subset — the defense amplifies the availability attack it protects against.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .experiment import prepare_frame
from .metrics import roi_latency, roi_proposals
from .pipeline import PipelineResult, run_pipeline
from .scenario import Scenario, synth_head_weights
from .types import (AnchorConfig, AttackConfig, FeatureMap, HeadWeights,
                    PostprocessConfig, TimingBreakdown, ValidationError)


@dataclass
class AblationRow:
    confidence_threshold: float
    iou_threshold: float
    max_keep: int
    roi_l: float
    roi_p: float
    benign_latency: float
    attacked_latency: float
    benign_pre_nms: float
    attacked_pre_nms: float
    attacked_iou_evals: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "confidence_threshold", "iou_threshold", "max_keep", "roi_l",
            "roi_p", "benign_latency", "attacked_latency", "benign_pre_nms",
            "attacked_pre_nms", "attacked_iou_evals")}


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row_for(self, confidence_threshold: float, iou_threshold: float,
                max_keep: int) -> AblationRow:
        for r in self.rows:
            if (r.confidence_threshold == confidence_threshold
                    and r.iou_threshold == iou_threshold
                    and r.max_keep == max_keep):
                return r
        raise ValidationError("no such grid point in the ablation report")

    def to_csv(self, path) -> None:
        if not self.rows:
            raise ValidationError("cannot write an empty ablation report")
        dicts = [r.to_dict() for r in self.rows]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(dicts[0]))
            writer.writeheader()
            writer.writerows(dicts)


def _timed_run(features, head, anchors, post, repeats: int) -> PipelineResult:
    """Min-of-repeats pipeline run: keeps the fastest (least disturbed) timing."""
    best = None
    for _ in range(max(repeats, 1)):
        result = run_pipeline(features, head, anchors, post)
        if best is None or result.timing.total < best.timing.total:
            best = result
    return best


def sweep_postprocess(scenario: Scenario, attack_cfg: AttackConfig,
                      confidence_thresholds, iou_thresholds, max_keep_values,
                      baseline: str = "cp-freezer", use_warp: bool = True,
                      frames=None, repeats: int = 3,
                      head: HeadWeights | None = None,
                      anchors: AnchorConfig | None = None) -> AblationReport:
    """RoI-L / RoI-P over the post-processing hyperparameter grid.

    Perturbations are crafted once per frame (crafting does not depend on the
    victim's post-processing parameters) and every grid point replays the same
    benign and attacked features, so grid points differ only in post-processing.
    Per frame and grid point the pipelines run `repeats` times and the fastest
    run is kept; the row records the median RoI across frames.
    """
    confidence_thresholds = list(confidence_thresholds)
    iou_thresholds = list(iou_thresholds)
    max_keep_values = list(max_keep_values)
    if not (confidence_thresholds and iou_thresholds and max_keep_values):
        raise ValidationError("ablation grid must be non-empty on every axis")

    anchors = anchors or AnchorConfig(resolution=scenario.grid.resolution)
    head = head or synth_head_weights(anchors, scenario.grid.channels)
    geometry.warm_up()

    frames = list(frames) if frames is not None else list(range(1, scenario.n_frames))
    bundles = [prepare_frame(scenario, f, head, anchors, attack_cfg,
                             baseline=baseline, use_warp=use_warp)
               for f in frames]

    report = AblationReport(meta={
        "seed": scenario.seed, "baseline": baseline, "warp": use_warp,
        "frames": frames, "repeats": repeats,
        "confidence_thresholds": confidence_thresholds,
        "iou_thresholds": iou_thresholds,
        "max_keep_values": max_keep_values})

    for conf in confidence_thresholds:
        for iou in iou_thresholds:
            for keep in max_keep_values:
                post = PostprocessConfig(confidence_threshold=conf,
                                         iou_threshold=iou, max_keep=keep)
                roi_ls, roi_ps = [], []
                acc = {"bl": [], "al": [], "bp": [], "ap": [], "ae": []}
                for bundle in bundles:
                    benign = _timed_run(bundle.benign_features, head, anchors,
                                        post, repeats)
                    attacked = _timed_run(bundle.attacked_features, head,
                                          anchors, post, repeats)
                    roi_ls.append(roi_latency(attacked.timing.total,
                                              benign.timing.total))
                    roi_ps.append(roi_proposals(attacked.pre_nms_count,
                                                max(benign.pre_nms_count, 1)))
                    acc["bl"].append(benign.timing.total)
                    acc["al"].append(attacked.timing.total)
                    acc["bp"].append(benign.pre_nms_count)
                    acc["ap"].append(attacked.pre_nms_count)
                    acc["ae"].append(attacked.nms_stats.iou_evaluations)
                report.rows.append(AblationRow(
                    confidence_threshold=conf, iou_threshold=iou, max_keep=keep,
                    roi_l=float(np.median(roi_ls)),
                    roi_p=float(np.median(roi_ps)),
                    benign_latency=float(np.median(acc["bl"])),
                    attacked_latency=float(np.median(acc["al"])),
                    benign_pre_nms=float(np.median(acc["bp"])),
                    attacked_pre_nms=float(np.median(acc["ap"])),
                    attacked_iou_evals=float(np.median(acc["ae"]))))
    return report


def detection_set_jaccard(a, b, iou_threshold: float = 0.5) -> float:
    """Jaccard similarity of two detection sets under greedy IoU matching."""
    if not a and not b:
        return 1.0
    matched = [False] * len(b)
    matches = 0
    for det in sorted(a, key=lambda d: -d.score):
        best, best_j = 0.0, -1
        for j, other in enumerate(b):
            if matched[j]:
                continue
            iou = geometry.rotated_iou(det, other)
            if iou > best:
                best, best_j = iou, j
        if best_j >= 0 and best >= iou_threshold:
            matched[best_j] = True
            matches += 1
    return matches / (len(a) + len(b) - matches)


@dataclass
class ConsensusIteration:
    subset: tuple
    jaccard: float
    accepted: bool
    latency: float


@dataclass
class ConsensusResult:
    detections: list
    timing: TimingBreakdown
    iterations: list = field(default_factory=list)
    accepted_any: bool = False

    def __iter__(self):
        # allow (detections, timing) unpacking
        return iter((self.detections, self.timing))


def robosac_consensus(features: list[FeatureMap], head: HeadWeights,
                      anchors: AnchorConfig, post: PostprocessConfig,
                      n_sampling_iterations: int, subset_size: int,
                      consensus_iou: float = 0.5,
                      accept_threshold: float = 0.7,
                      seed: int = 0) -> ConsensusResult:
    """Sampling-based consensus over collaborator subsets, ego-referenced.

    The ego-only pipeline provides the trusted reference. Each iteration runs
    the full pipeline on the ego plus a random subset of collaborators and is
    accepted when its detection set agrees with the reference at a Jaccard
    similarity of at least `accept_threshold` under `consensus_iou` matching.
    All iterations always run (the defender cannot know in advance which
    collaborators are clean), so the reported timing sums every inner run.
    Falls back to the ego-only detections when no subset reaches consensus.
    """
    if n_sampling_iterations < 1:
        raise ValidationError("n_sampling_iterations must be >= 1")
    if subset_size >= len(features):
        raise ValidationError("subset_size must be below the agent count")
    if subset_size < 0:
        raise ValidationError("subset_size must be non-negative")
    rng = np.random.default_rng(seed)
    geometry.warm_up()

    timing = TimingBreakdown()

    def accumulate(t: TimingBreakdown):
        timing.fuse += t.fuse
        timing.head += t.head
        timing.decode += t.decode
        timing.filter += t.filter
        timing.nms += t.nms

    reference = run_pipeline(features[:1], head, anchors, post)
    accumulate(reference.timing)

    collaborators = list(range(1, len(features)))
    result = ConsensusResult(detections=reference.detections, timing=timing)
    best_size = -1
    for _ in range(n_sampling_iterations):
        subset = tuple(sorted(rng.choice(collaborators, size=subset_size,
                                         replace=False))) if subset_size else ()
        run = run_pipeline([features[0]] + [features[i] for i in subset],
                           head, anchors, post)
        accumulate(run.timing)
        jac = detection_set_jaccard(run.detections, reference.detections,
                                    consensus_iou)
        accepted = jac >= accept_threshold
        result.iterations.append(ConsensusIteration(
            subset=subset, jaccard=jac, accepted=accepted,
            latency=run.timing.total))
        # prefer the largest accepted subset: more agreeing collaborators
        if accepted and len(subset) > best_size:
            result.accepted_any = True
            result.detections = run.detections
            best_size = len(subset)
    return result
