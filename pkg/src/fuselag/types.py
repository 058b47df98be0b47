"""Core value types shared across the pipeline, attack, and benchmark modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class StructuralError(ValueError):
    """Shapes or channel counts are inconsistent between components."""


class ValidationError(ValueError):
    """Input values violate a documented precondition."""


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class PoseSE2:
    """Planar pose: position in meters, yaw in radians (normalized to (-pi, pi])."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))


@dataclass
class FeatureMap:
    """Dense C x H x W BEV feature grid attached to an agent, frame, and pose."""

    agent_id: int
    timestamp: int
    pose: PoseSE2
    data: np.ndarray  # float64, shape (C, H, W)
    resolution: float  # meters per grid cell

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise StructuralError(f"feature data must be C x H x W, got {self.data.shape}")
        if self.resolution <= 0:
            raise ValidationError("resolution must be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("feature data contains non-finite entries")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass
class AnchorConfig:
    """Per-cell anchor priors for the detection head."""

    num_anchors: int = 1
    length: tuple[float, ...] = (4.5,)
    width: tuple[float, ...] = (2.0,)
    height: tuple[float, ...] = (1.6,)
    yaw: tuple[float, ...] = (0.0,)
    z_center: float = 1.5
    resolution: float = 0.4

    def __post_init__(self):
        if self.num_anchors < 1:
            raise ValidationError("num_anchors must be >= 1")
        for dims in (self.length, self.width, self.height, self.yaw):
            if len(dims) != self.num_anchors:
                raise StructuralError("per-anchor priors must have num_anchors entries")
        if min(self.length) <= 0 or min(self.width) <= 0 or min(self.height) <= 0:
            raise ValidationError("anchor prior dims must be positive")
        if self.resolution <= 0:
            raise ValidationError("resolution must be positive")


@dataclass
class HeadWeights:
    """Convolutional inference head: C input channels -> B score + 7B regression channels.

    ``kernels`` has shape (out_channels, C, k, k) with odd k; the first B output
    channels are objectness logits (sigmoid applied downstream), the remaining 7B
    are regression deltas ordered (dx, dy, dz, dl, dw, dh, dyaw) per anchor.
    """

    kernels: np.ndarray
    bias: np.ndarray
    num_anchors: int

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernels.ndim != 4:
            raise StructuralError("kernels must be (out, in, k, k)")
        k = self.kernels.shape[2]
        if k != self.kernels.shape[3] or k % 2 == 0:
            raise StructuralError("kernel spatial size must be a small odd integer")
        if self.kernels.shape[0] != 8 * self.num_anchors:
            raise StructuralError("head must emit 8 channels per anchor (1 score + 7 deltas)")
        if self.bias.shape != (self.kernels.shape[0],):
            raise StructuralError("bias shape must match output channels")

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]


@dataclass
class RawPrediction:
    """Head output: sigmoid scores (B, H, W) and regression deltas (7B, H, W)."""

    scores: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.scores.ndim != 3 or self.deltas.ndim != 3:
            raise StructuralError("scores/deltas must be 3-d arrays")
        b, h, w = self.scores.shape
        if self.deltas.shape != (7 * b, h, w):
            raise StructuralError("deltas must have 7 channels per score channel")
        if self.scores.min() < 0.0 or self.scores.max() > 1.0:
            raise ValidationError("scores must lie in [0, 1]")


@dataclass
class ProposalBox:
    """Decoded 3D box with confidence; the unit NMS operates on."""

    x: float
    y: float
    z: float
    length: float
    width: float
    height: float
    yaw: float
    score: float
    source_index: tuple[int, int, int]  # (anchor, row, col)


@dataclass
class NmsStats:
    input_count: int
    iou_evaluations: int
    iterations: int
    survivors: int
    wall_time: float

    def check(self):
        m = self.input_count
        if self.iou_evaluations > m * (m - 1) // 2 + m:
            raise ValidationError("iou_evaluations exceeds the pairwise bound")
        if self.survivors > m:
            raise ValidationError("survivors exceed input count")

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "iou_evaluations": self.iou_evaluations,
            "iterations": self.iterations,
            "survivors": self.survivors,
            "wall_time": self.wall_time,
        }


@dataclass
class TimingBreakdown:
    """Wall time per pipeline stage, monotonic clock, seconds."""

    fuse: float = 0.0
    head: float = 0.0
    decode: float = 0.0
    filter: float = 0.0
    nms: float = 0.0

    @property
    def total(self) -> float:
        return self.fuse + self.head + self.decode + self.filter + self.nms

    def to_dict(self) -> dict:
        return {
            "fuse": self.fuse,
            "head": self.head,
            "decode": self.decode,
            "filter": self.filter,
            "nms": self.nms,
            "total": self.total,
        }


@dataclass
class AttackConfig:
    """Hyperparameters of the latency attack and its baselines."""

    tau: float = 0.2
    lambda1: float = 0.1
    lambda2: float = 1.0
    steps: int = 10
    step_size: float = 0.1
    linf_budget: float = 1.0
    l_max: float = 5.0
    w_max: float = 5.0
    z_min: float = 1.0
    z_max: float = 3.0
    surrogate_beta: float = 10.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValidationError("step_size must be positive")
        if self.z_min >= self.z_max:
            raise ValidationError("z_min must be below z_max")
        if self.l_max <= 0 or self.w_max <= 0:
            raise ValidationError("shape bounds must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("loss weights must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "steps": self.steps,
            "step_size": self.step_size,
            "linf_budget": self.linf_budget,
            "l_max": self.l_max,
            "w_max": self.w_max,
            "z_min": self.z_min,
            "z_max": self.z_max,
            "surrogate_beta": self.surrogate_beta,
        }


@dataclass
class PostprocessConfig:
    """Confidence filtering and NMS parameters of the victim pipeline."""

    confidence_threshold: float = 0.2
    iou_threshold: float = 0.15
    max_keep: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValidationError("confidence_threshold must be in [0, 1]")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValidationError("iou_threshold must be in [0, 1]")
        if self.max_keep < 1:
            raise ValidationError("max_keep must be >= 1")


@dataclass
class Perturbation:
    """Feature-space perturbation plus the optimization trace that produced it."""

    delta: np.ndarray
    losses: list = field(default_factory=list)
    pre_nms_counts: list = field(default_factory=list)
