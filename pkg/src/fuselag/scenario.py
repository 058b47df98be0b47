"""Deterministic synthetic scenes, BEV encoding, and a constructed detection head.

The encoder paints each visible object as an oriented Gaussian bump on the
presence channel and carries the regression targets (log-dim ratios, yaw
residual, sub-cell offsets) on wide plateau channels, so the value read at the
peak cell is insensitive to where the object sits inside a cell. A separate
emphasis channel replicates the presence bump at higher amplitude so the
attention dot products favor agents that actually observe an object. The head
is constructed, not trained: a center-surround kernel on the presence channel
turns bump peaks into confident scores while leaving the background quiet, so
benign detections stay sparse and any proposal inflation is attributable to
the injected perturbation.

Channel layout (8 channels):
    0  presence bump (peaks near 1 at the object center)
    1  log length ratio x plateau      3  dim refinement (zero benign)
    2  log width ratio x plateau       5  elevation offset (zero benign)
    4  yaw residual x plateau          7  width refinement (zero benign)
    6  attention emphasis (EMPHASIS_GAIN x presence bump)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .types import (AnchorConfig, FeatureMap, HeadWeights, PoseSE2,
                    ValidationError, wrap_angle)

# reference dims the encoder normalizes against (matches default anchor priors)
REF_LENGTH = 4.5
REF_WIDTH = 2.0
REF_HEIGHT = 1.6

SCORE_GAIN = 30.0
BACKGROUND_SCORE = 0.02
DZ_CHANNEL = 5
DZ_WEIGHT = 0.5
EMPHASIS_CHANNEL = 6
EMPHASIS_GAIN = 3.0
REFINE_GAIN = 7.0  # refinement-channel tap weight on the dim regressors
PLATEAU_SIGMA = 1.2  # meters; flat enough that the peak-cell read is exact
VISIBLE_RANGE = 14.0
FRAME_DT = 0.1


@dataclass
class GridSpec:
    channels: int = 8
    height: int = 64
    width: int = 64
    resolution: float = 0.4

    def to_dict(self) -> dict:
        return {"channels": self.channels, "height": self.height,
                "width": self.width, "resolution": self.resolution}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**d)


@dataclass
class ObjectTrack:
    """Straight-line object: world center at frame f is center + velocity * f * dt."""

    x: float
    y: float
    z: float
    length: float
    width: float
    height: float
    yaw: float
    vx: float
    vy: float

    def center_at(self, frame: int) -> tuple[float, float]:
        t = frame * FRAME_DT
        return self.x + self.vx * t, self.y + self.vy * t

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("x", "y", "z", "length", "width", "height", "yaw", "vx", "vy")}


@dataclass
class Scenario:
    seed: int
    n_frames: int
    grid: GridSpec
    agent_poses: list  # [agent][frame] -> PoseSE2
    objects: list = field(default_factory=list)
    victim_index: int = 0
    attacker_index: int = 1

    @property
    def n_agents(self) -> int:
        return len(self.agent_poses)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "n_frames": self.n_frames,
            "grid": self.grid.to_dict(),
            "agent_poses": [[{"x": p.x, "y": p.y, "yaw": p.yaw} for p in traj]
                            for traj in self.agent_poses],
            "objects": [o.to_dict() for o in self.objects],
            "victim_index": self.victim_index,
            "attacker_index": self.attacker_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            seed=d["seed"],
            n_frames=d["n_frames"],
            grid=GridSpec.from_dict(d["grid"]),
            agent_poses=[[PoseSE2(p["x"], p["y"], p["yaw"]) for p in traj]
                         for traj in d["agent_poses"]],
            objects=[ObjectTrack(**o) for o in d["objects"]],
            victim_index=d["victim_index"],
            attacker_index=d["attacker_index"],
        )

    def ground_truth(self, frame: int) -> list[dict]:
        """World-frame object boxes at a frame, for AP evaluation."""
        out = []
        for o in self.objects:
            cx, cy = o.center_at(frame)
            out.append({"x": cx, "y": cy, "z": o.z, "length": o.length,
                        "width": o.width, "height": o.height, "yaw": o.yaw})
        return out


def generate_scenario(seed: int, n_agents: int = 2, n_objects: int = 3,
                      n_frames: int = 20, grid: GridSpec | None = None) -> Scenario:
    """Seeded scene: agents on gentle arcs, objects on straight lines."""
    if n_agents < 2:
        raise ValidationError("a scenario needs at least 2 agents")
    rng = np.random.default_rng(seed)
    grid = grid or GridSpec()

    # agents orbit the scene so every frame brings a multi-cell pose change
    # (translation plus rotation) while the objects stay inside every grid
    agent_poses = []
    for a in range(n_agents):
        orbit_r = rng.uniform(4.5, 5.5)
        phase = rng.uniform(0, 2 * math.pi)
        direction = 1.0 if rng.random() < 0.5 else -1.0
        speed = rng.uniform(5.0, 8.0)
        omega = direction * speed * FRAME_DT / orbit_r  # rad per frame
        traj = []
        for f in range(n_frames):
            ang = phase + omega * f
            traj.append(PoseSE2(orbit_r * math.cos(ang),
                                orbit_r * math.sin(ang),
                                wrap_angle(ang + direction * math.pi / 2)))
        agent_poses.append(traj)

    # rejection-sample object tracks so plateau channels never overlap
    objects: list[ObjectTrack] = []
    min_separation = 4.5
    attempts = 0
    while len(objects) < n_objects:
        attempts += 1
        if attempts > 10000:
            raise ValidationError(
                "could not place objects with the required separation; "
                "reduce n_objects")
        ang = rng.uniform(0, 2 * math.pi)
        r = rng.uniform(2.0, 5.0)
        speed = rng.uniform(0.0, 0.75)
        vdir = rng.uniform(0, 2 * math.pi)
        candidate = ObjectTrack(
            x=r * math.cos(ang), y=r * math.sin(ang),
            z=rng.uniform(1.3, 1.7),
            length=rng.uniform(3.8, 5.5),
            width=rng.uniform(1.7, 2.2),
            height=rng.uniform(1.5, 1.8),
            yaw=rng.uniform(-math.pi, math.pi),
            vx=speed * math.cos(vdir), vy=speed * math.sin(vdir))
        ok = all(
            math.dist(candidate.center_at(f), other.center_at(f)) >= min_separation
            for other in objects for f in range(n_frames))
        if ok:
            objects.append(candidate)

    return Scenario(seed=seed, n_frames=n_frames, grid=grid,
                    agent_poses=agent_poses, objects=objects)


def _wrap_half_pi(a: float) -> float:
    """Wrap an angle to (-pi/2, pi/2] (boxes are symmetric under pi)."""
    a = math.fmod(a, math.pi)
    if a <= -math.pi / 2:
        a += math.pi
    elif a > math.pi / 2:
        a -= math.pi
    return a


def encode_bev_features(scenario: Scenario, frame: int, agent_id: int) -> FeatureMap:
    """Synthetic BEV encoder: one oriented Gaussian bump per visible object."""
    if frame >= scenario.n_frames:
        raise ValidationError("frame index out of range")
    if not 0 <= agent_id < scenario.n_agents:
        raise ValidationError(f"unknown agent {agent_id}")
    grid = scenario.grid
    pose = scenario.agent_poses[agent_id][frame]
    data = np.zeros((grid.channels, grid.height, grid.width))

    cols, rows = np.meshgrid(np.arange(grid.width), np.arange(grid.height))
    cell_x = (cols - (grid.width - 1) / 2.0) * grid.resolution
    cell_y = (rows - (grid.height - 1) / 2.0) * grid.resolution

    ca, sa = math.cos(pose.yaw), math.sin(pose.yaw)
    for obj in scenario.objects:
        wx, wy = obj.center_at(frame)
        # world -> agent frame
        lx = ca * (wx - pose.x) + sa * (wy - pose.y)
        ly = -sa * (wx - pose.x) + ca * (wy - pose.y)
        if math.hypot(lx, ly) > VISIBLE_RANGE:
            continue
        yaw_local = wrap_angle(obj.yaw - pose.yaw)
        cy, sy = math.cos(yaw_local), math.sin(yaw_local)
        dx = cell_x - lx
        dy = cell_y - ly
        u = cy * dx + sy * dy
        v = -sy * dx + cy * dy
        s_l = min(max(obj.length / 24.0, 0.18), 0.22)
        s_w = min(max(obj.width / 10.5, 0.18), 0.22)
        bump = np.exp(-0.5 * ((u / s_l) ** 2 + (v / s_w) ** 2))
        plateau = np.exp(-0.5 * (dx ** 2 + dy ** 2) / PLATEAU_SIGMA ** 2)

        data[0] += bump
        data[1] += plateau * math.log(obj.length / REF_LENGTH)
        data[2] += plateau * math.log(obj.width / REF_WIDTH)
        data[4] += plateau * _wrap_half_pi(yaw_local)
        data[EMPHASIS_CHANNEL] += EMPHASIS_GAIN * bump

    return FeatureMap(agent_id=agent_id, timestamp=frame, pose=pose,
                      data=data, resolution=grid.resolution)


def synth_head_weights(anchors: AnchorConfig, channels: int = 8) -> HeadWeights:
    """Constructed head: center-surround peak detector plus pass-through regression.

    A unit presence bump centered on a cell activates exactly that cell; the
    regression outputs read the plateau channels at the cell center, shifted per
    anchor prior. The dimension outputs additionally read the refinement
    channels (zero on benign features) so a feature-space adversary has the
    same degrees of freedom a trained head would expose.
    """
    b = anchors.num_anchors
    kernels = np.zeros((8 * b, channels, 3, 3))
    bias = np.zeros(8 * b)
    score_bias = math.log(BACKGROUND_SCORE / (1.0 - BACKGROUND_SCORE))

    for a in range(b):
        # objectness: center-surround (zero-sum) on the presence channel
        kernels[a, 0] = -SCORE_GAIN / 8.0
        kernels[a, 0, 1, 1] = SCORE_GAIN
        bias[a] = score_bias

        base = b + 7 * a
        # dx, dy stay zero: boxes decode at cell centers
        kernels[base + 2, DZ_CHANNEL, 1, 1] = DZ_WEIGHT
        kernels[base + 3, 1, 1, 1] = 1.0
        kernels[base + 3, 3, 1, 1] = REFINE_GAIN
        bias[base + 3] = math.log(REF_LENGTH / anchors.length[a])
        kernels[base + 4, 2, 1, 1] = 1.0
        kernels[base + 4, 3, 1, 1] = 1.0
        kernels[base + 4, 7, 1, 1] = REFINE_GAIN
        bias[base + 4] = math.log(REF_WIDTH / anchors.width[a])
        bias[base + 5] = math.log(REF_HEIGHT / anchors.height[a])
        kernels[base + 6, 4, 1, 1] = 1.0
        bias[base + 6] = -anchors.yaw[a]

    return HeadWeights(kernels=kernels, bias=bias, num_anchors=b)
