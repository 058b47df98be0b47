"""Pose-derived affine transforms and bilinear BEV feature warping.

Pixel coordinates are centered on the grid ((W-1)/2, (H-1)/2), so rotations
act about the grid center, matching the ego-centered BEV convention. A
transform derived from poses (p_prev, p_curr) maps centered pixel coordinates
of the current frame to the previous frame; warping a stale feature map into
the current frame therefore samples the input directly at transformed output
coordinates (inverse mapping).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import FeatureMap, PoseSE2, ValidationError, wrap_angle


@dataclass
class AffineTransform2D:
    """Homogeneous 3x3 transform in feature-pixel units."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (3, 3):
            raise ValidationError("affine transform must be 3x3")
        if not np.allclose(self.matrix[2], (0.0, 0.0, 1.0), atol=1e-12):
            raise ValidationError("last row must be (0, 0, 1)")
        if abs(np.linalg.det(self.matrix[:2, :2])) < 1e-12:
            raise ValidationError("transform is singular")
        r = self.matrix[:2, :2]
        if not np.allclose(r @ r.T, np.eye(2), atol=1e-9):
            raise ValidationError("rotation block must be orthonormal")

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(np.eye(3))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.matrix.reshape(-1)]

    @classmethod
    def from_list(cls, values) -> "AffineTransform2D":
        return cls(np.asarray(values, dtype=np.float64).reshape(3, 3))


def derive_transform(pose_prev: PoseSE2, pose_curr: PoseSE2,
                     resolution: float) -> AffineTransform2D:
    """Relative SE(2) motion between two poses, scaled to feature pixels."""
    if resolution <= 0:
        raise ValidationError("resolution must be positive")
    dyaw = wrap_angle(pose_curr.yaw - pose_prev.yaw)
    c, s = math.cos(dyaw), math.sin(dyaw)
    # translation: pose delta rotated into the earlier frame, in pixels
    dx = pose_curr.x - pose_prev.x
    dy = pose_curr.y - pose_prev.y
    cp, sp = math.cos(pose_prev.yaw), math.sin(pose_prev.yaw)
    tx = (cp * dx + sp * dy) / resolution
    ty = (-sp * dx + cp * dy) / resolution
    m = np.array([[c, -s, tx],
                  [s, c, ty],
                  [0.0, 0.0, 1.0]])
    return AffineTransform2D(m)


def compose(a: AffineTransform2D, b: AffineTransform2D) -> AffineTransform2D:
    return AffineTransform2D(a.matrix @ b.matrix)


def invert(a: AffineTransform2D) -> AffineTransform2D:
    return AffineTransform2D(np.linalg.inv(a.matrix))


def warp_array(data: np.ndarray, transform: AffineTransform2D) -> np.ndarray:
    """Inverse-mapping bilinear resample of a (C, H, W) array, zero-filled."""
    c, h, w = data.shape
    m = transform.matrix
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0

    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    px = cols - cx
    py = rows - cy
    src_x = m[0, 0] * px + m[0, 1] * py + m[0, 2] + cx
    src_y = m[1, 0] * px + m[1, 1] * py + m[1, 2] + cy

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    out = np.zeros_like(data)
    for dy_i, dx_i in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi = x0 + dx_i
        yi = y0 + dy_i
        wgt = (fx if dx_i else 1.0 - fx) * (fy if dy_i else 1.0 - fy)
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi_c = np.clip(xi, 0, w - 1)
        yi_c = np.clip(yi, 0, h - 1)
        out += np.where(valid, wgt, 0.0)[None] * data[:, yi_c, xi_c]
    return out


def warp_adjoint(grad: np.ndarray, transform: AffineTransform2D) -> np.ndarray:
    """Adjoint of `warp_array`: scatter output-side gradients back to the input.

    For any arrays g, x: sum(g * warp_array(x, t)) == sum(warp_adjoint(g, t) * x),
    which is what reverse-mode differentiation through the (linear) warp needs.
    """
    c, h, w = grad.shape
    m = transform.matrix
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0

    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    px = cols - cx
    py = rows - cy
    src_x = m[0, 0] * px + m[0, 1] * py + m[0, 2] + cx
    src_y = m[1, 0] * px + m[1, 1] * py + m[1, 2] + cy

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    out = np.zeros_like(grad)
    for dy_i, dx_i in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi = x0 + dx_i
        yi = y0 + dy_i
        wgt = (fx if dx_i else 1.0 - fx) * (fy if dy_i else 1.0 - fy)
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi_c = np.clip(xi, 0, w - 1)
        yi_c = np.clip(yi, 0, h - 1)
        contrib = np.where(valid, wgt, 0.0)[None] * grad
        for ch in range(c):
            np.add.at(out[ch], (yi_c, xi_c), contrib[ch])
    return out


def warp_feature(feature: FeatureMap, transform: AffineTransform2D,
                 new_pose: PoseSE2 | None = None) -> FeatureMap:
    """Warp a stale feature map into the next frame; out-of-bounds reads are zero."""
    warped = warp_array(feature.data, transform)
    return FeatureMap(agent_id=feature.agent_id,
                      timestamp=feature.timestamp + 1,
                      pose=new_pose if new_pose is not None else feature.pose,
                      data=warped,
                      resolution=feature.resolution)
