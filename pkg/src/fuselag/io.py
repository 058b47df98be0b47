"""File formats: scenario JSON and a small versioned binary feature container.

The feature container is deliberately simple: magic, version, map count, then
per map a fixed header (agent, timestamp, pose, resolution, shape) followed by
the raw float32 payload, everything little-endian. Float32 keeps files small;
loading promotes back to float64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .scenario import Scenario
from .types import FeatureMap, PoseSE2, ProposalBox, ValidationError

FEATURE_MAGIC = b"FBEV"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<qq3d d 3q")  # agent, timestamp, pose, resolution, C H W


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


def load_scenario(path) -> Scenario:
    d = json.loads(Path(path).read_text())
    if d.get("schema_version") != 1:
        raise ValidationError(
            f"unsupported scenario schema_version {d.get('schema_version')!r}")
    return Scenario.from_dict(d)


def save_detections(boxes: list[ProposalBox], path) -> None:
    """JSON fixture format for small detection lists."""
    rows = [{"x": b.x, "y": b.y, "z": b.z, "length": b.length,
             "width": b.width, "height": b.height, "yaw": b.yaw,
             "score": b.score, "source_index": list(b.source_index)}
            for b in boxes]
    Path(path).write_text(json.dumps({"schema_version": 1, "boxes": rows},
                                     indent=2) + "\n")


def load_detections(path) -> list[ProposalBox]:
    d = json.loads(Path(path).read_text())
    if d.get("schema_version") != 1:
        raise ValidationError(
            f"unsupported detections schema_version {d.get('schema_version')!r}")
    return [ProposalBox(x=r["x"], y=r["y"], z=r["z"], length=r["length"],
                        width=r["width"], height=r["height"], yaw=r["yaw"],
                        score=r["score"],
                        source_index=tuple(r["source_index"]))
            for r in d["boxes"]]


def save_features(features: list[FeatureMap], path) -> None:
    """Write feature maps to the binary container."""
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<hq", FEATURE_VERSION, len(features)))
        for f in features:
            fh.write(_HEADER.pack(f.agent_id, f.timestamp,
                                  f.pose.x, f.pose.y, f.pose.yaw,
                                  f.resolution, *f.data.shape))
            fh.write(np.asarray(f.data, dtype="<f4").tobytes())


def load_features(path) -> list[FeatureMap]:
    """Read feature maps back; raises ValidationError on a bad magic or version."""
    with open(path, "rb") as fh:
        if fh.read(4) != FEATURE_MAGIC:
            raise ValidationError(f"{path}: not a feature container")
        version, count = struct.unpack("<hq", fh.read(10))
        if version != FEATURE_VERSION:
            raise ValidationError(f"{path}: unsupported container version {version}")
        out = []
        for _ in range(count):
            (agent, ts, px, py, pyaw, res,
             c, h, w) = _HEADER.unpack(fh.read(_HEADER.size))
            payload = fh.read(c * h * w * 4)
            if len(payload) != c * h * w * 4:
                raise ValidationError(f"{path}: truncated feature payload")
            data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            out.append(FeatureMap(agent_id=agent, timestamp=ts,
                                  pose=PoseSE2(px, py, pyaw),
                                  data=data.reshape(c, h, w), resolution=res))
        return out
