"""YAML experiment configuration with a versioned schema.

The shipped defaults are the reference operating point of the whole lab:
post-processing (0.2, 0.15, 1000), attack weights lambda1=0.1, lambda2=1.0,
activation target tau=0.2, 10 steps of size 0.1, and a 1.5 s ASR threshold.
A config file may override any subset; unknown keys are rejected so typos
fail loudly instead of silently running the defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .types import AttackConfig, PostprocessConfig, ValidationError

SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    attack: AttackConfig = field(default_factory=AttackConfig)
    post: PostprocessConfig = field(default_factory=PostprocessConfig)
    asr_threshold_seconds: float = 1.5
    ap_iou: float = 0.5

    def __post_init__(self):
        if self.asr_threshold_seconds <= 0:
            raise ValidationError("asr_threshold_seconds must be positive")
        if not 0.0 < self.ap_iou <= 1.0:
            raise ValidationError("ap_iou must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "attack": self.attack.to_dict(),
            "post": {
                "confidence_threshold": self.post.confidence_threshold,
                "iou_threshold": self.post.iou_threshold,
                "max_keep": self.post.max_keep,
            },
            "asr_threshold_seconds": self.asr_threshold_seconds,
            "ap_iou": self.ap_iou,
        }


def _check_keys(section: dict, allowed, where: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown config keys in {where}: {sorted(unknown)}")


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ValidationError("config root must be a mapping")
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported config schema_version {version!r}")
    _check_keys(d, ("schema_version", "attack", "post",
                    "asr_threshold_seconds", "ap_iou"), "config")

    attack_d = dict(d.get("attack") or {})
    _check_keys(attack_d, AttackConfig().to_dict(), "attack")
    post_d = dict(d.get("post") or {})
    _check_keys(post_d, ("confidence_threshold", "iou_threshold", "max_keep"),
                "post")
    return ExperimentConfig(
        attack=AttackConfig(**attack_d),
        post=PostprocessConfig(**post_d),
        asr_threshold_seconds=d.get("asr_threshold_seconds", 1.5),
        ap_iou=d.get("ap_iou", 0.5))


def load_config(path=None) -> ExperimentConfig:
    """Load a YAML config; a missing path returns the shipped defaults."""
    if path is None:
        return ExperimentConfig()
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        return ExperimentConfig()
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
