"""Desk-scale lab for latency attacks on intermediate-fusion cooperative perception.

The victim pipeline (attention fusion, convolutional head, anchor decoding,
confidence filtering, rotated-box NMS) runs against feature-level adversaries
that inflate the proposal count to blow up post-processing time. The package
also ships the measurement harness, post-processing ablations, and a
subset-consensus defense analysis.
"""

from .types import (AnchorConfig, AttackConfig, FeatureMap, HeadWeights,
                    NmsStats, Perturbation, PoseSE2, PostprocessConfig,
                    ProposalBox, RawPrediction, StructuralError,
                    TimingBreakdown, ValidationError)
from .fusion import apply_inference_head, fuse_attention
from .geometry import nms, rotated_iou
from .pipeline import (PipelineResult, confidence_filter, decode_proposals,
                       run_pipeline)
from .warp import AffineTransform2D, derive_transform, warp_feature
from .scenario import (GridSpec, ObjectTrack, Scenario, encode_bev_features,
                       generate_scenario, synth_head_weights)
from .attack import (LatencyObjective, PgdObjective, PriorArtObjective,
                     bim_optimize, grad_wrt_delta)
from .metrics import (FrameRecord, LatencyStats, RunReport,
                      attack_success_rate, average_precision,
                      fit_complexity_exponent, measure_latency, roi_latency,
                      roi_proposals)
from .experiment import prepare_frame, run_attack_experiment
from .defense import (AblationReport, ConsensusResult, robosac_consensus,
                      sweep_postprocess)
from .config import ExperimentConfig, load_config, save_config

__version__ = "0.1.0"

__all__ = [
    "AffineTransform2D", "AblationReport", "AnchorConfig", "AttackConfig",
    "ConsensusResult", "ExperimentConfig", "FeatureMap", "FrameRecord",
    "GridSpec", "HeadWeights", "LatencyObjective", "LatencyStats", "NmsStats",
    "ObjectTrack", "Perturbation", "PgdObjective", "PipelineResult",
    "PoseSE2", "PostprocessConfig", "PriorArtObjective", "ProposalBox",
    "RawPrediction", "RunReport", "Scenario", "StructuralError",
    "TimingBreakdown", "ValidationError", "apply_inference_head",
    "attack_success_rate", "average_precision", "bim_optimize",
    "confidence_filter", "decode_proposals", "derive_transform",
    "encode_bev_features", "fit_complexity_exponent", "fuse_attention",
    "generate_scenario", "grad_wrt_delta", "load_config", "measure_latency",
    "nms", "prepare_frame", "robosac_consensus", "roi_latency",
    "roi_proposals", "rotated_iou", "run_attack_experiment", "run_pipeline",
    "save_config", "sweep_postprocess", "synth_head_weights", "warp_feature",
    "__version__",
]
