"""Domain experts and flow-consistent class activation maps for long-tailed
camera-trap recognition, with a synthetic camera-trap data generator."""

from .data_model import (DOMAINS, DatasetManifest, DomainStats, SequenceSample,
                         balance_test_domains, build_benchmark, compute_stats,
                         detect_domain, filter_categories, select_frames,
                         split_train_test)
from .flowio import FlowPair, read_flo, write_flo
from .inference import Prediction, fuse, predict, scale_sub_logits
from .losses import (LossConfig, downscale_flow, flow_consistency_loss, focal_loss,
                     photometric_loss, ssim, total_loss, warp)
from .metrics import EvalReport, evaluate, imbalanced_classes, label_major_minor, shot_split
from .network import (ExpertModel, ModelConfig, build_model, class_activation_map,
                      classifier_weight_sqnorm, forward_expert, preset)
from .synthgen import SynthSpec, analytic_flow, generate_dataset, make_night
from .trainer import TrainConfig, augment, fit, route_batch, scaled_lr, train_step

__version__ = "0.1.0"

__all__ = [
    "DOMAINS", "DatasetManifest", "DomainStats", "SequenceSample", "balance_test_domains",
    "build_benchmark", "compute_stats", "detect_domain", "filter_categories",
    "select_frames", "split_train_test", "FlowPair", "read_flo", "write_flo", "Prediction",
    "fuse", "predict", "scale_sub_logits", "LossConfig", "downscale_flow",
    "flow_consistency_loss", "focal_loss", "photometric_loss", "ssim", "total_loss",
    "warp", "EvalReport", "evaluate", "imbalanced_classes", "label_major_minor",
    "shot_split", "ExpertModel", "ModelConfig", "build_model", "class_activation_map",
    "classifier_weight_sqnorm", "forward_expert", "preset", "SynthSpec", "analytic_flow",
    "generate_dataset", "make_night", "TrainConfig", "augment", "fit", "route_batch",
    "scaled_lr", "train_step",
]
