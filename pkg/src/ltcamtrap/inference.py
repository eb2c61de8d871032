"""Single-image prediction by norm-scaled fusion of two experts.

The frame's domain selects the sub-domain expert. Its logits are rescaled by
the ratio of its classifier's weight norm to the full expert's classifier
weight norm, averaged with the full expert's logits, and the argmax is taken.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .data_model import detect_domain
from .errors import DegenerateModelError
from .network import classifier_weight_sqnorm


@dataclass
class Prediction:
    y_pred: int
    fused_logits: np.ndarray
    expert_logits: dict
    domain: str
    scale: float
    experts_used: tuple = field(default=())


def scale_sub_logits(x_z, sqnorm_z, sqnorm_full):
    """x_z * sqrt(sqnorm_z) / sqrt(sqnorm_full)."""
    if sqnorm_full <= 0:
        raise DegenerateModelError("full expert classifier has zero weight norm")
    return np.sqrt(sqnorm_z) / np.sqrt(sqnorm_full) * np.asarray(x_z, dtype=np.float64)


def fuse(x_full, x_sub):
    x_full = np.asarray(x_full, dtype=np.float64)
    x_sub = np.asarray(x_sub, dtype=np.float64)
    if x_full.shape != x_sub.shape:
        raise ValueError(f"logit shapes differ: {x_full.shape} vs {x_sub.shape}")
    return (x_full + x_sub) / 2


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def argmax_class(x):
    """Index of the largest logit; ties go to the lowest index."""
    return int(np.argmax(np.asarray(x)))


def to_tensor(image, size=None):
    """HxWx3 uint8 (or float 0..255) array -> (1, 3, h, w) float tensor in [0, 1]."""
    t = torch.as_tensor(np.asarray(image, dtype=np.float32) / 255.0).permute(2, 0, 1)[None]
    if size is not None and tuple(t.shape[-2:]) != tuple(size):
        t = torch.nn.functional.interpolate(t, size=tuple(size), mode="bilinear",
                                            align_corners=False)
    return t


@torch.no_grad()
def predict(model, image, tolerance=0, image_size=None, domain_experts=True):
    """Classify one HxWx3 image.

    With ``domain_experts=False`` (the single-expert ablation) only the full
    expert's logits are used.
    """
    model.eval()
    z = detect_domain(image, tolerance)
    size = None if image_size is None else (image_size, image_size)
    feats = model.backbone(to_tensor(image, size))
    head_full = model.head("full")
    x_full = head_full(feats)[0][0].double().numpy()
    logits = {"full": x_full}
    if not domain_experts:
        return Prediction(argmax_class(x_full), x_full, logits, z, 0.0, ("full",))
    head_z = model.head(z)
    x_z = head_z(feats)[0][0].double().numpy()
    logits[z] = x_z
    sq_z = classifier_weight_sqnorm(head_z).item()
    sq_full = classifier_weight_sqnorm(head_full).item()
    x_tilde = scale_sub_logits(x_z, sq_z, sq_full)
    x = fuse(x_full, x_tilde)
    return Prediction(argmax_class(x), x, logits, z, float(np.sqrt(sq_z / sq_full)), ("full", z))


def predict_manifest(model, manifest, split="test", per_frame=False, tolerance=0,
                     image_size=None, domain_experts=True):
    """Prediction records for a manifest split.

    One record per sequence using its first frame, or one per frame with
    ``per_frame=True``. Records are dicts with the keys of the prediction
    dump format.
    """
    from .trainer import load_frames

    records = []
    for s in manifest.split(split):
        frames = load_frames(manifest, s)
        for j in (range(3) if per_frame else (0,)):
            p = predict(model, frames[j], tolerance, image_size, domain_experts)
            records.append({
                "sequence_id": s.sequence_id,
                "frame": j + 1,
                "domain": p.domain,
                "y_true": s.class_label,
                "y_pred": p.y_pred,
                "fused_logits": [float(v) for v in p.fused_logits],
            })
    return records


def write_predictions(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")


def read_predictions(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
