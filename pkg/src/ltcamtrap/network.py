"""Shared backbone with a full-domain expert and two sub-domain experts.

Each expert is a residual stage, global average pooling and a linear
classifier without bias whose per-class weight columns are multiplied by a
learnable positive scale ``exp(log_scale)``.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractViolation

EXPERTS = ("full", "day", "night")


@dataclass
class ModelConfig:
    num_classes: int
    stem_channels: int = 32
    stage_channels: tuple = (64, 64, 128, 128)
    stage_strides: tuple = (1, 2, 2, 2)
    head_channels: int = 128
    head_stride: int = 1
    num_subdomain_experts: int = 2
    arch: str = "basic"
    seed: int = 0

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.stage_strides = tuple(self.stage_strides)
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.num_subdomain_experts != 2:
            raise ConfigError("only the day/night pair of sub-domain experts is supported")
        if len(self.stage_channels) != len(self.stage_strides):
            raise ConfigError("stage_channels and stage_strides differ in length")
        if self.arch not in ("basic", "resnet50"):
            raise ConfigError(f"unknown arch {self.arch!r}")

    @property
    def output_stride(self):
        if self.arch == "resnet50":
            return 16 * self.head_stride
        s = 2 * self.head_stride
        for st in self.stage_strides:
            s *= st
        return s

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(**d)


PRESETS = {
    # desk scale: 64x64 input -> 4x4 CAM
    "desk": dict(stem_channels=32, stage_channels=(64, 64, 128, 128),
                 stage_strides=(1, 2, 2, 2), head_channels=128),
    "tiny": dict(stem_channels=8, stage_channels=(16, 16, 32, 32),
                 stage_strides=(1, 2, 2, 2), head_channels=32),
    # ResNet-50 trunk (conv1..layer3) shared, layer4-style stage per expert
    "resnet50": dict(arch="resnet50", head_channels=2048, head_stride=2),
}


def preset(name, num_classes, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(num_classes=num_classes, **{**PRESETS[name], **overrides})


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + identity)


def _basic_backbone(cfg):
    layers = [nn.Conv2d(3, cfg.stem_channels, 3, 2, 1, bias=False),
              nn.BatchNorm2d(cfg.stem_channels), nn.ReLU(inplace=True)]
    cin = cfg.stem_channels
    for cout, stride in zip(cfg.stage_channels, cfg.stage_strides):
        layers.append(BasicBlock(cin, cout, stride))
        cin = cout
    return nn.Sequential(*layers), cin


def _resnet50_parts(cfg):
    from torchvision.models import resnet50
    from torchvision.models.resnet import Bottleneck

    net = resnet50(weights=None)
    trunk = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool,
                          net.layer1, net.layer2, net.layer3)

    def head_block():
        down = nn.Sequential(nn.Conv2d(1024, 2048, 1, cfg.head_stride, bias=False),
                             nn.BatchNorm2d(2048))
        return nn.Sequential(Bottleneck(1024, 512, cfg.head_stride, down),
                             Bottleneck(2048, 512), Bottleneck(2048, 512))

    return trunk, head_block


class ExpertOutput(NamedTuple):
    logits: torch.Tensor    # (..., 3, C)
    features: torch.Tensor  # (..., 3, d', h, w)


class ExpertHead(nn.Module):
    """Residual stage -> GAP -> weight-scaled linear classifier."""

    def __init__(self, block, channels, num_classes):
        super().__init__()
        self.block = block
        self.weight = nn.Parameter(torch.empty(channels, num_classes))
        self.log_scale = nn.Parameter(torch.zeros(num_classes))
        nn.init.kaiming_uniform_(self.weight.T, a=5 ** 0.5)

    @property
    def scale(self):
        return self.log_scale.exp()

    def effective_weight(self):
        return self.weight * self.scale

    def features(self, x):
        return self.block(x)

    def classify(self, feats):
        return feats.mean(dim=(-2, -1)) @ self.effective_weight()

    def forward(self, x):
        feats = self.features(x)
        return self.classify(feats), feats


class ExpertModel(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.config = cfg
        if cfg.arch == "resnet50":
            self.backbone, make_block = _resnet50_parts(cfg)
            heads = {name: ExpertHead(make_block(), cfg.head_channels, cfg.num_classes)
                     for name in EXPERTS}
        else:
            self.backbone, cin = _basic_backbone(cfg)
            heads = {name: ExpertHead(BasicBlock(cin, cfg.head_channels, cfg.head_stride),
                                      cfg.head_channels, cfg.num_classes)
                     for name in EXPERTS}
        self.experts = nn.ModuleDict(heads)

    @property
    def num_classes(self):
        return self.config.num_classes

    def head(self, expert_id):
        if expert_id not in self.experts:
            raise ContractViolation(f"unknown expert {expert_id!r}")
        return self.experts[expert_id]

    def extract(self, frames):
        """Backbone features for (..., 3, H, W) images, leading dims preserved."""
        lead = frames.shape[:-3]
        feats = self.backbone(frames.reshape(-1, *frames.shape[-3:]))
        return feats.reshape(*lead, *feats.shape[1:])

    def run_head(self, expert_id, feats):
        lead = feats.shape[:-3]
        logits, maps = self.head(expert_id)(feats.reshape(-1, *feats.shape[-3:]))
        return ExpertOutput(logits.reshape(*lead, -1), maps.reshape(*lead, *maps.shape[1:]))

    def forward(self, frames, expert_id="full"):
        return self.run_head(expert_id, self.extract(frames))


def build_model(cfg):
    """Deterministically initialized model; the RNG state outside is left untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = ExpertModel(cfg)
    return model


def forward_expert(model, frames, expert_id):
    """Per-frame logits and last-stage feature maps of one expert.

    ``frames`` is a (3, 3, H, W) tensor for one sequence or (B, 3, 3, H, W)
    for a batch; frames never interact in the forward path.
    """
    if frames.dim() < 4 or frames.shape[-4] != 3:
        raise ContractViolation(f"expected 3 frames per sequence, got shape {tuple(frames.shape)}")
    return model(frames, expert_id)


def class_activation_map(head, features, class_y):
    """CAM of ``class_y``: effective classifier weights applied across channels.

    ``features`` is (..., d', h, w) and is detached, so gradients of any loss
    on the map reach the classifier weight and scale only. ``class_y`` is an
    int or a tensor of labels matching the leading dims of ``features``.
    """
    w = head.effective_weight()
    C = w.shape[1]
    y = torch.as_tensor(class_y, device=w.device)
    if ((y < 0) | (y >= C)).any():
        raise ContractViolation(f"class index out of range for C={C}")
    feats = features.detach()
    if y.dim() == 0:
        wy = w[:, y]
        return torch.einsum("k,...khw->...hw", wy, feats)
    wy = w[:, y].T  # (B, d')
    extra = feats.dim() - 3 - y.dim()
    wy = wy.reshape(*wy.shape[:-1], *([1] * extra), wy.shape[-1])
    return torch.einsum("...k,...khw->...hw", wy, feats)


def classifier_weight_sqnorm(head):
    """Squared Frobenius norm of the effective (scaled) classifier weights."""
    return head.effective_weight().pow(2).sum()


# ---------------------------------------------------------------------------
# checkpoints


def parameter_manifest(model):
    """Name, shape and dtype of every tensor in the state dict, in order."""
    return [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype).replace("torch.", "")}
            for k, v in model.state_dict().items()]


def save_checkpoint(path, model, extra=None):
    """One ``torch.save`` archive: state dict, model config and the name manifest.

    ``extra`` is an optional JSON-serializable dict stored alongside (the
    trainer records the training switches there).
    """
    payload = {
        "model_config": json.dumps(model.config.to_json(), sort_keys=True),
        "parameter_manifest": json.dumps(parameter_manifest(model)),
        "extra": json.dumps(extra or {}, sort_keys=True),
        "state_dict": model.state_dict(),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (model in eval mode, extra dict)."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    cfg = ModelConfig.from_json(json.loads(payload["model_config"]))
    model = ExpertModel(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, json.loads(payload["extra"])
