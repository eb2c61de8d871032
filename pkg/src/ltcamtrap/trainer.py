"""Domain-routed training of the expert model.

The full expert trains on every sequence in a batch and is the only path by
which gradients reach the backbone. Each sub-domain expert trains on its own
domain's sequences, on detached backbone features, with a learning rate
scaled by its domain's share of the training set.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .data_model import DOMAINS
from .errors import ConfigError, ContractViolation, TrainingError
from .flowio import FlowPair, load_flow_pair
from .losses import (LossConfig, downscale_flow, flow_consistency_loss, focal_loss,
                     total_loss)
from .network import EXPERTS, build_model, class_activation_map, preset, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_full: float = 0.01
    epochs: int = 100
    batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 0.0
    image_size: int = 64
    hflip_prob: float = 0.5
    domain_experts: bool = True
    flow_consistency: bool = True
    model: str = "desk"
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr_full <= 0:
            raise ConfigError("lr_full must be positive")

    @property
    def experts(self):
        return EXPERTS if self.domain_experts else ("full",)

    def to_json(self):
        d = asdict(self)
        d["loss"] = self.loss.to_json()
        return d


# full-scale ResNet-50 presets; desk defaults live on TrainConfig itself
WCS_CONFIG = dict(lr_full=0.01, epochs=100, batch_size=48, image_size=256, model="resnet50")
DMZ_CONFIG = dict(lr_full=0.001, epochs=100, batch_size=48, image_size=256, model="resnet50")


def scaled_lr(lr_full, counts, report=None):
    """Learning rate per expert: the full expert keeps ``lr_full``, each
    sub-domain expert gets ``lr_full`` times its domain's share of all
    training sequences. ``counts`` is the C x 2 (day, night) table."""
    counts = np.asarray(counts)
    total = counts.sum()
    if total <= 0:
        raise ConfigError("scaled_lr needs at least one training sequence")
    table = {"full": float(lr_full)}
    for zi, z in enumerate(DOMAINS):
        n = counts[:, zi].sum()
        if n == 0:
            msg = f"no {z} training sequences; the {z} expert gets learning rate 0"
            log.warning(msg)
            if report is not None:
                report.append(msg)
        table[z] = float(lr_full) * float(n) / float(total)
    return table


class RoutedBatch(NamedTuple):
    full: list
    day: list
    night: list

    def indices(self, expert):
        return getattr(self, expert)


def route_batch(domains):
    """Partition batch positions by domain; the full view keeps every position.

    ``domains`` is a list of domain names or of objects with a ``domain``
    attribute (e.g. SequenceSample).
    """
    domains = [getattr(d, "domain", d) for d in domains]
    if not domains:
        raise ContractViolation("cannot route an empty batch")
    day = [i for i, z in enumerate(domains) if z == "day"]
    night = [i for i, z in enumerate(domains) if z == "night"]
    if len(day) + len(night) != len(domains):
        raise ContractViolation(f"unknown domain in batch: {set(domains) - set(DOMAINS)}")
    return RoutedBatch(list(range(len(domains))), day, night)


def resize_flow(flow, size):
    """Bilinearly resample an HxWx2 flow to ``size`` and rescale displacements."""
    H, W = flow.shape[:2]
    h, w = size
    if (H, W) == (h, w):
        return np.array(flow, dtype=np.float32)
    t = torch.from_numpy(np.ascontiguousarray(flow, dtype=np.float32)).permute(2, 0, 1)[None]
    t = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)[0].permute(1, 2, 0)
    return (t * torch.tensor([w / W, h / H])).numpy()


def resize_frames(frames, size):
    frames = np.asarray(frames, dtype=np.float32)
    if frames.shape[1:3] == tuple(size):
        return frames.copy()
    t = torch.from_numpy(frames).permute(0, 3, 1, 2)
    t = F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False)
    return t.permute(0, 2, 3, 1).numpy()


def hflip(frames, flows):
    """Mirror frames and flows left-right; the u component changes sign."""
    frames = np.ascontiguousarray(np.asarray(frames)[:, :, ::-1])
    sign = np.array([-1.0, 1.0], dtype=np.float32)
    past = np.ascontiguousarray(flows.past[:, ::-1] * sign)
    future = np.ascontiguousarray(flows.future[:, ::-1] * sign)
    return frames, FlowPair(past, future)


def augment(frames, flows, rng, size=None, flip_prob=0.5):
    """Resize (bilinear) then flip with probability ``flip_prob``.

    frames: (3, H, W, 3); flows: FlowPair at frame resolution. ``rng`` is a
    numpy Generator or an int seed; exactly one Bernoulli draw is made.
    Returns float32 frames and a FlowPair at the new size.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    frames = np.asarray(frames)
    if size is None:
        size = frames.shape[1:3]
    size = (size, size) if isinstance(size, int) else tuple(size)
    out = resize_frames(frames, size)
    flows = FlowPair(resize_flow(flows.past, size), resize_flow(flows.future, size))
    if rng.random() < flip_prob:
        out, flows = hflip(out, flows)
    return out, flows


# ---------------------------------------------------------------------------
# batches


@dataclass
class SequenceData:
    sequence_id: str
    frames: np.ndarray  # (3, H, W, 3) uint8
    flows: FlowPair
    label: int
    domain: str


@dataclass
class Batch:
    frames: torch.Tensor       # (B, 3, 3, H, W) in [0, 1]
    labels: torch.Tensor       # (B,)
    past: torch.Tensor         # (B, H, W, 2)
    future: torch.Tensor
    domains: list
    ids: list

    def __len__(self):
        return len(self.ids)


def load_frames(manifest, sample):
    arrays = []
    for p in sample.frame_paths:
        with Image.open(manifest.resolve(p)) as im:
            arrays.append(np.asarray(im.convert("RGB")))
    return np.stack(arrays)


def load_sequences(manifest, split="train"):
    data = []
    for s in manifest.split(split):
        try:
            flows = load_flow_pair(manifest.root or ".", s.sequence_id)
        except FileNotFoundError as e:
            raise FileNotFoundError(f"sequence {s.sequence_id}: {e}") from e
        data.append(SequenceData(s.sequence_id, load_frames(manifest, s), flows,
                                 s.class_label, s.domain))
    return data


def make_batch(items, size, rng=None, flip_prob=0.5):
    """Augment and stack SequenceData items. No augmentation when rng is None."""
    frames, past, future = [], [], []
    for it in items:
        if rng is None:
            f, fl = augment(it.frames, it.flows, 0, size, flip_prob=0.0)
        else:
            f, fl = augment(it.frames, it.flows, rng, size, flip_prob)
        frames.append(f)
        past.append(fl.past)
        future.append(fl.future)
    frames = torch.from_numpy(np.stack(frames) / np.float32(255.0)).permute(0, 1, 4, 2, 3)
    return Batch(
        frames=frames.contiguous(),
        labels=torch.tensor([it.label for it in items], dtype=torch.long),
        past=torch.from_numpy(np.stack(past)),
        future=torch.from_numpy(np.stack(future)),
        domains=[it.domain for it in items],
        ids=[it.sequence_id for it in items],
    )


# ---------------------------------------------------------------------------
# step


def expert_losses(model, batch, config, experts=None):
    """Loss tensor per trained expert on its routed subset (absent if the subset is empty).

    Sub-domain experts see detached backbone features, so their losses
    cannot reach the backbone.
    """
    experts = config.experts if experts is None else experts
    routed = route_batch(batch.domains)
    feats = model.extract(batch.frames)
    lc = config.loss
    out = {}
    for name in experts:
        idx = routed.indices(name)
        if not idx:
            continue
        if name == "full":
            f, y = feats, batch.labels
            past, future = batch.past, batch.future
        else:
            sel = torch.tensor(idx)
            f, y = feats[sel].detach(), batch.labels[sel]
            past, future = batch.past[sel], batch.future[sel]
        res = model.run_head(name, f)
        cls = focal_loss(res.logits, y, lc.gamma)
        if config.flow_consistency:
            cams = class_activation_map(model.head(name), res.features, y)
            hw = tuple(cams.shape[-2:])
            fc = flow_consistency_loss(
                cams, downscale_flow(past, hw), downscale_flow(future, hw),
                alpha=lc.alpha, window=lc.ssim_window, c1=lc.c1, c2=lc.c2)
            out[name] = total_loss(cls, fc, lc.beta)
        else:
            out[name] = cls
    return out


def build_optimizer(model, config, lr_table):
    """SGD with one parameter group per trained expert; the backbone rides
    with the full expert."""
    groups = [{"params": list(model.backbone.parameters()) + list(model.head("full").parameters()),
               "lr": lr_table["full"], "name": "full"}]
    if config.domain_experts:
        for z in DOMAINS:
            groups.append({"params": list(model.head(z).parameters()),
                           "lr": lr_table[z], "name": z})
    return torch.optim.SGD(groups, lr=lr_table["full"], momentum=config.momentum,
                           weight_decay=config.weight_decay)


def train_step(model, optimizer, batch, config, experts=None):
    """One optimization step; returns {expert: float loss} for trained experts."""
    model.train()
    losses = expert_losses(model, batch, config, experts)
    values = {k: v.item() for k, v in losses.items()}
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        raise TrainingError(f"non-finite loss for experts {bad} on batch {batch.ids}",
                            batch.ids)
    optimizer.zero_grad(set_to_none=True)
    if losses:
        sum(losses.values()).backward()
        optimizer.step()
    return values


# ---------------------------------------------------------------------------
# loop


@dataclass
class FitResult:
    model: torch.nn.Module
    history: list
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path


def fit(manifest, config, output_dir, model_config=None):
    """Train on the manifest's train split and write checkpoints plus a JSONL log.

    Outputs in ``output_dir``: ``train_log.jsonl`` (one record per epoch),
    ``model_final.pt`` and ``model_best.pt`` (lowest full-expert epoch loss).
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_sequences(manifest, "train")
    if not data:
        raise ConfigError("manifest has no training sequences")
    if model_config is None:
        model_config = preset(config.model, manifest.num_classes, seed=config.seed)
    if model_config.num_classes != manifest.num_classes:
        raise ConfigError("model num_classes differs from the manifest")
    warnings = []
    lr_table = scaled_lr(config.lr_full, manifest.counts, report=warnings)

    torch.manual_seed(config.seed)
    model = build_model(model_config)
    optimizer = build_optimizer(model, config, lr_table)
    extra = {"train_config": config.to_json(), "lr_table": lr_table,
             "class_names": list(manifest.class_names)}

    log_path = out / "train_log.jsonl"
    final_path, best_path = out / "model_final.pt", out / "model_best.pt"
    history, best = [], math.inf
    size = (config.image_size, config.image_size)
    with open(log_path, "w") as logf:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            rng = np.random.default_rng([config.seed, epoch])
            order = rng.permutation(len(data))
            sums = {k: 0.0 for k in EXPERTS}
            seen = {k: 0 for k in EXPERTS}
            for start in range(0, len(order), config.batch_size):
                items = [data[i] for i in order[start:start + config.batch_size]]
                batch = make_batch(items, size, rng, config.hflip_prob)
                routed = route_batch(batch.domains)
                for name, value in train_step(model, optimizer, batch, config).items():
                    n = len(routed.indices(name))
                    sums[name] += value * n
                    seen[name] += n
            record = {"epoch": epoch}
            for k in EXPERTS:
                record[f"L_{k}"] = sums[k] / seen[k] if seen[k] else None
            record["lr_table"] = lr_table
            record["wallclock_s"] = round(time.perf_counter() - t0, 3)
            history.append(record)
            logf.write(json.dumps(record) + "\n")
            logf.flush()
            log.info("epoch %d: %s", epoch, {k: record[f"L_{k}"] for k in EXPERTS})
            if record["L_full"] < best:
                best = record["L_full"]
                save_checkpoint(best_path, model, {**extra, "epoch": epoch})
    save_checkpoint(final_path, model, {**extra, "epoch": config.epochs})
    for w in warnings:
        log.warning(w)
    return FitResult(model.eval(), history, final_path, best_path, log_path)
