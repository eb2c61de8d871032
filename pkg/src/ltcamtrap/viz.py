"""Static CAM overlays and flow renderings."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .flowio import flow_to_color

CAM_ALPHA = 0.4


def _colormap(values, name="jet"):
    from matplotlib import colormaps
    return colormaps[name](values)[..., :3] * 255.0


def upsample_cam(cam, size):
    t = torch.as_tensor(np.asarray(cam, dtype=np.float32))[None, None]
    return F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False)[0, 0].numpy()


def normalize_cam(cam):
    """Min-max to [0, 1]; a constant map becomes all zeros."""
    cam = np.asarray(cam, dtype=np.float64)
    lo, hi = cam.min(), cam.max()
    if hi - lo <= 0:
        return np.zeros_like(cam)
    return (cam - lo) / (hi - lo)


def cam_overlay(frame, cam, alpha=CAM_ALPHA, cmap="jet"):
    """Blend a color-mapped CAM over an HxWx3 uint8 frame."""
    frame = np.asarray(frame, dtype=np.float64)
    heat = _colormap(normalize_cam(upsample_cam(cam, frame.shape[:2])), cmap)
    return np.clip(np.rint((1 - alpha) * frame + alpha * heat), 0, 255).astype(np.uint8)


@torch.no_grad()
def sequence_cams(model, frames, class_y, expert="full", image_size=None):
    """CAMs of ``class_y`` for the three frames of a sequence, shape (3, h, w)."""
    from .inference import to_tensor
    from .network import class_activation_map

    model.eval()
    size = None if image_size is None else (image_size, image_size)
    x = torch.cat([to_tensor(f, size) for f in frames])
    out = model(x[None], expert)
    return class_activation_map(model.head(expert), out.features[0], class_y).numpy()


def render_sequence(model, manifest, sample, out_dir, expert="full", image_size=None):
    """Write <id>_cam<j>.png for each frame plus <id>_past.png / <id>_future.png."""
    from .flowio import load_flow_pair
    from .trainer import load_frames

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = load_frames(manifest, sample)
    cams = sequence_cams(model, frames, sample.class_label, expert, image_size)
    written = []
    for j, (frame, cam) in enumerate(zip(frames, cams), start=1):
        p = out / f"{sample.sequence_id}_cam{j}.png"
        Image.fromarray(cam_overlay(frame, cam)).save(p)
        written.append(p)
    flows = load_flow_pair(manifest.root or ".", sample.sequence_id)
    radius = max(np.hypot(*flows.past.transpose(2, 0, 1)).max(),
                 np.hypot(*flows.future.transpose(2, 0, 1)).max())
    for name, flow in (("past", flows.past), ("future", flows.future)):
        p = out / f"{sample.sequence_id}_{name}.png"
        Image.fromarray(flow_to_color(flow, radius)).save(p)
        written.append(p)
    return written
