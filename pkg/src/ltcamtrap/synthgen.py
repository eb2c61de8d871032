"""Synthetic camera-trap sequences with analytic optical flow.

Each sequence is one class-specific sprite moving at a constant integer
velocity over a static, location-specific background. Night sequences are
converted to single-luminance gray so they satisfy ``detect_domain(., 0)``.
Because motion is an exact integer translation, the flow fields written next
to the frames are ground truth rather than an estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data_model import DOMAINS, DatasetManifest, SequenceSample, detect_domain
from .flowio import FlowPair, flow_paths, write_flo

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class SynthSpec:
    """Size and shape of a synthetic dataset.

    Per-class sequence counts follow ``round(head_count * exp(-decay * c))``
    unless ``counts`` gives an explicit C x 2 (day, night) table.
    ``domain_ratio[c]`` is the day:night ratio for class c; values above 1
    bias the class towards day, below 1 towards night.
    """
    num_classes: int = 6
    height: int = 64
    width: int = 64
    head_count: int = 60
    decay: float = 0.3
    domain_ratio: tuple | None = None
    counts: tuple | None = None
    sprite_size: int = 16
    max_velocity: int = 3
    day_brightness: tuple = (0.8, 1.1)
    night_brightness: tuple = (0.35, 0.7)
    background_noise: float = 6.0
    num_locations: int = 8
    seed: int = 0
    class_names: tuple | None = None

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.max_velocity * 4 >= min(self.height, self.width):
            raise ValueError("max_velocity must stay below min(H, W) / 4")
        if self.sprite_size + 4 * self.max_velocity >= min(self.height, self.width):
            raise ValueError("sprite plus two frames of motion does not fit in the image")

    def count_table(self):
        if self.counts is not None:
            table = np.asarray(self.counts, dtype=np.int64)
            if table.shape != (self.num_classes, 2) or (table < 0).any():
                raise ValueError("counts must be a non-negative C x 2 table")
            return table
        ratios = self.domain_ratio or (1.0,) * self.num_classes
        if len(ratios) != self.num_classes:
            raise ValueError("domain_ratio needs one entry per class")
        table = np.zeros((self.num_classes, 2), dtype=np.int64)
        for c in range(self.num_classes):
            n = int(round(self.head_count * math.exp(-self.decay * c)))
            r = float(ratios[c])
            day = int(round(n * r / (1.0 + r)))
            table[c] = day, n - day
        return table

    def names(self):
        if self.class_names is not None:
            return tuple(self.class_names)
        return tuple(f"species_{c:02d}" for c in range(self.num_classes))


def _rng(*key):
    return np.random.default_rng([int(k) for k in key])


def make_night(image, brightness=1.0):
    """Gray IR-style frame: rounded luminance times ``brightness`` in all channels."""
    image = np.asarray(image, dtype=np.float64)
    lum = image[..., :3] @ LUMA
    gray = np.clip(np.rint(lum * brightness), 0, 255).astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=-1)


def class_sprite(class_label, size, seed):
    """Deterministic (rgb, mask) sprite for a class.

    The outline is a star-shaped blob whose radius is a random low-order
    Fourier series in the polar angle; the fill is a two-color stripe
    pattern with class-specific orientation and period.
    """
    rng = _rng(seed, 7919, class_label)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cy = cx = size / 2
    theta = np.arctan2(yy - cy, xx - cx)
    r = np.hypot(yy - cy, xx - cx)
    radius = np.ones_like(theta)
    for k in range(2, 5):
        radius += rng.uniform(-0.25, 0.25) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    mask = r <= radius * size * 0.42
    mask[size // 2 - 1:size // 2 + 1, size // 2 - 1:size // 2 + 1] = True

    angle = rng.uniform(0, np.pi)
    period = rng.uniform(3.0, 8.0)
    phase = (xx * np.cos(angle) + yy * np.sin(angle)) * 2 * np.pi / period
    stripes = (np.sin(phase) > 0)[..., None]
    c1 = rng.integers(40, 256, size=3)
    c2 = rng.integers(0, 216, size=3)
    rgb = np.where(stripes, c1, c2).astype(np.float64)
    return rgb, mask


def location_background(location, height, width, seed):
    """Static smooth-noise background, identical for every sequence at a location."""
    rng = _rng(seed, 104729, location)
    coarse = rng.uniform(0, 1, size=(4, 4, 3))
    tint = rng.uniform(0.3, 0.8, size=3)
    img = Image.fromarray(np.uint8(coarse * 255)).resize((width, height), Image.BILINEAR)
    bg = np.asarray(img, dtype=np.float64) / 255.0
    bg = 60 + 150 * (0.5 * bg + 0.5 * tint)
    # a vertical illumination ramp, as from a sky line
    bg *= np.linspace(1.1, 0.8, height)[:, None, None]
    return bg


def analytic_flow(position_2, sprite_mask, velocity, shape):
    """Exact backward flows for a sprite translating by ``velocity`` per frame.

    ``position_2`` is the (row, col) of the sprite's top-left corner in
    frame 2, ``velocity`` is (vx, vy) in pixels/frame. On the frame-2
    footprint the past flow is -v and the future flow is +v; elsewhere both
    are zero.
    """
    h, w = shape
    past = np.zeros((h, w, 2), dtype=np.float32)
    future = np.zeros((h, w, 2), dtype=np.float32)
    r0, c0 = position_2
    sh, sw = sprite_mask.shape
    rows, cols = np.nonzero(sprite_mask)
    rows, cols = rows + r0, cols + c0
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    rows, cols = rows[inside], cols[inside]
    vx, vy = velocity
    past[rows, cols] = (-vx, -vy)
    future[rows, cols] = (vx, vy)
    return FlowPair(past, future)


def render_sequence(background, sprite_rgb, sprite_mask, position_1, velocity, gain=1.0):
    """Three float RGB frames of the sprite at p1, p1 + v, p1 + 2v."""
    frames = []
    sh, sw = sprite_mask.shape
    vx, vy = velocity
    for j in range(3):
        frame = background.copy()
        r, c = position_1[0] + j * vy, position_1[1] + j * vx
        region = frame[r:r + sh, c:c + sw]
        region[sprite_mask] = sprite_rgb[sprite_mask] * gain
        frames.append(frame)
    return frames


def _sequence_params(spec, class_label, domain, index):
    rng = _rng(spec.seed, 31, class_label, DOMAINS.index(domain), index)
    vmax = spec.max_velocity
    vx, vy = (int(x) for x in rng.integers(-vmax, vmax + 1, size=2))
    size = spec.sprite_size
    # frame-1 corner such that all three placements stay inside the frame
    rows = range(max(0, -2 * vy), spec.height - size - max(0, 2 * vy) + 1)
    cols = range(max(0, -2 * vx), spec.width - size - max(0, 2 * vx) + 1)
    p1 = (int(rng.choice(rows)), int(rng.choice(cols)))
    location = int(rng.integers(spec.num_locations))
    lo, hi = spec.day_brightness if domain == "day" else spec.night_brightness
    brightness = float(rng.uniform(lo, hi))
    gain = float(rng.uniform(0.85, 1.15))
    noise_seed = int(rng.integers(2**31))
    return (vx, vy), p1, location, brightness, gain, noise_seed


def generate_sequence(spec, class_label, domain, index):
    """Frames (3 uint8 HxWx3 arrays), FlowPair and location id of one sequence."""
    velocity, p1, location, brightness, gain, noise_seed = _sequence_params(
        spec, class_label, domain, index)
    bg = location_background(location, spec.height, spec.width, spec.seed)
    if spec.background_noise > 0:
        bg = bg + np.random.default_rng(noise_seed).normal(0, spec.background_noise, bg.shape)
    rgb, mask = class_sprite(class_label, spec.sprite_size, spec.seed)
    frames = render_sequence(bg, rgb, mask, p1, velocity, gain)
    if domain == "night":
        frames = [make_night(np.clip(f, 0, 255), brightness) for f in frames]
    else:
        frames = [np.clip(np.rint(f * brightness), 0, 255).astype(np.uint8) for f in frames]
        for f in frames:
            if detect_domain(f, 0) == "night":
                f[0, 0] = (0, 1, 2)  # keep a day frame recognisably colored
    vx, vy = velocity
    p2 = (p1[0] + vy, p1[1] + vx)
    flows = analytic_flow(p2, mask, velocity, (spec.height, spec.width))
    return frames, flows, f"loc{location:03d}"


def generate_dataset(spec, output_dir):
    """Write frames and flows for every requested sequence; return the manifest.

    Layout under ``output_dir``: ``frames/<id>_<j>.png`` for j = 1..3 and
    ``flows/<id>.past.flo`` / ``flows/<id>.future.flo``. All samples are
    returned unassigned; use :func:`ltcamtrap.data_model.build_benchmark`
    to split them.
    """
    out = Path(output_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "flows").mkdir(parents=True, exist_ok=True)
    table = spec.count_table()
    samples = []
    for c in range(spec.num_classes):
        for zi, domain in enumerate(DOMAINS):
            for k in range(int(table[c, zi])):
                sid = f"c{c:03d}_{domain}_{k:04d}"
                frames, flows, location = generate_sequence(spec, c, domain, k)
                paths = []
                for j, frame in enumerate(frames, start=1):
                    rel = f"frames/{sid}_{j}.png"
                    Image.fromarray(frame).save(out / rel)
                    paths.append(rel)
                past, future = flow_paths(out, sid)
                write_flo(past, flows.past)
                write_flo(future, flows.future)
                samples.append(SequenceSample(
                    sequence_id=sid, frame_paths=tuple(paths), class_label=c,
                    domain=domain, location_id=location))
    return DatasetManifest(samples=samples, class_names=spec.names(), root=out)
