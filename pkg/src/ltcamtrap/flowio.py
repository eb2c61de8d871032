"""Middlebury ``.flo`` files and the optical-flow color wheel."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedImageError

FLO_MAGIC = b"PIEH"  # reads as float32 202021.25


@dataclass(frozen=True)
class FlowPair:
    """Past flow f(2->1) and future flow f(2->3), each HxWx2 with (u, v) in pixels."""
    past: np.ndarray
    future: np.ndarray

    def __post_init__(self):
        if self.past.shape != self.future.shape or self.past.shape[-1:] != (2,):
            raise ValueError(f"flow shapes {self.past.shape} / {self.future.shape}")

    @property
    def shape(self):
        return self.past.shape[:2]


def write_flo(path, flow):
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be HxWx2, got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(flow).tobytes())


def read_flo(path):
    with open(path, "rb") as f:
        if f.read(4) != FLO_MAGIC:
            raise MalformedImageError(f"{path}: bad .flo magic")
        w, h = np.frombuffer(f.read(8), dtype="<i4")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != 2 * w * h:
        raise MalformedImageError(f"{path}: expected {2 * w * h} floats, found {data.size}")
    return data.reshape(h, w, 2).astype(np.float32)


def flow_paths(root, sequence_id):
    """Conventional location of a sequence's two flow files under a dataset root."""
    root = Path(root)
    return (root / "flows" / f"{sequence_id}.past.flo",
            root / "flows" / f"{sequence_id}.future.flo")


def load_flow_pair(root, sequence_id):
    past, future = flow_paths(root, sequence_id)
    for p in (past, future):
        if not p.exists():
            raise FileNotFoundError(f"missing flow file for sequence {sequence_id}: {p}")
    return FlowPair(read_flo(past), read_flo(future))


def make_colorwheel():
    """The 55-entry Middlebury color wheel (RY, YG, GC, CB, BM, MR segments)."""
    segments = [(15, 0, 1, +1), (6, 1, 0, -1), (4, 1, 2, +1),
                (11, 2, 1, -1), (13, 2, 0, +1), (6, 0, 2, -1)]
    # each segment holds `full` at 255 and ramps `ramp` up (+1) or down (-1)
    wheel = np.zeros((sum(s[0] for s in segments), 3))
    col = 0
    for n, full, ramp, sign in segments:
        r = np.floor(255 * np.arange(n) / n)
        wheel[col:col + n, full] = 255
        wheel[col:col + n, ramp] = r if sign > 0 else 255 - r
        col += n
    return wheel


def flow_to_color(flow, max_radius=None):
    """Render an HxWx2 flow field as an HxWx3 uint8 image.

    Hue encodes direction, saturation encodes magnitude relative to
    ``max_radius`` (defaults to the field's largest magnitude). Zero flow is
    white.
    """
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[..., 0], flow[..., 1]
    rad = np.hypot(u, v)
    if max_radius is None:
        max_radius = rad.max()
    scale = 1.0 / (max_radius + 1e-5)
    u, v, rad = u * scale, v * scale, rad * scale

    wheel = make_colorwheel()
    ncols = len(wheel)
    a = np.arctan2(-v, -u) / np.pi
    # +pi and -pi are the same direction; pin it to the wheel's first entry
    a = np.where(a >= 1.0, -1.0, a)
    fk = (a + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = fk - k0
    out = np.empty(flow.shape[:-1] + (3,), dtype=np.uint8)
    inside = rad <= 1
    for i in range(3):
        col = (1 - f) * wheel[k0, i] / 255.0 + f * wheel[k1, i] / 255.0
        col = np.where(inside, 1 - rad * (1 - col), col * 0.75)
        out[..., i] = np.floor(255 * col)
    return out
