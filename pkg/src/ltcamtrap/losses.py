"""Training objectives.

All functions take torch tensors and are differentiable. Leading batch
dimensions are allowed everywhere; reductions are a sum over the three frames
and a mean over the batch.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractViolation


@dataclass
class LossConfig:
    gamma: float = 5.0
    alpha: float = 0.85
    beta: float = 0.02
    ssim_window: int = 3
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ConfigError("ssim_window must be odd and >= 1")

    def to_json(self):
        return asdict(self)


def focal_loss(logits, y, gamma=5.0):
    """Frame-summed focal loss.

    logits: (..., 3, C); y: int or (...) labels. Returns the mean over any
    leading batch dims of sum_j -(1 - p_j)^gamma log p_j with p_j the softmax
    probability of the true class in frame j.
    """
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    logp = F.log_softmax(logits, dim=-1)
    y = torch.as_tensor(y, device=logits.device)
    idx = y.reshape(*y.shape, 1, 1).expand(*logp.shape[:-1], 1)
    logp_y = logp.gather(-1, idx).squeeze(-1)  # (..., 3)
    one_minus_p = -torch.expm1(logp_y)
    per_frame = -(one_minus_p ** gamma) * logp_y
    return per_frame.sum(dim=-1).mean()


def warp(image, flow):
    """Backward bilinear warp with clamp-to-edge: out(p) = image(p + flow(p)).

    image: (..., h, w); flow: (..., h, w, 2) holding (dx, dy) in pixels.
    """
    h, w = image.shape[-2:]
    if flow.shape[-3:] != (h, w, 2):
        raise ContractViolation(
            f"flow shape {tuple(flow.shape)} does not match map shape {tuple(image.shape)}")
    ys = torch.arange(h, dtype=flow.dtype, device=flow.device).view(h, 1)
    xs = torch.arange(w, dtype=flow.dtype, device=flow.device).view(1, w)
    x = (xs + flow[..., 0]).clamp(0, w - 1)
    y = (ys + flow[..., 1]).clamp(0, h - 1)
    x0 = x.floor()
    y0 = y.floor()
    wx = (x - x0).to(image.dtype)
    wy = (y - y0).to(image.dtype)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    lead = torch.broadcast_shapes(image.shape[:-2], flow.shape[:-3])
    flat = image.expand(*lead, h, w).reshape(*lead, h * w)

    def sample(yi, xi):
        idx = (yi * w + xi).expand(*lead, h, w).reshape(*lead, h * w)
        return flat.gather(-1, idx).reshape(*lead, h, w)

    top = sample(y0, x0) * (1 - wx) + sample(y0, x1) * wx
    bottom = sample(y1, x0) * (1 - wx) + sample(y1, x1) * wx
    return top * (1 - wy) + bottom * wy


def _pad(x, p):
    # reflection needs p < size; fall back to edge replication on tiny maps
    h, w = x.shape[-2:]
    mode = "reflect" if p < h and p < w else "replicate"
    return F.pad(x, (p, p, p, p), mode=mode)


def _box_mean(x, window):
    lead = x.shape[:-2]
    x4 = x.reshape(-1, 1, *x.shape[-2:])
    p = window // 2
    out = F.avg_pool2d(_pad(x4, p), window, stride=1)
    return out.reshape(*lead, *out.shape[-2:])


def ssim_map(a, b, window=3, c1=0.01 ** 2, c2=0.03 ** 2):
    if window < 1 or window % 2 == 0:
        raise ConfigError("SSIM window must be odd and >= 1")
    mu_a = _box_mean(a, window)
    mu_b = _box_mean(b, window)
    var_a = _box_mean(a * a, window) - mu_a ** 2
    var_b = _box_mean(b * b, window) - mu_b ** 2
    cov = _box_mean(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, window=3, c1=0.01 ** 2, c2=0.03 ** 2):
    """Mean SSIM over (h, w) with a uniform window; leading dims are kept."""
    return ssim_map(a, b, window, c1, c2).mean(dim=(-2, -1))


def joint_minmax(a, b, eps=1e-12):
    """Rescale a pair jointly to [0, 1] per leading index; also returns the
    mask of non-degenerate pairs (max > min)."""
    lo = torch.minimum(a.amin(dim=(-2, -1)), b.amin(dim=(-2, -1)))[..., None, None]
    hi = torch.maximum(a.amax(dim=(-2, -1)), b.amax(dim=(-2, -1)))[..., None, None]
    span = hi - lo
    ok = span > eps
    safe = torch.where(ok, span, torch.ones_like(span))
    return (a - lo) / safe, (b - lo) / safe, ok[..., 0, 0]


def photometric_loss(a, b, alpha=0.85, window=3, c1=0.01 ** 2, c2=0.03 ** 2,
                     normalize=True, reduce=True):
    """alpha/2 (1 - SSIM) + (1 - alpha) mean|a - b| on jointly normalized maps.

    A constant pair (max == min) contributes zero. With ``reduce=False`` the
    per-pair values are returned instead of their mean.
    """
    if normalize:
        a, b, ok = joint_minmax(a, b)
    else:
        ok = torch.ones(a.shape[:-2], dtype=torch.bool, device=a.device)
    s = ssim(a, b, window, c1, c2)
    l1 = (a - b).abs().mean(dim=(-2, -1))
    loss = alpha / 2 * (1 - s) + (1 - alpha) * l1
    loss = torch.where(ok, loss, torch.zeros_like(loss))
    return loss.mean() if reduce else loss


def flow_consistency_loss(cams, past_flow, future_flow, alpha=0.85, window=3,
                          c1=0.01 ** 2, c2=0.03 ** 2):
    """L_ph(M2, warp(M1, f21)) + L_ph(M2, warp(M3, f23)), averaged over the batch.

    cams: (..., 3, h, w); flows: (..., h, w, 2) at CAM resolution.
    """
    if cams.shape[-3] != 3:
        raise ContractViolation("expected CAMs for 3 frames")
    h, w = cams.shape[-2:]
    for f in (past_flow, future_flow):
        if f.shape[-3:] != (h, w, 2):
            raise ContractViolation(
                f"flow resolution {tuple(f.shape[-3:-1])} differs from CAM resolution {(h, w)}")
    m1, m2, m3 = cams.unbind(dim=-3)
    kw = dict(alpha=alpha, window=window, c1=c1, c2=c2, reduce=False)
    loss = (photometric_loss(m2, warp(m1, past_flow), **kw)
            + photometric_loss(m2, warp(m3, future_flow), **kw))
    return loss.mean()


def downscale_flow(flow, size):
    """Average-pool an (..., H, W, 2) flow to (h, w) and rescale displacements."""
    H, W = flow.shape[-3:-1]
    h, w = size
    if H % h or W % w:
        raise ContractViolation(f"flow size {(H, W)} is not a multiple of {(h, w)}")
    if (H, W) == (h, w):
        return flow
    lead = flow.shape[:-3]
    x = flow.reshape(-1, H, W, 2).permute(0, 3, 1, 2)
    x = F.avg_pool2d(x, (H // h, W // w))
    x = x.permute(0, 2, 3, 1).reshape(*lead, h, w, 2)
    factor = torch.tensor([w / W, h / H], dtype=flow.dtype, device=flow.device)
    return x * factor


def total_loss(cls, fc, beta):
    return cls + beta * fc
