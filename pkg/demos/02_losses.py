"""
Training losses on small hand-made inputs
=========================================

The classification term is a focal loss summed over the three frames of a
sequence. The flow term warps the class activation maps of the outer frames
onto the middle one and scores the result with an SSIM + L1 photometric loss.
"""
import math

import torch

from ltcamtrap import flow_consistency_loss, focal_loss, photometric_loss, ssim, warp

# With uniform logits over two classes every frame has p = 0.5, so each
# frame contributes (1 - 0.5)^gamma * ln 2.
logits = torch.zeros(3, 2, dtype=torch.float64)
print("focal, gamma=5:", focal_loss(logits, 0, 5.0).item(), "=", 3 * 0.5 ** 5 * math.log(2))
print("focal, gamma=0:", focal_loss(logits, 0, 0.0).item(), "(plain cross-entropy)")

# Confident correct predictions are almost free under a large gamma.
confident = torch.tensor([[4.0, -4.0]] * 3, dtype=torch.float64)
print("confident frames:", focal_loss(confident, 0, 5.0).item())

# Backward warping samples the map at p + flow(p); outside samples clamp to
# the border.
row = torch.tensor([[1.0, 2.0, 3.0, 4.0]], dtype=torch.float64)
left = torch.zeros(1, 4, 2, dtype=torch.float64)
left[..., 0] = -1
print("warp by u=-1:", warp(row, left).tolist())

# SSIM of two constant maps 0 and 1 only keeps the stabilising constants.
a = torch.zeros(4, 4, dtype=torch.float64)
b = torch.ones(4, 4, dtype=torch.float64)
print("ssim(0, 1):", ssim(a, b).item())
print("photometric(0, 1):", photometric_loss(a, b).item())
print("photometric(a, a):", photometric_loss(b, b).item())

# A blob that moves one pixel right per frame. With the correct flows the
# warped outer maps line up with the middle map and the loss is small; with
# zero flow it is not.
yy, xx = torch.meshgrid(torch.arange(12.0), torch.arange(12.0), indexing="ij")
cams = torch.stack([torch.exp(-((xx - 4 - j) ** 2 + (yy - 6) ** 2) / 4) for j in range(3)])
past = torch.zeros(12, 12, 2)
past[..., 0] = -1
future = torch.zeros(12, 12, 2)
future[..., 0] = 1
print("flow term, true flows:", flow_consistency_loss(cams, past, future).item())
print("flow term, zero flows:", flow_consistency_loss(cams, 0 * past, 0 * future).item())
