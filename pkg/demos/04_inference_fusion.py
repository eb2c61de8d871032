"""
Norm-scaled fusion at prediction time
=====================================

A sub-domain expert's logits are rescaled by the ratio of its classifier
norm to the full expert's, averaged with the full expert's logits and the
argmax is the label. This walks through one prediction by hand.
"""
import numpy as np
import torch

from ltcamtrap import build_model, classifier_weight_sqnorm, fuse, make_night, predict, preset
from ltcamtrap import scale_sub_logits
from ltcamtrap.inference import argmax_class, to_tensor

# Worked arithmetic first.
print("scale (1, -1) with norms^2 4 and 16:", scale_sub_logits([1.0, -1.0], 4.0, 16.0))
print("fuse (2, 0) and (0, 1):", fuse([2.0, 0.0], [0.0, 1.0]))
print("tie (0.7, 0.7) ->", argmax_class([0.7, 0.7]))

# An untrained model; shrink the night classifier so the rescaling shows.
model = build_model(preset("tiny", 4, seed=0)).eval()
with torch.no_grad():
    model.head("night").weight.mul_(0.25)

rng = np.random.default_rng(0)
day = rng.integers(0, 256, size=(64, 64, 3)).astype(np.uint8)
night = make_night(day, 0.6)

for name, image in (("day", day), ("night", night)):
    p = predict(model, image)
    print(f"{name} image -> domain {p.domain}, experts {p.experts_used}, scale {p.scale:.3f}")

    # The same numbers by hand.
    with torch.no_grad():
        feats = model.backbone(to_tensor(image))
        x_full = model.head("full")(feats)[0][0].double().numpy()
        x_z = model.head(p.domain)(feats)[0][0].double().numpy()
    sq_z = classifier_weight_sqnorm(model.head(p.domain)).item()
    sq_full = classifier_weight_sqnorm(model.head("full")).item()
    x = fuse(x_full, scale_sub_logits(x_z, sq_z, sq_full))
    print("  fused logits", np.round(x, 4), "label", argmax_class(x), "==", p.y_pred)

# Scaling both classifiers by the same factor leaves the rescaled logits alone.
x_z = rng.normal(size=4)
print(scale_sub_logits(x_z, 2.0, 5.0), scale_sub_logits(x_z, 2.0 * 9, 5.0 * 9))
