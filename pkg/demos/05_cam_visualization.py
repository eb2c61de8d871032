"""
Class activation maps along a sequence
======================================

Render the CAM of the true class for each of the three frames, together
with the past and future optical flows of the middle frame. A briefly
trained model is used so the maps have some structure.
"""
import sys
from pathlib import Path

import numpy as np

from ltcamtrap import SynthSpec, TrainConfig, build_benchmark, fit, generate_dataset
from ltcamtrap.trainer import load_frames
from ltcamtrap.viz import render_sequence, sequence_cams

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "cams"

spec = SynthSpec(num_classes=4, head_count=40, decay=0.6,
                 domain_ratio=(3.0, 0.5, 1.0, 1.0), seed=2)
manifest = build_benchmark(generate_dataset(spec, out / "data"), 0.6, seed=2)
model = fit(manifest, TrainConfig(epochs=5, model="tiny", seed=2), out / "run").model

for sample in manifest.split("test")[:3]:
    written = render_sequence(model, manifest, sample, out)
    print(sample.sequence_id, sample.domain, "->", [p.name for p in written])

    # The maps themselves: one per frame at the backbone's output resolution.
    cams = sequence_cams(model, load_frames(manifest, sample), sample.class_label)
    peak = [tuple(int(i) for i in np.unravel_index(np.argmax(c), c.shape)) for c in cams]
    print("  CAM shape", cams.shape[1:], "peak per frame", peak)
