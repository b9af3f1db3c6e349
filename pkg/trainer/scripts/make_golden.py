"""Regenerate golden/losses.json from the evaluation package.

The trainer's loss implementations must agree with the evaluation metrics to
1e-6 on identical inputs; this script freezes reference values for a seeded
set of random cases.

Usage: python3 scripts/make_golden.py  (from the trainer directory)
"""

import json
from pathlib import Path

import numpy as np

from refmatte.metrics import (
    coarse_loss,
    loss_attenuation,
    loss_flow_epe,
    loss_mask_ce,
    loss_reconstruction,
    multiscale_loss,
    refine_loss,
)

rng = np.random.default_rng(20240817)
cases = []
for i in range(6):
    h = w = 8
    prob = rng.random((h, w))
    gt_mask = rng.integers(0, 2, (h, w)).astype(float)
    att = rng.random((h, w))
    gt_att = rng.random((h, w))
    flow = rng.uniform(-6, 6, (h, w, 2))
    gt_flow = rng.uniform(-6, 6, (h, w, 2))
    valid = (rng.random((h, w)) > 0.2).astype(int)
    recon = rng.random((h, w, 3))
    target = rng.random((h, w, 3))
    terms = rng.random(4)
    scales = rng.random(4)
    cases.append(
        {
            "prob": prob.tolist(),
            "gt_mask": gt_mask.tolist(),
            "att": att.tolist(),
            "gt_att": gt_att.tolist(),
            "flow": flow.tolist(),
            "gt_flow": gt_flow.tolist(),
            "valid": valid.tolist(),
            "recon": recon.tolist(),
            "target": target.tolist(),
            "terms": terms.tolist(),
            "scales": scales.tolist(),
            "expected": {
                "mask_ce": loss_mask_ce(prob, gt_mask),
                "attenuation_mse": loss_attenuation(att, gt_att),
                "flow_epe": loss_flow_epe(flow, gt_flow),
                "flow_epe_masked": loss_flow_epe(flow, gt_flow, mask=valid.astype(bool)),
                "reconstruction": loss_reconstruction(recon, target),
                "coarse": coarse_loss(*terms),
                "multiscale": multiscale_loss(scales),
                "refine": refine_loss(terms[0], terms[1]),
            },
        }
    )

out = Path(__file__).resolve().parent.parent / "golden" / "losses.json"
out.write_text(json.dumps({"cases": cases}, indent=1))
print(f"wrote {out} ({len(cases)} cases)")
