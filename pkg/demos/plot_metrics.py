"""
Scoring a soft mask
===================

Three numbers describe a predicted mask against its ground truth: mean
absolute error, weighted F-measure and structure measure. This walk-through
corrupts a perfect prediction step by step and watches them move, then checks
the fast implementations against the slow reference ones.
"""

import numpy as np

from camoseg.metrics import mae, s_measure, weighted_fbeta
from camoseg.mocklab.oracles import oracle_fbw, oracle_smeasure

# a disc on a 64 x 64 canvas
yy, xx = np.mgrid[0:64, 0:64]
gt = (yy - 30) ** 2 + (xx - 34) ** 2 <= 15 ** 2
print(f"foreground covers {gt.mean():.1%} of the image")

# A perfect prediction scores MAE 0, F 1, S 1; an inverted one has MAE 1.
perfect = gt.astype(float)
print("perfect :", mae(perfect, gt), round(weighted_fbeta(perfect, gt), 6), round(s_measure(perfect, gt), 6))
print("inverted:", mae(1 - perfect, gt))

# Knock out a growing share of the object. F drops faster than S, which
# still credits the overall layout.
rng = np.random.default_rng(0)
fg = np.flatnonzero(gt)
rng.shuffle(fg)
for frac in (0.05, 0.2, 0.5):
    pred = perfect.ravel().copy()
    pred[fg[: int(frac * fg.size)]] = 0.0
    pred = pred.reshape(gt.shape)
    print(f"{frac:4.0%} missing: MAE {mae(pred, gt):.3f}  F {weighted_fbeta(pred, gt):.3f}  S {s_measure(pred, gt):.3f}")

# A blurry, shifted guess: soft values are scored as they are, no threshold.
blurry = np.clip(np.roll(perfect, 4, axis=1) * 0.8 + rng.normal(0, 0.1, gt.shape), 0, 1)
print(f"blurry   : MAE {mae(blurry, gt):.3f}  F {weighted_fbeta(blurry, gt):.3f}  S {s_measure(blurry, gt):.3f}")

# The reference versions loop pixel by pixel; they agree to rounding error.
small_gt, small_pred = gt[16:48, 18:50], blurry[16:48, 18:50]
print("F fast vs reference:", weighted_fbeta(small_pred, small_gt), oracle_fbw(small_pred, small_gt))
print("S fast vs reference:", s_measure(small_pred, small_gt), oracle_smeasure(small_pred, small_gt))
