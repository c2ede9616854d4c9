"""Writes ssim_fixtures.txt: image pairs with their skimage mean SSIM.

Format per fixture: "w h mssim", then one line of w*h values for each image.
"""
import numpy as np
from skimage.metrics import structural_similarity

rng = np.random.default_rng(20240521)
lines = []
for k in range(11):
    h, w = (int(rng.integers(16, 40)), int(rng.integers(16, 40))) if k < 10 else (16, 16)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 127 + 80 * np.sin(xx / (2 + k)) * np.cos(yy / (3 + k % 4))
    a = np.clip(base + rng.normal(0, 5 + 3 * k, (h, w)), 0, 255)
    b = np.clip(base + rng.normal(0, 10 + 2 * k, (h, w)), 0, 255)
    if k % 3 == 0:
        a, b = np.round(a), np.round(b)
    s = structural_similarity(a, b, data_range=255, gaussian_weights=True, sigma=1.5,
                              use_sample_covariance=False, K1=0.01, K2=0.03)
    lines.append(f"{w} {h} {s:.17g}")
    lines.append(" ".join(f"{v:.17g}" for v in a.ravel()))
    lines.append(" ".join(f"{v:.17g}" for v in b.ravel()))
open("ssim_fixtures.txt", "w").write("\n".join(lines) + "\n")
