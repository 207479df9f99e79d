"""One-sided Jacobi SVD and the rank-k projection used during compression training."""
import time

import numpy as np

from deepfont.numerics import rank_project, svd, truncated_svd

rng = np.random.default_rng(0)
w = rng.normal(size=(64, 40))

res = svd(w)
print("reconstruction error", np.abs(res.reconstruct() - w).max())
print("largest singular values", res.s[:4].round(4))
print("LAPACK agrees to", np.abs(res.s - np.linalg.svd(w, compute_uv=False)).max())

# Best rank-k approximation: the squared error is the sum of the dropped s_i^2.
for k in (1, 5, 20):
    wk = rank_project(w, k)
    print(f"k={k:2d}  ||W - W_k||^2 = {np.sum((w - wk) ** 2):9.4f}   sum s_i^2 (i >= k) = "
          f"{np.sum(res.s[k:] ** 2):9.4f}")

# During rank-constrained training the weight moves a little after each step.
# Reusing the previous singular basis means only pairs touching the top-k
# directions need rotating, which is much cheaper than a cold decomposition.
w = rng.normal(size=(256, 256)) * 0.05
t = time.perf_counter()
top, basis = truncated_svd(w, 16)
print(f"cold 256x256: {time.perf_counter() - t:.2f}s")
wk = top.reconstruct()
for step in range(3):
    w = wk + 1e-3 * rng.normal(size=w.shape)
    t = time.perf_counter()
    top, basis = truncated_svd(w, 16, basis)
    wk = top.reconstruct()
    s = np.linalg.svd(wk, compute_uv=False)
    print(f"warm step {step}: {time.perf_counter() - t:.2f}s  s[16]/s[0] = {s[16] / s[0]:.1e}")
