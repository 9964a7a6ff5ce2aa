r"""
Is one condition better than another?
=====================================

Two mean-trait correlations are compared with Fisher's z. With three models
under test, the significance level is Bonferroni-corrected to 0.05 / 3.
"""

import math

from regionablate import stats
from regionablate.stats import CorrelationResult

n = 1676  # test videos
print(f"standard error for two samples of {n}: {stats.standard_error(n, n):.7f}")

face = CorrelationResult(rho=0.62, n=n)
face_bg = CorrelationResult(rho=0.55, n=n)
res = stats.compare_correlations(face, face_bg, alpha=0.05, num_models=3)
print(f"z_obs = {res.z_obs:.2f}, p = {res.p:.3g}, alpha = {res.alpha_corrected:.4f}, "
      f"significant = {res.significant}")

# p is the upper tail of |z_obs|, so swapping the two conditions flips the
# sign of z_obs and leaves p alone.
rev = stats.compare_correlations(face_bg, face)
print(f"swapped: z_obs = {rev.z_obs:.2f}, p = {rev.p:.3g}")

# Reported (z_obs, p) pairs from a comparison table, recomputed from z_obs alone.
for z, p in [(4.91, 4.45e-7), (-1.1, 0.136), (6.83, 4.06e-12), (3.11, 9.35e-4), (-4.2, 1.30e-5)]:
    mine = stats.p_from_z(z)
    star = "*" if stats.significance(mine)[1] else " "
    print(f"z = {z:>5}  reported p = {p:<9.3g} computed p = {mine:<9.3g} {star}")

# Fisher's transform is undefined at |rho| = 1 and says so.
try:
    stats.fisher_z(1.0)
except ArithmeticError as exc:
    print(type(exc).__name__, exc)

print("arctanh(0.5) =", stats.fisher_z(0.5), "=", math.log(3) / 2)
