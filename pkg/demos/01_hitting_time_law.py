"""The Wiener first-hitting-time law in a few lines.

A latent health process starts at ``y0 > 0`` and drifts at rate ``zeta``;
the event is the first time it reaches zero.  With positive drift some
paths never arrive, so the law carries a cure fraction.

Run:  python3 demos/01_hitting_time_law.py
"""
import numpy as np

from fhtjoint import FhtParams, cure_rate, fht_mc_oracle, fht_quantile, fht_sample, fht_survival

rng = np.random.default_rng(1)

print("y0    zeta   cure    median   S(5)    sampled median")
for y0, zeta in [(1.0, -1.0), (3.0, -0.5), (1.0, 0.2), (2.0, 0.3)]:
    p = FhtParams(y0, zeta)
    cure = float(cure_rate(p))
    try:
        median = fht_quantile(0.5, p)
    except ValueError:
        median = np.inf  # cure fraction above one half
    x = fht_sample(rng, p, size=200_000)
    print(f"{y0:<5} {zeta:<6} {cure:.3f}  {median:7.3f}  {float(fht_survival(5.0, p)):.3f}   "
          f"{np.median(x):7.3f}")

# never-hit share of simulated Brownian paths against the closed form
p = FhtParams(1.0, 0.5)
t = fht_mc_oracle(p, dt=1e-3, horizon=100.0, n_paths=20_000, rng=rng)
print(f"\nnever-hit share {np.isinf(t).mean():.3f} vs cure rate {float(cure_rate(p)):.3f}")
