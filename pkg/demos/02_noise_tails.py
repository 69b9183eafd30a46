"""How often does a noise draw push a coordinate past a threshold?

Same total power, three distribution families. Heavy tails matter against
sparse (l1) attacks because they occasionally move single pixels a long way.
"""
import math

import numpy as np

from snaplab import analysis, noise
from snaplab.rng import Rng

D, P = 64, 4.0
threshold = 0.75

for dist in noise.DISTRIBUTIONS:
    spec = noise.make_spec(dist, D, P)
    hist = analysis.noise_magnitude_histogram(spec, threshold, 20_000, Rng(0))
    print(f"{dist:8s} mean fraction of |n_j| > {threshold}: {hist.mean_fraction:.4f}")

# closed forms for the per-coordinate tail at sigma = sqrt(P/D)
t = threshold / math.sqrt(P / D)
print("laplace  exact", round(math.exp(-math.sqrt(2) * t), 4))
print("gaussian exact", round(math.erfc(t / math.sqrt(2)), 4))
print("uniform  exact", round(max(0.0, 1 - t / math.sqrt(3)), 4))

# shaping: put the power where the perturbations live
gamma = np.zeros(D)
gamma[:4] = [9.0, 4.0, 1.0, 1.0]
spec = noise.make_spec("laplace", D, P)
spec.update_from_projections(gamma)
print("shaped sigma^2 on the first 6 coords:", np.round(spec.sigma[:6] ** 2, 3))
