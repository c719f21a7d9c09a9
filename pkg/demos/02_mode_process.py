"""
The driver-mode process
=======================

Hidden mode (what the driver is doing) and observed mode (what the
automation believes), as one continuous-time Markov chain on four states.
"""

# %%
import numpy as np

from sharedlane import bundled
from sharedlane.markov import ObservationParams, build_joint_generator, sample_coupled_paths, sample_path
from sharedlane.metrics import path_observation_quality

scn = bundled("ngsim")
gen = build_joint_generator(scn.rates, ObservationParams(alpha=0.05, q=0.02))
np.set_printoptions(precision=5, suppress=True)
print("joint states:", gen.states)
print(gen.nu)

# %%
# One exact event-driven sample over 20 minutes.
path = sample_path(gen, (1, 1), 1200.0, seed=1)
print(f"{len(path.times) - 1} jumps; first few:")
for t, z in list(zip(path.times, path.states))[:6]:
    print(f"  t = {t:8.2f}  (hidden, observed) = {gen.state(int(z))}")

# %%
# Worse estimation (larger alpha, q) shows up as lower agreement between the
# two coordinates. All settings share one hidden path, so the comparison is paired.
settings = [ObservationParams(a, 0.1) for a in (0.0, 0.1, 0.2, 0.3)]
for obs, p in zip(settings, sample_coupled_paths(scn.rates, settings, (1, 1), 5e4, seed=3)):
    acc, delay = path_observation_quality(p)
    print(f"alpha = {obs.alpha:.1f}  accuracy = {acc:.4f}  follow delay = {delay:.3f} s")
