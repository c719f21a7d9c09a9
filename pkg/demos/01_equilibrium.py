"""
Equilibrium and linearization
=============================

Where the three-vehicle string sits at a given speed, and the per-mode
linear models the controller is designed on.
"""

# %%
import numpy as np

from sharedlane import bundled, find_equilibrium, linearize
from sharedlane.linmjls import check_stabilizable_detectable, numeric_jacobians

scn = bundled("ngsim")
eq = find_equilibrium(scn.driver, scn.follower, 10.0)
print(f"v* = {eq.v_star}  front gap = {eq.s_EL_star:.3f} m  rear gap = {eq.s_FE_star:.3f} m")

# %%
# The human law enters through a 1x4 gain per hidden mode; only the ego's
# speed and front gap matter to the driver.
sys = linearize(scn.driver, scn.follower, eq)
for i, (K, D) in enumerate(zip(sys.K_H, sys.D_H), start=1):
    print(f"mode {i}: K_H = {np.round(K.ravel(), 4)}  D_H = {D:.3f}")
print("A =\n", np.round(sys.A, 4))

# %%
# Central differences on the nonlinear laws agree with the analytic slopes.
K_fd, F_fd = numeric_jacobians(scn.driver, scn.follower, eq)
print("finite-difference mode-1 row:", np.round(K_fd[0], 6))
check_stabilizable_detectable(sys)
print("PBH checks passed")
