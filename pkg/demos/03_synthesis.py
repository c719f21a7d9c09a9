"""
Controller synthesis and its certificate
========================================

Solve the semidefinite programs for the automation gains, then check the
answer independently through the dissipation inequality in Lyapunov form.
"""

# %%
import numpy as np

from sharedlane import bundled, certify_dissipation, synthesize
from sharedlane.experiments import prepare

scn = bundled("ngsim")
plant = prepare(scn)
nominal = synthesize(plant.sys, plant.gen, eps_grid=scn.eps_grid)
print(f"nominal: gamma0 = {nominal.gamma:.6f} at eps = {nominal.epsilon:g}")
for k, (K, D) in enumerate(zip(nominal.K_AV, nominal.D_AV), start=1):
    print(f"  observed mode {k}: K_AV = {np.round(K.ravel(), 4)}  D_AV = {D:.4f}")

# %%
# The bound cannot drop below one: a constant leader offset reaches the
# follower undiminished whatever the controller does.
report = certify_dissipation(plant.sys, plant.gen, nominal)
print("certificate:", "PASS" if report.passed else "FAIL", f"(worst eigenvalue {report.worst:.2e})")

# %%
# Charging the automation for its effort trades string stability for driver authority.
for beta in (1.0, 2.0, 5.0):
    g = synthesize(plant.sys, plant.gen, beta=beta, eps_grid=scn.eps_grid)
    ok = certify_dissipation(plant.sys, plant.gen, g).passed
    print(f"beta = {beta:3.1f}: gamma0 = {g.gamma:.4f}  certified = {ok}")
