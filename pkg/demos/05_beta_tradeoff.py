"""
How much should the automation intervene?
=========================================

Sweep the effort weight and watch the intervention ratio, lane-change time
and comfort move together.
"""

# %%
from dataclasses import replace

from sharedlane import bundled
from sharedlane.experiments import sweep_beta

scn = replace(bundled("ngsim"), seeds=20)
rows = sweep_beta(scn, betas=(0.5, 1.0, 2.0, 3.5, 5.0))

# %%
print(f"{'beta':>8} {'gamma0':>8} {'gamma_est':>9} {'r_int':>6} {'t_LC':>6} {'rms_aE':>7} {'cert':>5}")
for r in rows:
    print(f"{str(r['beta']):>8} {r['gamma0']:8.4f} {r['gamma_est']:9.4f} {r['r_int']:6.3f} {r['t_LC']:6.2f}"
          f" {r['rms_aE']:7.3f} {str(r['certified']):>5}")
