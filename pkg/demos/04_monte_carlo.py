"""
Monte Carlo: human-only versus shared control
=============================================

The same mode-path seeds drive both schemes through a brake-and-recover
leader, and the empirical L2 gain is compared.
"""

# %%
from dataclasses import replace

from sharedlane import bundled
from sharedlane.experiments import monte_carlo

scn = replace(bundled("ngsim"), seeds=30)
out = monte_carlo(scn, ("human_only", "nominal_shared"))

# %%
for scheme, o in out.items():
    g = o.summary.stats["gamma_est"]
    print(f"{scheme:15s} gamma_est mean {g['mean']:.4f}  min {g['min']:.4f}  max {g['max']:.4f}"
          f"  t_LC {o.summary.mean('t_LC'):.2f} s  completion {o.summary.completion_rate:.0%}")

# %%
# One trace, for a closer look.
res = out["nominal_shared"].results[0]
for s in range(0, len(res.t), 200):
    print(f"t={res.t[s]:5.1f}  v_L={res.v_L[s]:5.2f}  v_E={res.v_E[s]:5.2f}  v_F={res.v_F[s]:5.2f}"
          f"  u_H={res.u_H[s]:+.3f}  u_AV={res.u_AV[s]:+.3f}  mode={res.eta[s]}/{res.eta_hat[s]}")
