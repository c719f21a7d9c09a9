"""
Calibrating the models from trajectories
========================================

Fit the two-mode driver law, the follower law, the task-difficulty boundary
and the completion thresholds from lane-change events. The bundled file was
generated from the NGSIM-style parameters, so the fit can be checked.
"""

# %%
from dataclasses import replace

from sharedlane import bundled
from sharedlane.calib import calibrate, extract_events, ingest
from sharedlane.scenario import data_path

scn = bundled("ngsim")
events = extract_events(ingest(data_path("ngsim_calibration.csv")))
print(f"{len(events)} events:", [(e.ego_id, e.leader_id, e.follower_id) for e in events])

# %%
# A few restarts are enough on clean data; the CLI default is ten.
res = calibrate(events, td0=replace(scn.td, T_des=1.0), restarts=3)
fit, truth = res.driver, scn.driver
print("a:", [round(x, 4) for x in fit.a], "true", truth.a)
print("b:", [round(x, 4) for x in fit.b], "true", truth.b)
print("curve:", fit.curve, "\ntrue: ", truth.curve)
print(f"T_des = {res.td.T_des:.2f} (delta held at {res.td.delta})")
print(f"thresholds: rear {res.criterion.s_rear_thr:.2f} m, front {res.criterion.s_front_thr:.2f} m")
