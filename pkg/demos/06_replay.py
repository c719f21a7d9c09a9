"""
Replaying a recorded lane change
================================

The bundled event files hold a lane change in the trajectory CSV schema.
The leader's recorded speed drives the simulation; the ego and follower
start from the recorded state.
"""

# %%
from dataclasses import replace

from sharedlane import bundled
from sharedlane.calib import extract_events, ingest
from sharedlane.experiments import replay
from sharedlane.scenario import data_path

for kind, baseline in (("ngsim", "human_only"), ("tgsim", "automation_only")):
    scn = replace(bundled(kind), seeds=20)
    ev = extract_events(ingest(data_path(f"{kind}_event.csv")), window=(30.0, 30.0))[0]
    rear, front = ev.gaps_at_crossing()
    print(f"{kind}: ego {ev.ego_id} crosses at t = {ev.t_cross:.1f} s, rear gap {rear:.2f} m, front gap {front:.2f} m")
    rep = replay(scn, ev, baseline, beta=2.0)
    for key in ("baseline", "mic"):
        r = rep[key]
        name = baseline if key == "baseline" else "mic_shared"
        print(f"  {name:16s} t_LC {r['t_LC']:.2f} s  gamma_est {r['gamma_est']:.3f}  rms_aE {r['rms_aE']:.3f}")
