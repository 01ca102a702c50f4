"""
From raw logs to discharging sessions
=====================================

Generate a small synthetic corpus, parse it back, cut it into discharging
sessions and look at the session-level statistics.
"""

import tempfile

import numpy as np

from batterylife.ingest import load_directory
from batterylife.sessions import empirical_cdfs, filter_sessions, label_session, segment_sessions
from batterylife.synth import SynthConfig, commuter, generate_world

# a week of data for four users; the commuter world drains faster in the evening
workdir = tempfile.mkdtemp()
generate_world(SynthConfig(n_users=4, days=7, seed=0, battery_period=60), commuter(), workdir)

# every log in the directory is parsed; bad lines land in the per-log reports
traces, reports = load_directory(workdir)
for kind, rep in sorted(reports.items()):
    print(f"{kind:10s} {rep.n_records:7d} records, {rep.n_errors} bad lines")

# a new session starts after a gap of more than ten minutes or when the level rises
raw = [s for uid in sorted(traces) for s in segment_sessions(traces[uid])]
kept = filter_sessions(raw)
labels = [label_session(s) for s in kept]
print(f"{len(raw)} sessions, {len(kept)} kept after the duration and start-level filters")
print(f"{sum(lab.observed for lab in labels)} reach 20% before the charger goes in")

# empirical distributions of duration, start level, end level and consumption
for name, cdf in empirical_cdfs(kept).items():
    median = cdf.values[np.searchsorted(cdf.fractions, 0.5)]
    print(f"{name:12s} median {median:8.1f}, P(<= median) {cdf(median):.2f}")
