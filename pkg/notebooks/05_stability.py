"""
Where user history helps
========================

Sessions are grouped into quintiles by how uneven their discharge is.  User
features should help most where the within-session signal is least steady.
"""

import tempfile
import warnings

import numpy as np

from batterylife.evaluation import InsufficientConsumption, session_stability_variance, stability_experiment
from batterylife.experiment import build_dataset
from batterylife.features import QUERY_TIME_GROUPS, SESSION_GROUPS
from batterylife.ingest import load_directory
from batterylife.models import ModelConfig, fit, predict
from batterylife.synth import SynthConfig, commuter, generate_world

workdir = tempfile.mkdtemp()
# leave hours differ between users, so evening drain is hard to place from one session alone
cfg = SynthConfig(n_users=20, days=21, seed=1, battery_period=30, app_period=120, t1_period=300, t2_period=600)
generate_world(cfg, commuter(), workdir)
traces, _ = load_directory(workdir)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    ds = build_dataset(traces, seed=1)

rows = []
for i, q in enumerate(ds.split.train):
    try:
        if q.observed:
            session_stability_variance(q.session)
            rows.append(i)
    except InsufficientConsumption:
        pass
sessions = [ds.split.train[i].session for i in rows]
y = np.array([ds.split.train[i].minutes for i in rows])

sets = {"session": ds.schema.columns_for(QUERY_TIME_GROUPS + SESSION_GROUPS),
        "all": ds.schema.columns_for(list(ds.schema.group_widths()))}
mc = ModelConfig(kind="boost")
rep = stability_experiment(sessions, ds.Z_train[rows], y, sets, lambda a, b, c: predict(fit(a, b, mc), c))

# quintile 0 holds the steadiest sessions
for k, (gain, size) in enumerate(zip(rep.gain(1, 0), rep.group_sizes)):
    print(f"quintile {k}: {size:3d} sessions, tau gain {gain:+.3f}")
