"""
Linear model against tree ensembles
===================================

On a world where the phone flips between a light and a heavy drain regime the
remaining life is not linear in the features, so tree ensembles should win.
"""

import tempfile
import warnings

from batterylife.evaluation import PredictionSet, evaluate
from batterylife.experiment import build_dataset
from batterylife.ingest import load_directory
from batterylife.models import ModelConfig, fit, predict
from batterylife.synth import SynthConfig, generate_world, two_regime

workdir = tempfile.mkdtemp()
generate_world(SynthConfig(n_users=20, days=21, seed=1, battery_period=30, app_period=120,
                           t1_period=300, t2_period=600), two_regime(), workdir)
traces, _ = load_directory(workdir)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    ds = build_dataset(traces, seed=1)

cols = ds.columns("F1-F18")
y, obs = ds.labels("train")
y_test, obs_test = ds.labels("test")
ids = [q.query_id for q in ds.split.test]

# models are trained on observed sessions only; censored labels are lower bounds
print(f"{'model':8s} {'RMSE':>8s} {'tau':>7s} {'C-idx':>7s}")
for kind in ("linear", "tree", "forest", "boost", "boost2"):
    cfg = ModelConfig(kind=kind, n_estimators=30 if kind == "forest" else 100)
    model = fit(ds.Z_train[obs][:, cols], y[obs], cfg)
    rep = evaluate(PredictionSet(ids, predict(model, ds.Z_test[:, cols]), y_test, obs_test))
    print(f"{kind:8s} {rep.rmse:8.1f} {rep.tau:7.3f} {rep.c_index:7.3f}")
