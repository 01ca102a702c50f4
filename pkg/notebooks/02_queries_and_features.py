"""
Query instances and the feature matrix
======================================

Draw one query time per session, split by user and label, and extract the
feature vector each query would see at that moment.
"""

import tempfile
import warnings

import numpy as np

from batterylife.experiment import build_dataset
from batterylife.ingest import load_directory
from batterylife.synth import SynthConfig, generate_world, two_regime

workdir = tempfile.mkdtemp()
generate_world(SynthConfig(n_users=5, days=10, seed=2, battery_period=60, app_period=300), two_regime(), workdir)
traces, _ = load_directory(workdir)

# with few apps in the corpus the app block is padded, which raises a warning
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    ds = build_dataset(traces, seed=2)

print(f"{len(ds.split.train)} training and {len(ds.split.test)} test queries")
print(f"feature width {ds.schema.width}")
for gid, width in ds.schema.group_widths().items():
    print(f"  {gid:4s} {width:4d} columns")

# missing values are imputed with training medians, then every live column is standardized
live = ~ds.preprocessor.passthrough
print("max |mean| after transform", np.abs(ds.Z_train[:, live].mean(axis=0)).max())

# a query's label is the minutes from the query until the 20% event (or until charging)
minutes, observed = ds.labels("train")
print(f"median label {np.median(minutes):.0f} min, {observed.mean():.0%} observed")
