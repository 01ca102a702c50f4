"""Remaining battery-life prediction from smartphone telemetry.

The package follows the data flow of a prediction experiment:

* :mod:`batterylife.ingest` parses raw telemetry logs into per-user traces.
* :mod:`batterylife.sessions` cuts discharge sessions and labels them.
* :mod:`batterylife.queries` simulates query times and splits the data.
* :mod:`batterylife.features` computes the F1-F21 feature groups.
* :mod:`batterylife.models` holds the from-scratch regressors.
* :mod:`batterylife.evaluation` scores predictions (RMSE, Kendall's tau,
  concordance index) and runs the bootstrap and stability experiments.
* :mod:`batterylife.synth` generates synthetic corpora with a known truth.
* :mod:`batterylife.cli` chains all of the above into reproducible stages.
"""

__version__ = "0.1.0"
