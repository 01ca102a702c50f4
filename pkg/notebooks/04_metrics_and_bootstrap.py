"""
Ranking metrics and the shifted bootstrap
=========================================

Kendall's tau and the concordance index on toy data, and a paired test of
whether one prediction set beats another.
"""

import numpy as np

from batterylife.evaluation import (PredictionSet, bootstrap_shift_test, concordance_index,
                                    kendall_tau)

rng = np.random.default_rng(0)
n = 200
minutes = rng.uniform(10, 400, size=n)
observed = rng.random(n) < 0.7

# with no ties and no censoring the C-index is an affine map of tau
p = minutes + rng.normal(0, 50, size=n)
tau = kendall_tau(p, minutes, np.ones(n, dtype=bool))
print(f"tau {tau:.4f}  (tau+1)/2 {(tau + 1) / 2:.4f}  C {concordance_index(p, minutes, np.ones(n, bool)):.4f}")

# a censored row only counts against rows that failed earlier
print("C-index, censored:", round(concordance_index(p, minutes, observed, "harrell"), 4))

ids = [f"q{i}" for i in range(n)]
noisy = PredictionSet(ids, minutes + rng.normal(0, 60, size=n), minutes, observed)
sharp = PredictionSet(ids, minutes + rng.normal(0, 30, size=n), minutes, observed)
for metric in ("rmse", "tau", "c_index"):
    res = bootstrap_shift_test(sharp, noisy, metric, iterations=2000, seed=1)
    print(f"{metric:8s} delta {res.observed_delta:+.4f}  p {res.p_value:.4f}")
