"""Compare one-step-ahead MAPE of every forecasting method on the
two-regime generator.

Usage: python demos/forecast_comparison.py [n_seeds]
"""

import sys

import numpy as np

from latentdr.forecast import METHODS, ForecastConfig, run_forecast
from latentdr.synthetic import simulate_two_regime


def main(n_seeds=5):
    table = {m: [] for m in METHODS}
    for seed in range(n_seeds):
        series = simulate_two_regime(seed=seed).series
        cut = int(len(series) * 0.75) // 24 * 24
        train, test = series.slice(0, cut), series.slice(cut, len(series))
        cfg = ForecastConfig(seed=seed, max_depth=12, k=10)
        for method in METHODS:
            table[method].append(run_forecast(train, test, method, cfg).mape)
    print(f"{'method':10s} {'mean MAPE %':>12s} {'median':>8s}")
    for method, values in table.items():
        print(f"{method:10s} {np.mean(values):12.2f} {np.median(values):8.2f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
