"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import numpy as np
import pytest

from latentdr import causal, cgmm, cli, data, hmm
from latentdr import regressors as rg
from latentdr.forecast import ForecastConfig, run_forecast
from latentdr.synthetic import simulate_two_regime, write_program_files

from acceptance_report import record
from oracles import (brute_force, brute_force_pairwise, likelihood_by_time, random_hmm,
                     svr_dual_violation, two_line_mixture)

START = np.datetime64("2013-01-07T00", "h")


@pytest.fixture(scope="module")
def hmm_fits():
    """50 Baum-Welch fits of the 38-state model on generator data."""
    fits = []
    for seed in range(50):
        series = simulate_two_regime(days=14, seed=1000 + seed).series
        model, trace = hmm.fit_hmm(series, seed=seed)
        fits.append((model, trace, series.consumption))
    return fits


@pytest.fixture(scope="module")
def cgmm_fits():
    """100 two-component fits on the two-line mixture."""
    fits = []
    for seed in range(100):
        X, y = two_line_mixture(seed)
        model, trace = cgmm.fit_cgmm(X, y, K=2, seed=seed)
        fits.append((model, trace))
    return fits


@pytest.fixture(scope="module")
def semisynthetic_runs():
    runs = []
    for seed in range(5):
        series = simulate_two_regime(days=90, seed=seed).series
        runs.append(causal.run_semisynthetic(series, START + np.timedelta64(60 * 24, "h"), "ols+hmm",
                                             c_bar=0.2, treat_fraction=0.05, seed=seed))
    return runs


def test_criterion_01_inference_matches_enumeration():
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        m, n = int(rng.integers(1, 5)), int(rng.integers(2, 9))
        model = random_hmm(rng, m)
        y = rng.normal(0.0, 1.0, n)
        _, filt, pred, smoothed = brute_force(model, y)
        post = hmm.posteriors(model, y, pairwise=True)
        gaps = [
            np.abs(hmm.filter_state(model, y) - filt).max(),
            np.abs(hmm.predict_state(model, y) - pred).max(),
            max(np.abs(hmm.smooth(model, y, p) - smoothed[p]).max() for p in range(n)),
            np.abs(post.marginals - smoothed).max(),
            np.abs(post.pairwise - brute_force_pairwise(model, y)).max(),
        ]
        worst = max(worst, *gaps)
    ok = record(1, worst <= 1e-9, f"largest deviation from enumeration {worst:.2e} over 200 models")
    assert ok


def test_criterion_02_em_traces_are_monotone(hmm_fits, cgmm_fits):
    hmm_bad = sum(not trace.is_monotone(1e-9) for _, trace, _ in hmm_fits)
    cgmm_bad = sum(not trace.is_monotone(1e-9) for _, trace in cgmm_fits)
    ok = record(2, hmm_bad == 0 and cgmm_bad == 0,
                f"non-monotone traces: {hmm_bad}/{len(hmm_fits)} HMM, {cgmm_bad}/{len(cgmm_fits)} CGMM")
    assert ok


def test_criterion_03_likelihood_is_the_same_at_every_time(hmm_fits):
    worst = 0.0
    for model, _, y in hmm_fits:
        per_t, total = likelihood_by_time(model, y)
        # a log-scale gap d is a relative gap of expm1(d) in P(Y)
        worst = max(worst, float(np.expm1(np.abs(per_t - total).max())))
    ok = record(3, worst <= 1e-9, f"largest relative spread of P(Y) across t {worst:.2e} over {len(hmm_fits)} fits")
    assert ok


def test_criterion_04_cgmm_recovers_two_lines(cgmm_fits):
    good = 0
    for model, _ in cgmm_fits:
        order = np.argsort(model.coefs[:, 0])
        slopes, weights = model.coefs[order, 0], model.weights[order]
        good += bool(np.all(np.abs(slopes - [-2.0, 2.0]) <= 0.05 * 2.0) and np.all(np.abs(weights - 0.5) <= 0.05))
    ok = record(4, good >= 95, f"recovered in {good}/100 seeds (need 95)")
    assert ok


def test_criterion_05_latent_variables_improve_forecasts():
    wins = {"ols": 0, "dt": 0, "cgmm": 0}
    for seed in range(50):
        series = simulate_two_regime(seed=seed).series
        cut = int(len(series) * 0.75) // 24 * 24
        train, test = series.slice(0, cut), series.slice(cut, len(series))
        cfg = ForecastConfig(seed=seed, max_depth=12)
        mape = {m: run_forecast(train, test, m, cfg).mape for m in ("ols", "ols+hmm", "dt", "dt+hmm", "cgmm")}
        wins["ols"] += mape["ols+hmm"] < mape["ols"]
        wins["dt"] += mape["dt+hmm"] < mape["dt"]
        wins["cgmm"] += mape["cgmm"] < mape["ols"]
    ok = record(5, wins["ols"] >= 45 and wins["dt"] >= 45 and wins["cgmm"] >= 40,
                f"OLS+HMM<OLS {wins['ols']}/50 (need 45), DT+HMM<DT {wins['dt']}/50 (need 45), "
                f"CGMM<OLS {wins['cgmm']}/50 (need 40)")
    assert ok


def test_criterion_06_injected_reductions_are_recovered(semisynthetic_runs):
    failures = []
    for seed, run in enumerate(semisynthetic_runs):
        red, plc = run.estimate.reduction, run.placebo.reduction
        se = red.std(ddof=1) / np.sqrt(red.size)
        pse = plc.std(ddof=1) / np.sqrt(plc.size)
        if not (abs(red.mean() - 0.1) <= 3 * se and abs(plc.mean()) <= 3 * pse):
            failures.append(seed)
    means = ", ".join(f"{r.estimate.reduction.mean():.3f}" for r in semisynthetic_runs)
    ok = record(6, not failures, f"mean reductions {means} (target 0.1); failing seeds {failures}")
    assert ok


def test_criterion_07_error_identity_is_bitwise(semisynthetic_runs):
    runs = list(semisynthetic_runs)
    series = simulate_two_regime(days=40, seed=77).series
    for method in ("ols", "knn", "dt+hmm", "cgmm"):
        runs.append(causal.run_semisynthetic(series, START + np.timedelta64(25 * 24, "h"), method,
                                             ForecastConfig(k=5, max_depth=6), treat_fraction=0.2, seed=3))
    bad = 0
    for run in runs:
        direct = run.estimate.y_hat_cf - run.data.y0
        bad += causal.reduction_error(run.estimate, run.data).tobytes() != direct.tobytes()
        bad += run.errors.errors.tobytes() != direct.tobytes()
    ok = record(7, bad == 0, f"{bad} mismatches over {len(runs)} semi-synthetic runs")
    assert ok


def test_criterion_08_adf_separates_walks_from_noise():
    walk_kept = noise_rejected = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        walk_kept += not data.adf_test(np.cumsum(rng.normal(size=500))).reject_unit_root_99
        noise_rejected += data.adf_test(rng.normal(size=500)).reject_unit_root_99
    ok = record(8, walk_kept >= 95 and noise_rejected >= 95,
                f"random walks not rejected {walk_kept}/100, white noise rejected {noise_rejected}/100")
    assert ok


def test_criterion_09_regressor_contracts():
    rng = np.random.default_rng(9)
    failures = []

    X = rng.normal(size=(60, 5))
    w0 = rng.normal(size=5)
    if np.abs(rg.fit_ols(X, X @ w0).weights - w0).max() > 1e-9:
        failures.append("ols recovery")

    y = rng.normal(size=60)
    queries = rng.normal(size=(10, 5))
    if any(abs(rg.knn_predict(X, y, q, 60) - y.mean()) > 1e-12 for q in queries):
        failures.append("knn k=N")

    yt = X[:, 0] ** 2 + rng.normal(size=60)
    for depth in (1, 3, 8):
        tree = rg.fit_tree(X, yt, max_depth=depth)
        leaves = rg.tree_apply(tree, X)
        if any(abs(tree.value[leaf] - yt[leaves == leaf].mean()) > 1e-12 for leaf in np.unique(leaves)):
            failures.append(f"tree leaves depth {depth}")

    fixtures = [
        (rng.normal(size=(30, 2)), None, dict(C=1.0, epsilon=0.1)),
        (rng.normal(size=(50, 3)), None, dict(C=0.5, epsilon=0.05)),
        (rng.uniform(-2, 2, size=(40, 1)), None, dict(C=10.0, epsilon=0.15, gamma=1.0, tol=1e-6)),
        (rng.normal(size=(25, 4)), np.full(25, 2.5), dict(C=1.0, epsilon=0.1)),
    ]
    for i, (Xs, ys, kw) in enumerate(fixtures):
        ys = np.sin(Xs.sum(1)) + 0.1 * rng.normal(size=len(Xs)) if ys is None else ys
        box, total = svr_dual_violation(rg.fit_svr(Xs, ys, **kw))
        if box > 1e-8 or total > 1e-8:
            failures.append(f"svr fixture {i}")

    ok = record(9, not failures, f"violated contracts: {failures or 'none'}")
    assert ok


def _outputs(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.suffix in (".csv", ".json")}


def test_criterion_10_cli_reruns_are_byte_identical(tmp_path):
    files = write_program_files(tmp_path / "raw", n_users=2, days=30, signup_day=20, events_per_user=10, seed=4)
    out, store = tmp_path / "out", tmp_path / "out" / "store"
    commands = [
        ["ingest", "--meter", str(files.meter), "--temperature", str(files.temperature),
         "--metadata", str(files.metadata), "--out", str(store)],
        ["forecast", "--store", str(store), "--out", str(out / "fc"), "--methods", "all", "--seed", "2"],
        ["synth", "--store", str(store), "--out", str(out / "syn"), "--methods", "ols,ols+hmm,cgmm",
         "--seed", "2", "--treat-fraction", "0.2"],
        ["reduction", "--store", str(store), "--events", str(files.events), "--out", str(out / "red"),
         "--seed", "2"],
    ]
    codes_a = [cli.main(c) for c in commands]
    a = _outputs(out)
    codes_b = [cli.main(c) for c in commands]
    b = _outputs(out)
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = codes_a == codes_b == [0, 0, 0, 0] and a.keys() == b.keys() and not differing
    record(10, ok, f"{len(a)} CSV/JSON files compared, exit codes {codes_a}, differing {differing or 'none'}")
    assert ok
