"""Command-line front end.

Subcommands::

    latentdr ingest     raw CSVs -> series store (+ exclusion and ADF reports)
    latentdr forecast   per-method one-step-ahead forecasts and MAPE table
    latentdr synth      semi-synthetic treatment injection and error report
    latentdr reduction  reductions at DR events and placebo hours, grouped

Every CSV starts with a ``# {json}`` line holding the run configuration and
every JSON report carries it under ``"config"``. The output directory and the
worker count are not part of that record, so re-running a command with the
same inputs, settings and seed gives byte-identical CSV and JSON files
wherever they are written and however many workers are used.

Exit codes: 0 on success, 1 when a computation or data check fails, 2 for
usage and file-system errors.
"""

import argparse
import csv
import json
import math
import shutil
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import causal, data, forecast
from .plots import boxplot_svg, histogram_svg, write_svg

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything that can influence a command's output."""

    seed: int = 0
    methods: str = "all"
    method: str = "ols+hmm"
    k: int = None
    C: float = 1.0
    epsilon: float = 0.01
    gamma: float = None
    max_depth: int = None
    K: int = 2
    tol: float = 1e-6
    max_iter: int = 500
    c_bar: float = 0.2
    treat_fraction: float = 0.05
    train_fraction: float = 0.75
    max_kwh: float = data.DEFAULT_MAX_KWH
    max_gap: int = data.MAX_INTERP_GAP
    station: str = None
    meter: str = None
    temperature: str = None
    metadata: str = None
    events: str = None
    store: str = None

    def method_list(self):
        names = forecast.METHODS if self.methods == "all" else tuple(
            m.strip() for m in self.methods.split(",") if m.strip()
        )
        for m in names:
            if m not in forecast.METHODS:
                raise UsageError(f"unknown method {m!r}; choose from {', '.join(forecast.METHODS)} or 'all'")
        if not names:
            raise UsageError("no methods selected")
        return list(names)

    def forecast_config(self, seed: int) -> forecast.ForecastConfig:
        return forecast.ForecastConfig(
            seed=seed, k=self.k, C=self.C, epsilon=self.epsilon, gamma=self.gamma,
            max_depth=self.max_depth, K=self.K, tol=self.tol, max_iter=self.max_iter,
        )

    def record(self) -> dict:
        return asdict(self)


def derive_seed(seed: int, *labels) -> int:
    """Independent 32-bit seed for a (user, method, ...) combination."""
    entropy = [int(seed)] + [zlib.crc32(str(label).encode()) for label in labels]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    return value


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n")


def write_csv(path, header, rows, config: dict) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("# " + json.dumps(_clean(config), sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _fmt(value):
    return "" if value is None or (isinstance(value, float) and not math.isfinite(value)) else value


def _map(func, tasks, jobs):
    """Ordered map, in a process pool when ``jobs > 1``."""
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks))


def _require(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def load_store(store):
    """Series in a store directory, ordered by key."""
    root = _require(store, "store")
    files = sorted((root / "series").glob("*.csv"))
    if not files:
        raise data.DataError(f"store {root} holds no series")
    return [data.read_series(f) for f in files]


def _split(series, fraction):
    n = len(series)
    cut = max(int(math.floor(fraction * n)), forecast.MIN_TRAIN_HOURS)
    if cut >= n:
        return None
    return cut


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, out: Path, jobs: int) -> int:
    meter = _require(cfg.meter, "meter")
    temp = _require(cfg.temperature, "temperature")
    meta_path = _require(cfg.metadata, "metadata") if cfg.metadata else None
    table, temps = data.load_readings(meter, temp, meta_path)
    reasons = data.exclusion_reasons(table, cfg.max_kwh)
    kept = data.filter_users(table, cfg.max_kwh)
    series = data.align_and_scale(kept, temps, cfg.station, cfg.max_gap) if kept.users else []
    rec = cfg.record()

    (out / "series").mkdir(parents=True, exist_ok=True)
    for s in series:
        data.write_series(s, out / "series" / f"{s.key}.csv")
    if meta_path is not None:
        shutil.copyfile(meta_path, out / "users.csv")
    write_csv(out / "exclusions.csv", ["user_id", "reason"], sorted(reasons.items()), rec)
    rows = []
    for s in series:
        try:
            r = data.adf_test(s)
            rows.append([s.key, r.test_statistic, r.lags_used, r.nobs, r.critical_value_99,
                         str(r.reject_unit_root_99).lower()])
        except data.InsufficientDataError:
            rows.append([s.key, "", "", len(s), "", ""])
    write_csv(out / "adf.csv",
              ["series", "test_statistic", "lags_used", "nobs", "critical_value_99", "reject_unit_root_99"],
              rows, rec)
    write_json(out / "manifest.json", {
        "config": rec,
        "series": [{"key": s.key, "user_id": s.user_id, "start": data.format_hour(s.timestamps[0]),
                    "hours": len(s)} for s in series],
        "excluded": dict(sorted(reasons.items())),
    })
    print(f"ingested {len(series)} series from {len(kept.users)} users; excluded {len(reasons)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


def _forecast_task(task):
    series, method, cut, fcfg = task
    run = forecast.run_forecast(series.slice(0, cut), series.slice(cut, len(series)), method, fcfg)
    return run


def cmd_forecast(cfg: RunConfig, out: Path, jobs: int) -> int:
    methods = cfg.method_list()
    store = load_store(cfg.store)
    rec = cfg.record()
    tasks, skipped = [], []
    for s in store:
        cut = _split(s, cfg.train_fraction)
        if cut is None:
            skipped.append(s.key)
            continue
        for m in methods:
            tasks.append((s, m, cut, cfg.forecast_config(derive_seed(cfg.seed, s.key, m))))
    runs = _map(_forecast_task, tasks, jobs)

    (out / "runs").mkdir(parents=True, exist_ok=True)
    per_user = []
    for (s, m, _, _), run in zip(tasks, runs):
        run.to_csv(out / "runs" / f"{s.key}__{m.replace('+', '_')}.csv", rec)
        per_user.append([s.key, m, _fmt(run.mape), run.n_excluded, json.dumps(_clean(run.params), sort_keys=True)])
    write_csv(out / "mape_by_user.csv", ["series", "method", "mape", "n_excluded", "params"], per_user, rec)

    table, groups = [], {}
    for m in methods:
        vals = np.array([r.mape for (_, mm, _, _), r in zip(tasks, runs) if mm == m], dtype=float)
        vals = vals[np.isfinite(vals)]
        groups[m.upper()] = vals
        if vals.size:
            p10, p50, p90 = np.percentile(vals, [10, 50, 90])
            table.append([m, int(vals.size), float(vals.mean()), float(p50), float(p10), float(p90)])
        else:
            table.append([m, 0, "", "", "", ""])
    write_csv(out / "mape_table.csv", ["method", "n_series", "mean_mape", "median_mape", "p10_mape", "p90_mape"],
              table, rec)
    write_svg(out / "mape_boxplot.svg",
              boxplot_svg(groups, "Prediction accuracy by forecasting method", "MAPE (%)"))
    if skipped:
        print(f"skipped {len(skipped)} series too short to split: {', '.join(skipped)}", file=sys.stderr)
    print(f"forecast {len(methods)} methods on {len(store) - len(skipped)} series")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def _synth_task(task):
    synth, method, fcfg = task
    cut = synth.series.index_of(synth.signup)
    model = forecast.Forecaster(method, fcfg).fit(synth.series.slice(0, cut))
    cf = causal.estimate_counterfactuals(model, synth)
    return causal.estimate_reduction(cf, synth.y1, user_id=synth.series.key), dict(model.params)


def cmd_synth(cfg: RunConfig, out: Path, jobs: int) -> int:
    methods = cfg.method_list()
    store = load_store(cfg.store)
    rec = cfg.record()
    sets, skipped = [], []
    for s in store:
        cut = _split(s, cfg.train_fraction)
        if cut is None:
            skipped.append(s.key)
            continue
        try:
            sets.append(causal.make_semisynthetic(s, s.timestamps[cut], cfg.treat_fraction, cfg.c_bar,
                                                  derive_seed(cfg.seed, s.key, "synth")))
        except causal.NoEligibleHoursError:
            skipped.append(s.key)
    tasks = [(st, m, cfg.forecast_config(derive_seed(cfg.seed, st.series.key, m))) for st in sets for m in methods]
    results = _map(_synth_task, tasks, jobs)

    (out / "semisynthetic").mkdir(parents=True, exist_ok=True)
    for st in sets:
        write_csv(out / "semisynthetic" / f"{st.series.key}.csv", ["timestamp", "y0", "y1", "u"],
                  [[data.format_hour(t), a, b, c] for t, a, b, c in zip(st.timestamps, st.y0, st.y1, st.u)], rec)
    err_rows, by_method = [], {m: [] for m in methods}
    for (st, m, _), (est, _) in zip(tasks, results):
        summary = causal.eventwise_error(est, st)
        by_method[m].append(summary.errors)
        for t, yh, y0, e in zip(st.timestamps, est.y_hat_cf, st.y0, summary.errors):
            err_rows.append([st.series.key, m, data.format_hour(t), yh, y0, e])
    write_csv(out / "errors.csv", ["series", "method", "timestamp", "y_hat0", "y0", "error"], err_rows, rec)
    report = {"config": rec, "methods": {}, "skipped": skipped,
              "note": "irreducible noise is not separated from the variance"}
    for m in methods:
        errs = np.concatenate(by_method[m]) if by_method[m] else np.zeros(0)
        report["methods"][m] = causal.ErrorSummary.from_errors(errs).to_dict()
        write_svg(out / f"error_hist_{m.replace('+', '_')}.svg",
                  histogram_svg(errs, 30, f"Pointwise error of the estimated reduction ({m.upper()})",
                                "estimated minus true reduction"))
    write_json(out / "error_summary.json", report)
    print(f"semi-synthetic evaluation of {len(methods)} methods on {len(sets)} series")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reduction
# ---------------------------------------------------------------------------


def _reduction_task(task):
    ledger, method, fcfg = task
    return causal.analyze_user(ledger, method, fcfg)


def _read_events(path):
    events = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "timestamp"]:
            raise data.ParseError(path, 1, f"expected header user_id,timestamp, got {header}")
        for line, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise data.ParseError(path, line, "expected 2 fields")
            try:
                events.setdefault(row[0], []).append(data.parse_hour(row[1]))
            except ValueError as exc:
                raise data.ParseError(path, line, str(exc)) from None
    return events


def cmd_reduction(cfg: RunConfig, out: Path, jobs: int) -> int:
    if cfg.method not in forecast.METHODS:
        raise UsageError(f"unknown method {cfg.method!r}; choose from {', '.join(forecast.METHODS)}")
    store = load_store(cfg.store)
    meta_path = Path(cfg.metadata) if cfg.metadata else Path(cfg.store) / "users.csv"
    meta = data.load_metadata(_require(str(meta_path), "metadata"))
    events = _read_events(_require(cfg.events, "events")) if cfg.events else {}
    rec = cfg.record()
    tasks, skipped = [], []
    for s in store:
        m = meta.get(s.user_id)
        if m is None or m.signup is None or not (s.timestamps[0] < m.signup <= s.timestamps[-1]):
            skipped.append(s.key)
            continue
        if int(np.searchsorted(s.timestamps, m.signup)) < forecast.MIN_TRAIN_HOURS:
            skipped.append(s.key)
            continue
        ledger = causal.split_by_signup(s, m.signup, events.get(s.user_id, []), m.has_automation,
                                        seed=derive_seed(cfg.seed, s.key, "placebo"))
        tasks.append((ledger, cfg.method, cfg.forecast_config(derive_seed(cfg.seed, s.key, cfg.method))))
    estimates = _map(_reduction_task, tasks, jobs)
    est = causal.ReductionEstimate.concatenate(estimates)
    est.to_csv(out / "reductions.csv", rec)

    groupings = {
        "hour_latent_automation_placebo": causal.GROUP_KEYS,
        "latent_automation_placebo": ("latent", "automation", "placebo"),
        "automation_placebo": ("automation", "placebo"),
        "placebo": ("placebo",),
    }
    report = {"config": rec, "skipped": skipped, "groupings": {}}
    for name, keys in groupings.items():
        report["groupings"][name] = causal.summary_to_json(causal.conditional_summary(est, keys), keys)
    write_json(out / "reduction_summary.json", report)

    hours = est.hour
    for auto in (False, True):
        for placebo in (False, True):
            groups = {}
            for h in range(*causal.EVENT_HOURS):
                for lat, tag in ((1, "H"), (0, "L")):
                    mask = (hours == h) & (est.latent == lat) & (est.automation == auto) & (est.placebo == placebo)
                    groups[f"{h}{tag}"] = est.reduction[mask]
            kind = "placebo" if placebo else "events"
            who = "automated" if auto else "non_automated"
            write_svg(out / f"reduction_{who}_{kind}.svg",
                      boxplot_svg(groups, f"Estimated reduction by hour of day ({who.replace('_', '-')}, {kind})",
                                  "reduction (normalized)"))
    n_events = int((~est.placebo).sum())
    print(f"estimated {n_events} event reductions and {len(est) - n_events} placebo reductions "
          f"for {len(tasks)} series")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

COMMANDS = {"ingest": cmd_ingest, "forecast": cmd_forecast, "synth": cmd_synth, "reduction": cmd_reduction}


def _add_common(p):
    p.add_argument("--seed", type=int, help="master random seed (default 0)")
    p.add_argument("--config", help="TOML or JSON file with run settings; flags override it")
    p.add_argument("--out", help="output directory (created if missing)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentdr", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, filter, align and scale raw readings")
    _add_common(p)
    p.add_argument("--meter", help="meter CSV (user_id,timestamp,consumption_kwh)")
    p.add_argument("--temperature", help="temperature CSV (station_id,timestamp,temp_c)")
    p.add_argument("--metadata", help="user CSV (user_id,has_pv,has_automation,signup_date)")
    p.add_argument("--station", help="temperature station to use when the file holds several")
    p.add_argument("--max-kwh", dest="max_kwh", type=float, help="corrupt-reading threshold (kWh/h)")
    p.add_argument("--max-gap", dest="max_gap", type=int, help="longest interpolated temperature gap (hours)")

    def model_flags(p, multi=True):
        _add_common(p)
        p.add_argument("--store", help="series store written by 'ingest'")
        if multi:
            p.add_argument("--methods", help="comma-separated methods or 'all'")
        p.add_argument("--k", type=int, help="KNN neighbours (default: cross-validated)")
        p.add_argument("--C", type=float, help="SVR box constraint")
        p.add_argument("--epsilon", type=float, help="SVR tube half-width")
        p.add_argument("--gamma", type=float, help="SVR RBF width (default 1/d)")
        p.add_argument("--max-depth", dest="max_depth", type=int, help="tree depth (default: cross-validated)")
        p.add_argument("--K", type=int, help="CGMM components")
        p.add_argument("--tol", type=float, help="CGMM EM tolerance")
        p.add_argument("--max-iter", dest="max_iter", type=int, help="CGMM EM iteration cap")
        p.add_argument("--train-fraction", dest="train_fraction", type=float,
                       help="share of each series used for training (default 0.75)")

    model_flags(sub.add_parser("forecast", help="one-step-ahead forecasts and MAPE comparison"))
    p = sub.add_parser("synth", help="semi-synthetic reduction injection and error report")
    model_flags(p)
    p.add_argument("--c-bar", dest="c_bar", type=float, help="largest injected reduction (normalized, default 0.2)")
    p.add_argument("--treat-fraction", dest="treat_fraction", type=float,
                   help="probability that an eligible hour is treated (default 0.05)")
    p = sub.add_parser("reduction", help="pointwise reductions at DR events and placebo hours")
    model_flags(p, multi=False)
    p.add_argument("--method", help="forecasting method (default ols+hmm)")
    p.add_argument("--events", help="DR event CSV (user_id,timestamp)")
    p.add_argument("--metadata", help="user CSV (default: the copy inside the store)")
    return parser


def _load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config not found: {p}")
    if p.suffix.lower() == ".json":
        doc = json.loads(p.read_text())
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(p.read_text())
    if not isinstance(doc, dict):
        raise UsageError(f"config {p} must hold a table of settings")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise UsageError(f"unknown config keys in {p}: {', '.join(unknown)}")
    return doc


def resolve_config(args) -> RunConfig:
    values = _load_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = resolve_config(args)
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        if not args.out:
            raise UsageError("--out is required")
        if args.command != "reduction":
            cfg.method_list()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.jobs)
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # any failure inside the computation
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
