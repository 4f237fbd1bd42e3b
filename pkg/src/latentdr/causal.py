"""Counterfactual estimation of demand-response reductions.

Hours of a participating user fall into three disjoint sets: pretreatment
hours before signup, treatment hours (DR events after signup) and control
hours (everything else after signup). A forecaster trained on pretreatment
hours predicts the consumption each treatment hour would have had without
the event; the pointwise reduction is that prediction minus what was
observed.

The semi-synthetic protocol takes a series without DR events, picks random
daytime hours after a chosen cutoff, lowers them by a Uniform[0, c_bar]
draw and keeps both outcomes, so estimated reductions can be scored
against the truth.

All semi-synthetic outcomes and counterfactual predictions live on a
fixed-point grid with spacing 2**-32. Differences of grid values are exact in
double precision, so a reduction error computed as
``(y_hat0 - y1) - (y0 - y1)`` is bitwise equal to ``y_hat0 - y0``.
"""

import csv
import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .data import ConsumptionSeries, format_hour, hour_of_day
from .forecast import Forecaster, ForecastConfig, TrainingOverlapError

GRID = 2.0**-32
EVENT_HOURS = (6, 20)
GROUP_KEYS = ("hour", "latent", "automation", "placebo")
REDUCTION_HEADER = ["user_id", "timestamp", "hour", "latent", "automation", "placebo",
                    "y_obs", "y_hat_cf", "reduction"]
NO_LABEL = -1


class CausalError(ValueError):
    pass


class EventBeforeSignupError(CausalError):
    pass


class NoEligibleHoursError(CausalError):
    pass


class MisalignmentError(CausalError):
    pass


def quantize(values) -> np.ndarray:
    """Round to the nearest multiple of 2**-32."""
    return np.round(np.asarray(values, dtype=float) / GRID) * GRID


def _daytime(ts) -> np.ndarray:
    h = hour_of_day(ts)
    return (h >= EVENT_HOURS[0]) & (h < EVENT_HOURS[1])


# ---------------------------------------------------------------------------
# Treatment bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TreatmentLedger:
    """Index partition of one user's series around the signup time.

    ``treatment`` and ``control`` together are the post-signup hours;
    ``placebo`` is a subset of ``control`` used as a no-effect reference.
    """

    user_id: str
    series: ConsumptionSeries
    signup: np.datetime64
    pretreatment: np.ndarray
    control: np.ndarray
    treatment: np.ndarray
    placebo: np.ndarray
    automated: bool = False

    @property
    def post(self) -> np.ndarray:
        return np.union1d(self.treatment, self.control)


def _placebo_sample(ts, control, treatment, rng, fallback_fraction):
    """Control hours matched by hour of day to the treatment hours.

    For each hour of day the treatment set uses ``n_h`` times, draw
    ``n_h`` control hours of that hour of day without replacement (fewer
    if not enough exist). Without treatment hours, a ``fallback_fraction``
    sample of daytime control hours is drawn instead.
    """
    ctrl_hours = hour_of_day(ts[control])
    if treatment.size:
        wanted = np.bincount(hour_of_day(ts[treatment]), minlength=24)
    else:
        day = control[_daytime(ts[control])]
        if day.size == 0:
            return np.zeros(0, dtype=int)
        size = max(1, int(round(fallback_fraction * day.size)))
        return np.sort(rng.choice(day, size=size, replace=False))
    picked = []
    for h in range(24):
        if wanted[h] == 0:
            continue
        pool = control[ctrl_hours == h]
        take = min(int(wanted[h]), pool.size)
        if take:
            picked.append(rng.choice(pool, size=take, replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=int)


def split_by_signup(series: ConsumptionSeries, signup, dr_events=(), automated: bool = False,
                    seed: int = 0, placebo_fraction: float = 0.05) -> TreatmentLedger:
    """Partition ``series`` into pretreatment, treatment and control hours.

    Hours strictly before ``signup`` are pretreatment; DR events at or after
    signup are treatment; all other hours from signup on are control.
    Events outside the series are ignored; repeated events count once.
    """
    signup = np.datetime64(signup, "h")
    ts = series.timestamps
    if len(series) == 0 or not ts[0] <= signup <= ts[-1]:
        raise CausalError(f"signup {signup} outside series {series.key}")
    events = np.unique(np.asarray([np.datetime64(e, "h") for e in dr_events], dtype="datetime64[h]"))
    early = events[events < signup]
    if early.size:
        raise EventBeforeSignupError(f"DR event {format_hour(early[0])} precedes signup {format_hour(signup)}")
    cut = int(np.searchsorted(ts, signup))
    inside = events[(events >= ts[0]) & (events <= ts[-1])]
    treatment = ((inside - ts[0]) // np.timedelta64(1, "h")).astype(int)
    post = np.arange(cut, len(series))
    control = np.setdiff1d(post, treatment)
    rng = np.random.default_rng(seed)
    placebo = _placebo_sample(ts, control, treatment, rng, placebo_fraction)
    return TreatmentLedger(series.user_id, series, signup, np.arange(cut), control, treatment,
                           placebo, bool(automated))


# ---------------------------------------------------------------------------
# Semi-synthetic treatment injection
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SemiSyntheticSet:
    """A DR-free series with injected reductions at ``treated`` positions.

    ``series`` is the observed data: ``y0`` everywhere except treated hours,
    which carry ``y1 = y0 - u``. ``y0`` and ``y1`` are stored for the treated
    positions only.
    """

    series: ConsumptionSeries
    signup: np.datetime64
    treated: np.ndarray
    u: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    c_bar: float
    treat_fraction: float
    seed: int

    @property
    def timestamps(self) -> np.ndarray:
        return self.series.timestamps[self.treated]

    @property
    def true_reduction(self) -> np.ndarray:
        return self.y0 - self.y1

    def baseline(self) -> ConsumptionSeries:
        """The untreated series (``y0`` at every hour)."""
        y = self.series.consumption.copy()
        y[self.treated] = self.y0
        return self.series.with_consumption(y)


def make_semisynthetic(series: ConsumptionSeries, signup, treat_fraction: float = 0.05,
                       c_bar: float = 0.2, seed: int = 0) -> SemiSyntheticSet:
    """Inject Uniform[0, c_bar] reductions into a random subset of daytime
    hours (6:00 to 20:00) at or after ``signup``.

    Each eligible hour is treated independently with probability
    ``treat_fraction``. Consumption values and draws are rounded to the
    2**-32 grid first, so ``y0 - y1`` equals the stored draw exactly.
    """
    if not 0.0 < treat_fraction <= 1.0:
        raise ValueError("treat_fraction must lie in (0, 1]")
    if not c_bar >= 0.0:
        raise ValueError("c_bar must be non-negative")
    signup = np.datetime64(signup, "h")
    ts = series.timestamps
    eligible = np.flatnonzero((ts >= signup) & _daytime(ts))
    if eligible.size == 0:
        raise NoEligibleHoursError(f"no hours between 6:00 and 20:00 after {format_hour(signup)}")
    rng = np.random.default_rng(seed)
    treated = eligible[rng.random(eligible.size) < treat_fraction]
    u = np.minimum(quantize(rng.uniform(0.0, c_bar, treated.size)), quantize(c_bar))
    y = quantize(series.consumption)
    y0 = y[treated].copy()
    y1 = y0 - u
    y[treated] = y1
    return SemiSyntheticSet(series.with_consumption(y), signup, treated, u, y0, y1,
                            float(c_bar), float(treat_fraction), int(seed))


# ---------------------------------------------------------------------------
# Counterfactuals and reductions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Counterfactuals:
    timestamps: np.ndarray
    y_hat: np.ndarray
    latent: np.ndarray


def estimate_counterfactuals(forecaster: Forecaster, target, indices=None) -> Counterfactuals:
    """Predict untreated consumption at the target hours.

    ``target`` is a :class:`SemiSyntheticSet` (targets its treated hours), a
    :class:`TreatmentLedger` (targets its treatment hours) or a plain series
    together with ``indices``. Lagged covariates come from the observed
    history. The forecaster's training window must end before the first
    target hour and, for sets and ledgers, before signup.
    """
    cutoff = None
    if isinstance(target, SemiSyntheticSet):
        series, idx, cutoff = target.series, target.treated, target.signup
    elif isinstance(target, TreatmentLedger):
        series, idx, cutoff = target.series, target.treatment, target.signup
    else:
        series, idx = target, None
    if indices is not None:
        idx = indices
    if idx is None:
        raise ValueError("indices are required when the target is a plain series")
    idx = np.asarray(idx, dtype=int)
    if forecaster.train is None:
        raise CausalError("forecaster has not been fitted")
    if idx.size == 0:
        return Counterfactuals(np.zeros(0, dtype="datetime64[h]"), np.zeros(0), np.zeros(0, dtype=int))
    first = series.timestamps[idx.min()]
    if forecaster.train_end >= first or (cutoff is not None and forecaster.train_end >= cutoff):
        raise TrainingOverlapError(
            f"training window ends {format_hour(forecaster.train_end)}, not before the first target hour"
        )
    pred, labels = forecaster.predict(series, idx)
    if labels is None:
        labels = np.full(idx.size, NO_LABEL, dtype=int)
    return Counterfactuals(series.timestamps[idx], quantize(pred), np.asarray(labels, dtype=int))


def _aggregates(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"n": 0, "mean": None, "median": None, "p10": None, "p25": None, "p75": None, "p90": None}
    p10, p25, p50, p75, p90 = np.percentile(v, [10, 25, 50, 75, 90])
    return {"n": int(v.size), "mean": float(v.mean()), "median": float(p50), "p10": float(p10),
            "p25": float(p25), "p75": float(p75), "p90": float(p90)}


@dataclass(frozen=True, eq=False)
class ReductionEstimate:
    """Pointwise reductions ``y_hat_cf - y_obs`` with their conditioning labels.

    Positive values are reductions, negative values increases.
    """

    user_id: np.ndarray
    timestamps: np.ndarray
    y_obs: np.ndarray
    y_hat_cf: np.ndarray
    reduction: np.ndarray
    latent: np.ndarray
    automation: np.ndarray
    placebo: np.ndarray

    def __len__(self):
        return self.reduction.size

    @property
    def hour(self) -> np.ndarray:
        return hour_of_day(self.timestamps)

    @property
    def aggregates(self) -> dict:
        return _aggregates(self.reduction)

    def subset(self, mask) -> "ReductionEstimate":
        mask = np.asarray(mask)
        return ReductionEstimate(*(getattr(self, f)[mask] for f in _ESTIMATE_FIELDS))

    def column(self, key) -> np.ndarray:
        return self.hour if key == "hour" else getattr(self, key)

    @classmethod
    def concatenate(cls, estimates) -> "ReductionEstimate":
        estimates = list(estimates)
        if not estimates:
            return estimate_reduction(np.zeros(0), np.zeros(0))
        return cls(*(np.concatenate([getattr(e, f) for e in estimates]) for f in _ESTIMATE_FIELDS))

    def to_csv(self, path, metadata: dict = None) -> None:
        with Path(path).open("w", newline="") as fh:
            if metadata is not None:
                fh.write("# " + json.dumps(metadata, sort_keys=True, default=str) + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REDUCTION_HEADER)
            hours = self.hour
            for i in range(len(self)):
                writer.writerow([
                    self.user_id[i], format_hour(self.timestamps[i]), int(hours[i]), int(self.latent[i]),
                    int(self.automation[i]), int(self.placebo[i]), repr(float(self.y_obs[i])),
                    repr(float(self.y_hat_cf[i])), repr(float(self.reduction[i])),
                ])


_ESTIMATE_FIELDS = ("user_id", "timestamps", "y_obs", "y_hat_cf", "reduction", "latent", "automation", "placebo")


def estimate_reduction(y_hat, y_obs, timestamps=None, latent=None, user_id="", automation=False,
                       placebo=False) -> ReductionEstimate:
    """Pointwise reduction ``y_hat - y_obs``.

    ``y_hat`` may be a :class:`Counterfactuals`, which then supplies the
    timestamps and latent labels. Scalar labels are broadcast.
    """
    if isinstance(y_hat, Counterfactuals):
        timestamps = y_hat.timestamps if timestamps is None else timestamps
        latent = y_hat.latent if latent is None else latent
        y_hat = y_hat.y_hat
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    y_obs = np.asarray(y_obs, dtype=float).ravel()
    n = y_hat.size
    if y_obs.size != n:
        raise MisalignmentError(f"{n} counterfactuals but {y_obs.size} observations")
    if timestamps is None:
        timestamps = np.zeros(n, dtype="datetime64[h]")
    timestamps = np.asarray(timestamps, dtype="datetime64[h]").ravel()

    def labels(value, dtype):
        arr = np.asarray(NO_LABEL if value is None else value, dtype=dtype)
        arr = np.broadcast_to(arr, (n,)).copy() if arr.ndim == 0 else arr.ravel()
        if arr.size != n:
            raise MisalignmentError("label vector length differs from the estimates")
        return arr

    if timestamps.size != n:
        raise MisalignmentError("timestamp vector length differs from the estimates")
    return ReductionEstimate(labels(user_id, object), timestamps, y_obs, y_hat, y_hat - y_obs,
                             labels(latent, int), labels(automation, bool), labels(placebo, bool))


# ---------------------------------------------------------------------------
# Error summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ErrorSummary:
    """Eventwise errors with their mean (bias) and sample variance.

    The irreducible noise term is not separated out: with one realization
    per hour it cannot be told apart from the estimator variance.
    """

    errors: np.ndarray
    bias: float
    variance: float

    @classmethod
    def from_errors(cls, errors) -> "ErrorSummary":
        e = np.asarray(errors, dtype=float).ravel()
        bias = float(e.mean()) if e.size else float("nan")
        variance = float(e.var(ddof=1)) if e.size > 1 else float("nan")
        return cls(e, bias, variance)

    @property
    def n(self) -> int:
        return self.errors.size

    def to_dict(self) -> dict:
        return {"n": self.n, "bias": self.bias, "variance": self.variance}


def _align(estimate: ReductionEstimate, truth: SemiSyntheticSet):
    if not np.array_equal(estimate.timestamps, truth.timestamps):
        raise MisalignmentError("estimate and semi-synthetic set cover different hours")


def eventwise_error(estimate: ReductionEstimate, truth: SemiSyntheticSet) -> ErrorSummary:
    """Errors ``y_hat0 - y0`` at the treated hours."""
    _align(estimate, truth)
    return ErrorSummary.from_errors(estimate.y_hat_cf - truth.y0)


def reduction_error(estimate: ReductionEstimate, truth: SemiSyntheticSet) -> np.ndarray:
    """Errors of the reductions themselves, ``y_hat_delta - y_delta``."""
    _align(estimate, truth)
    return estimate.reduction - truth.true_reduction


# ---------------------------------------------------------------------------
# Grouped summaries
# ---------------------------------------------------------------------------

_LEVELS = {"hour": range(24), "latent": (0, 1), "automation": (False, True), "placebo": (False, True)}


def _level_value(key, value):
    return bool(value) if key in ("automation", "placebo") else int(value)


def conditional_summary(estimates, group_by=("hour", "latent", "automation", "placebo")) -> dict:
    """Aggregates of the pointwise reductions per group.

    Every combination of the standard levels (24 hours, both latent labels,
    both flags) is reported, with ``n = 0`` and null statistics for empty
    groups; levels seen in the data but outside those (such as the missing
    latent label -1) are added. Keys are tuples in ``group_by`` order.
    """
    est = ReductionEstimate.concatenate(estimates) if isinstance(estimates, (list, tuple)) else estimates
    group_by = tuple(group_by)
    for key in group_by:
        if key not in GROUP_KEYS:
            raise ValueError(f"unknown grouping key {key!r}; choose from {', '.join(GROUP_KEYS)}")
    columns = [np.asarray([_level_value(k, v) for v in est.column(k)], dtype=object) for k in group_by]
    domains = []
    for key, col in zip(group_by, columns):
        levels = {_level_value(key, v) for v in _LEVELS[key]} | set(col.tolist())
        domains.append(sorted(levels))
    out = {}
    for combo in product(*domains):
        mask = np.ones(len(est), dtype=bool)
        for col, level in zip(columns, combo):
            mask &= col == level
        out[combo] = _aggregates(est.reduction[mask])
    return out


def summary_key(group_by, combo) -> str:
    parts = []
    for key, level in zip(group_by, combo):
        parts.append(f"{key}={str(level).lower() if isinstance(level, bool) else level}")
    return "|".join(parts) if parts else "all"


def summary_to_json(summary: dict, group_by) -> dict:
    return {summary_key(group_by, combo): stats for combo, stats in summary.items()}


# ---------------------------------------------------------------------------
# End-to-end helpers
# ---------------------------------------------------------------------------


@dataclass
class SemiSyntheticRun:
    data: SemiSyntheticSet
    estimate: ReductionEstimate
    placebo: ReductionEstimate
    errors: ErrorSummary
    params: dict = field(default_factory=dict)


def analyze_user(ledger: TreatmentLedger, method: str = "ols+hmm",
                 config: ForecastConfig = None) -> ReductionEstimate:
    """Fit ``method`` on the pretreatment hours and estimate reductions at
    the treatment and placebo hours of one user."""
    series = ledger.series
    model = Forecaster(method, config).fit(series.slice(0, ledger.pretreatment.size))
    parts = []
    for idx, is_placebo in ((ledger.treatment, False), (ledger.placebo, True)):
        cf = estimate_counterfactuals(model, series, idx)
        parts.append(estimate_reduction(cf, series.consumption[idx], user_id=series.user_id,
                                        automation=ledger.automated, placebo=is_placebo))
    return ReductionEstimate.concatenate(parts)


def run_semisynthetic(series: ConsumptionSeries, signup, method: str = "ols+hmm",
                      config: ForecastConfig = None, c_bar: float = 0.2, treat_fraction: float = 0.05,
                      seed: int = 0) -> SemiSyntheticRun:
    """Inject reductions after ``signup``, fit on the hours before it and
    score the estimated reductions against the injected ones."""
    data = make_semisynthetic(series, signup, treat_fraction, c_bar, seed)
    ledger = split_by_signup(data.series, data.signup, data.timestamps, seed=seed)
    model = Forecaster(method, config).fit(data.series.slice(0, ledger.pretreatment.size))
    cf = estimate_counterfactuals(model, data)
    estimate = estimate_reduction(cf, data.y1, user_id=series.user_id)
    pcf = estimate_counterfactuals(model, data.series, ledger.placebo)
    placebo = estimate_reduction(pcf, data.series.consumption[ledger.placebo], user_id=series.user_id,
                                 placebo=True)
    return SemiSyntheticRun(data, estimate, placebo, eventwise_error(estimate, data), dict(model.params))
