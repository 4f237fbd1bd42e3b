"""One-step-ahead load forecasting with and without latent-state covariates.

Covariates for hour t: the five previous consumptions and temperatures (most
recent first), a one-hot hour of day and, for the HMM variants, the one-hot
hour multiplied by the binary High/Low label of hour t.

The HMM variants fit the hour-of-day HMM on the training window, label the
training hours from smoothed posteriors, and label each test hour from the
one-step-ahead state distribution given everything observed before it.
"""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import hmm
from .cgmm import CGMM
from .data import HOUR, ConsumptionSeries, format_hour, parse_hour
from .metrics import UndefinedMapeError, mape
from .regressors import cross_validate, make_regressor

N_LAGS = 5
BASE_METHODS = ("ols", "knn", "svr", "dt")
METHODS = BASE_METHODS + tuple(f"{m}+hmm" for m in BASE_METHODS) + ("cgmm",)
MIN_TRAIN_HOURS = 7 * 24


class InsufficientHistoryError(ValueError):
    pass


class TrainingOverlapError(ValueError):
    pass


def _one_hot(hours):
    out = np.zeros((len(hours), 24))
    out[np.arange(len(hours)), hours] = 1.0
    return out


def design_matrix(series: ConsumptionSeries, indices, latent=None) -> np.ndarray:
    """Covariate rows for the given positions of ``series``; 34 columns, or 58
    when latent labels are supplied."""
    idx = np.asarray(indices, dtype=int).ravel()
    if idx.size and (idx.min() < N_LAGS or idx.max() >= len(series)):
        raise InsufficientHistoryError(f"covariates need {N_LAGS} preceding hours inside the series")
    lags = idx[:, None] - np.arange(1, N_LAGS + 1)[None, :]
    hod = _one_hot(series.hours[idx])
    blocks = [series.consumption[lags], series.temperature[lags], hod]
    if latent is not None:
        latent = np.asarray(latent, dtype=float).ravel()
        if latent.size != idx.size:
            raise ValueError("one latent label per row required")
        blocks.append(hod * latent[:, None])
    return np.hstack(blocks) if idx.size else np.empty((0, 58 if latent is not None else 34))


def build_covariates(series: ConsumptionSeries, t, latent=None) -> np.ndarray:
    """Covariate vector for hour ``t`` (timestamp or integer position)."""
    if isinstance(t, (int, np.integer)):
        pos = int(t)
    else:
        pos = int((np.datetime64(t, "h") - series.timestamps[0]) // HOUR)
    if pos < N_LAGS:
        raise InsufficientHistoryError(f"hour {t} has fewer than {N_LAGS} preceding readings")
    return design_matrix(series, [pos], None if latent is None else [latent])[0]


@dataclass
class ForecastConfig:
    seed: int = 0
    k: int = None
    knn_grid: tuple = (1, 3, 5, 10, 20, 50)
    knn_scale: bool = False
    C: float = 1.0
    epsilon: float = 0.01
    gamma: float = None
    max_depth: int = None
    depth_grid: tuple = (2, 3, 4, 6, 8)
    min_samples_leaf: int = 5
    K: int = 2
    tol: float = 1e-6
    max_iter: int = 500
    hmm_tol: float = 1e-4
    hmm_max_iter: int = 200
    cv_folds: int = 5
    online_update: bool = False


def split_method(method: str):
    """``'dt+hmm'`` -> ``('dt', True)``."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    base, _, suffix = method.partition("+")
    return base, suffix == "hmm"


class Forecaster:
    """One fitted forecasting pipeline for one user.

    ``fit`` consumes a training window; ``predict`` takes a longer series that
    starts with that window and returns one-step-ahead forecasts for the
    requested later positions.
    """

    def __init__(self, method: str, config: ForecastConfig = None):
        self.method = method
        self.base, self.uses_hmm = split_method(method)
        self.config = config or ForecastConfig()
        self.params = {}
        self.hmm_model = None
        self.hmm_trace = None
        self.estimator = None
        self.train = None

    @property
    def train_end(self):
        return self.train.timestamps[-1]

    def _hyperparameters(self, X, y):
        cfg = self.config
        if self.base == "knn":
            if cfg.k is not None:
                return {"k": cfg.k, "scale": cfg.knn_scale}
            grid = [{"k": k} for k in cfg.knn_grid if k <= len(y) * (cfg.cv_folds - 1) // cfg.cv_folds]
            best = cross_validate(X, y, "knn", grid or [{"k": 1}], cfg.cv_folds)
            return {"k": best["k"], "scale": cfg.knn_scale}
        if self.base == "dt":
            if cfg.max_depth is not None:
                return {"max_depth": cfg.max_depth, "min_samples_leaf": cfg.min_samples_leaf}
            grid = [{"max_depth": d, "min_samples_leaf": cfg.min_samples_leaf} for d in cfg.depth_grid]
            return cross_validate(X, y, "dt", grid, cfg.cv_folds)
        if self.base == "svr":
            gamma = cfg.gamma if cfg.gamma is not None else 1.0 / X.shape[1]
            return {"C": cfg.C, "epsilon": cfg.epsilon, "gamma": gamma}
        if self.base == "cgmm":
            return {"K": cfg.K, "seed": cfg.seed, "tol": cfg.tol, "max_iter": cfg.max_iter}
        return {}

    def fit(self, train: ConsumptionSeries) -> "Forecaster":
        n = len(train)
        if n < MIN_TRAIN_HOURS:
            raise InsufficientHistoryError(f"training window has {n} hours; need {MIN_TRAIN_HOURS}")
        cfg = self.config
        labels = None
        if self.uses_hmm:
            self.hmm_model, self.hmm_trace = hmm.fit_hmm(
                train, tol=cfg.hmm_tol, max_iter=cfg.hmm_max_iter, seed=cfg.seed
            )
            post = hmm.posteriors(self.hmm_model, train.consumption)
            labels = hmm.latent_labels(post.marginals, self.hmm_model.space)[N_LAGS:]
        rows = np.arange(N_LAGS, n)
        X = design_matrix(train, rows, labels)
        y = train.consumption[rows]
        self.params = self._hyperparameters(X, y)
        if self.base == "cgmm":
            self.estimator = CGMM(**self.params).fit(X, y)
        else:
            self.estimator = make_regressor(self.base, **self.params).fit(X, y)
        self.train = train
        return self

    def latent_for(self, series: ConsumptionSeries, indices) -> np.ndarray:
        """Labels from ``P(q_s | y_0..y_{s-1})`` under the fitted HMM."""
        idx = np.asarray(indices, dtype=int)
        if idx.size == 0:
            return np.zeros(0, dtype=int)
        model = self.hmm_model.restarted(int(series.hours[0]))
        fwd = hmm.forward(model, series.consumption[: idx.max()])
        return hmm.latent_labels(fwd.alpha[idx], model.space)

    def predict(self, series: ConsumptionSeries, indices):
        """(predictions, latent labels or None) at ``indices`` of ``series``."""
        idx = np.asarray(indices, dtype=int)
        if self.config.online_update:
            return self._predict_refitting(series, idx)
        labels = self.latent_for(series, idx) if self.uses_hmm else None
        if idx.size == 0:
            return np.zeros(0), labels
        X = design_matrix(series, idx, labels)
        return np.asarray(self.estimator.predict(X), dtype=float), labels

    def _predict_refitting(self, series, idx):
        preds, labels = [], []
        start = series.index_of(self.train.timestamps[0])
        for s in idx:
            refit = Forecaster(self.method, _no_update(self.config)).fit(series.slice(start, s))
            p, lab = refit.predict(series.slice(start, s + 1), [s - start])
            preds.append(p[0])
            if lab is not None:
                labels.append(lab[0])
        return np.array(preds), (np.array(labels, dtype=int) if self.uses_hmm else None)


def _no_update(cfg: ForecastConfig) -> ForecastConfig:
    return ForecastConfig(**{**asdict(cfg), "online_update": False})


@dataclass
class ForecastRun:
    user_id: str
    method: str
    timestamps: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    latent: np.ndarray = None
    mape: float = float("nan")
    n_excluded: int = 0
    params: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, user_id, method, timestamps, y_true, y_pred, latent=None, params=None):
        y_true = np.asarray(y_true, dtype=float)
        y_pred = np.asarray(y_pred, dtype=float)
        try:
            value, excluded = mape(y_pred, y_true, return_excluded=True)
        except UndefinedMapeError:
            value, excluded = float("nan"), int(y_true.size)
        return cls(user_id, method, np.asarray(timestamps, dtype="datetime64[h]"), y_true, y_pred,
                   latent, value, excluded, dict(params or {}))

    def to_csv(self, path, metadata: dict = None) -> None:
        with Path(path).open("w", newline="") as fh:
            if metadata is not None:
                fh.write("# " + json.dumps(metadata, sort_keys=True, default=str) + "\n")
            fh.write("timestamp,y_true,y_pred,latent_label,method\n")
            for i, ts in enumerate(self.timestamps):
                lab = "" if self.latent is None else str(int(self.latent[i]))
                fh.write(f"{format_hour(ts)},{float(self.y_true[i])!r},{float(self.y_pred[i])!r},{lab},{self.method}\n")

    @classmethod
    def read_csv(cls, path, user_id=""):
        with Path(path).open() as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        method = rows[0]["method"] if rows else ""
        latent = None
        if rows and rows[0]["latent_label"] != "":
            latent = np.array([int(r["latent_label"]) for r in rows])
        return cls.from_predictions(
            user_id, method,
            np.array([parse_hour(r["timestamp"]) for r in rows], dtype="datetime64[h]"),
            [float(r["y_true"]) for r in rows], [float(r["y_pred"]) for r in rows], latent,
        )


def _check_contiguous(train: ConsumptionSeries, test: ConsumptionSeries):
    if len(test) and test.timestamps[0] != train.timestamps[-1] + HOUR:
        raise ValueError("test window must start right after the training window")


def run_forecast(train: ConsumptionSeries, test: ConsumptionSeries, method: str,
                 config: ForecastConfig = None) -> ForecastRun:
    """Fit on ``train`` and forecast every hour of ``test`` one step ahead."""
    _check_contiguous(train, test)
    model = Forecaster(method, config).fit(train)
    full = train.concat(test) if len(test) else train
    idx = np.arange(len(train), len(full))
    pred, labels = model.predict(full, idx)
    return ForecastRun.from_predictions(
        train.user_id, method, test.timestamps, test.consumption, pred, labels, model.params
    )


def forecast_hmm(train, test, method: str, config: ForecastConfig = None) -> ForecastRun:
    base = method.partition("+")[0]
    return run_forecast(train, test, f"{base}+hmm", config)


def forecast_baseline(train, test, method: str, config: ForecastConfig = None) -> ForecastRun:
    base = method.partition("+")[0]
    return run_forecast(train, test, base, config)


def forecast_cgmm(train, test, config: ForecastConfig = None) -> ForecastRun:
    return run_forecast(train, test, "cgmm", config)
