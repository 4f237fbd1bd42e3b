"""Hidden Markov model over hour-of-day states with Gaussian emissions.

The inference routines are written for an arbitrary number of states. The
daily layout used for consumption data (a High and a Low state for every hour
between 6:00 and 20:00, one state for every other hour, 38 in total) is built
by :func:`build_state_space`; its transition mask only lets hour-h states move
to hour-(h+1) states.

Forward quantities use the convention ``alpha_t(i) = P(y_0..y_{t-1}, q_t = i)``
and are stored normalized, i.e. ``ForwardPass.alpha[t] = P(q_t | y_0..y_{t-1})``.
The per-step normalizers ``P(y_t | y_0..y_{t-1})`` are kept so that
``log P(Y)`` is their log-sum.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .em import EmTrace

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
VAR_FLOOR = 1e-6
DUAL_HOURS = tuple(range(6, 20))
SINGLE, HIGH, LOW = "S", "H", "L"
SUPPORT_TOL = 1e-6
VISIT_TOL = 1e-12


class HmmError(ValueError):
    pass


class ZeroLikelihoodError(HmmError):
    def __init__(self, index):
        super().__init__(f"observation {index} has zero likelihood under the model")
        self.index = index


class ConsistencyError(HmmError):
    pass


class InsufficientDataError(HmmError):
    pass


@dataclass(frozen=True, eq=False)
class StateSpace:
    hours: np.ndarray
    levels: tuple
    mask: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.levels)

    def states_for_hour(self, hour) -> np.ndarray:
        return np.flatnonzero(self.hours == hour % 24)

    def name(self, state: int) -> str:
        level = self.levels[state]
        hour = int(self.hours[state])
        return str(hour) if level == SINGLE else f"{hour}{level}"

    def index(self, name: str) -> int:
        names = [self.name(i) for i in range(self.n_states)]
        return names.index(name)

    def is_high(self) -> np.ndarray:
        return np.array([lvl == HIGH for lvl in self.levels])


def build_state_space(dual_hours=DUAL_HOURS) -> StateSpace:
    """Daily state layout, ordered by hour with High before Low."""
    dual = set(dual_hours)
    hours, levels = [], []
    for h in range(24):
        if h in dual:
            hours += [h, h]
            levels += [HIGH, LOW]
        else:
            hours.append(h)
            levels.append(SINGLE)
    hours = np.array(hours)
    mask = hours[None, :] == (hours[:, None] + 1) % 24
    return StateSpace(hours=hours, levels=tuple(levels), mask=mask)


@dataclass(frozen=True, eq=False)
class HmmModel:
    pi: np.ndarray
    transitions: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    space: StateSpace = None

    def __post_init__(self):
        for name in ("pi", "transitions", "means", "variances"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        m = self.pi.size
        if self.transitions.shape != (m, m) or self.means.shape != (m,) or self.variances.shape != (m,):
            raise HmmError("inconsistent parameter shapes")
        if self.space is not None:
            if self.space.n_states != m:
                raise HmmError("state space size does not match parameters")
            if np.any(self.transitions[~self.space.mask] != 0.0):
                raise HmmError("transition mass on a masked entry")
        if np.any(self.transitions < 0) or not np.allclose(self.transitions.sum(1), 1.0, atol=1e-8):
            raise HmmError("transition rows must be probability vectors")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-8:
            raise HmmError("initial distribution must sum to one")
        if np.any(self.variances <= 0):
            raise HmmError("emission variances must be positive")

    @property
    def n_states(self) -> int:
        return self.pi.size

    @property
    def mask(self) -> np.ndarray:
        if self.space is None:
            return np.ones((self.n_states, self.n_states), dtype=bool)
        return self.space.mask

    def log_emissions(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1, 1)
        with np.errstate(over="ignore"):
            return -0.5 * (LOG_2PI + np.log(self.variances) + (y - self.means) ** 2 / self.variances)

    def restarted(self, hour: int) -> "HmmModel":
        """Copy whose initial distribution sits on the states of ``hour``."""
        states = self.space.states_for_hour(hour)
        if self.pi[states].sum() > 1.0 - 1e-12:
            return self
        pi = np.zeros(self.n_states)
        pi[states] = 1.0 / len(states)
        return HmmModel(pi, self.transitions, self.means, self.variances, self.space)

    def to_dict(self) -> dict:
        out = {
            "pi": self.pi.tolist(),
            "transitions": self.transitions.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }
        if self.space is not None:
            out["states"] = [self.space.name(i) for i in range(self.n_states)]
            out["hours"] = self.space.hours.tolist()
            out["levels"] = list(self.space.levels)
            out["mask"] = self.space.mask.astype(int).tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "HmmModel":
        space = None
        if "levels" in doc:
            space = StateSpace(
                hours=np.array(doc["hours"]),
                levels=tuple(doc["levels"]),
                mask=np.array(doc["mask"], dtype=bool),
            )
        return cls(doc["pi"], doc["transitions"], doc["means"], doc["variances"], space)


@dataclass(frozen=True, eq=False)
class ForwardPass:
    alpha: np.ndarray
    emission: np.ndarray
    scale: np.ndarray
    shift: np.ndarray

    @property
    def log_scale(self) -> np.ndarray:
        """``log P(y_t | y_0..y_{t-1})`` for every t."""
        return np.log(self.scale) + self.shift

    @property
    def loglik(self) -> float:
        return float(self.log_scale.sum())

    def filtered(self, t: int) -> np.ndarray:
        return self.alpha[t] * self.emission[t] / self.scale[t]


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    marginals: np.ndarray
    pair_counts: np.ndarray
    loglik: float
    pairwise: np.ndarray = None


def _as_obs(y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise HmmError("empty observation sequence")
    if not np.all(np.isfinite(y)):
        raise HmmError("observations must be finite")
    return y


def forward(model: HmmModel, y) -> ForwardPass:
    """Scaled alpha recursion.

    Emission densities are divided by ``exp(shift[t])``, the largest density
    among states that still carry forward mass, so nothing underflows.
    ``alpha`` has one row more than ``y``: the last row is the one-step-ahead
    state distribution.
    """
    y = _as_obs(y)
    n, m = y.size, model.n_states
    logb = model.log_emissions(y)
    A = model.transitions
    alpha = np.empty((n + 1, m))
    emission = np.empty((n, m))
    scale = np.empty(n)
    shift = np.empty(n)
    a = model.pi
    for t in range(n):
        alpha[t] = a
        support = a > 0
        top = logb[t, support].max() if support.any() else -np.inf
        if not np.isfinite(top):
            raise ZeroLikelihoodError(t)
        b = np.exp(np.minimum(logb[t] - top, 0.0))
        w = a * b
        s = w.sum()
        if not s > 0:
            raise ZeroLikelihoodError(t)
        emission[t], scale[t], shift[t] = b, s, top
        a = (w / s) @ A
    alpha[n] = a
    return ForwardPass(alpha=alpha, emission=emission, scale=scale, shift=shift)


def backward(model: HmmModel, y, fwd: ForwardPass = None) -> np.ndarray:
    """Scaled beta table.

    ``beta[t] * exp(sum(fwd.log_scale[t+1:]))`` is ``P(y_{t+1}..y_T | q_t)``
    for every state that carries forward mass at t.
    """
    if fwd is None:
        fwd = forward(model, y)
    n, m = fwd.emission.shape
    A = model.transitions
    beta = np.empty((n, m))
    beta[n - 1] = 1.0
    for t in range(n - 2, -1, -1):
        beta[t] = A @ (fwd.emission[t + 1] * beta[t + 1]) / fwd.scale[t + 1]
    return beta


def posteriors(model: HmmModel, y, pairwise: bool = False) -> PosteriorTable:
    fwd = forward(model, y)
    beta = backward(model, y, fwd)
    A = model.transitions
    filt = fwd.alpha[:-1] * fwd.emission / fwd.scale[:, None]
    marginals = filt * beta
    ahead = fwd.emission[1:] * beta[1:] / fwd.scale[1:, None]
    counts = A * (filt[:-1].T @ ahead)
    pw = None
    if pairwise:
        pw = filt[:-1, :, None] * A[None, :, :] * ahead[:, None, :]
    return PosteriorTable(marginals=marginals, pair_counts=counts, loglik=fwd.loglik, pairwise=pw)


def filter_state(model: HmmModel, y) -> np.ndarray:
    """``P(q_T | y_0..y_T)``."""
    fwd = forward(model, y)
    return fwd.filtered(len(fwd.scale) - 1)


def predict_state(model: HmmModel, y) -> np.ndarray:
    """``P(q_{T+1} | y_0..y_T)``."""
    return forward(model, y).alpha[-1]


def smooth(model: HmmModel, y, p: int) -> np.ndarray:
    """``P(q_p | y_0..y_T)`` for ``0 <= p <= T``."""
    y = _as_obs(y)
    if not 0 <= p < y.size:
        raise IndexError(f"time index {p} outside [0, {y.size - 1}]")
    return posteriors(model, y).marginals[p]


def latent_labels(dists, space: StateSpace) -> np.ndarray:
    """Binary High/Low labels for a stack of state distributions.

    A row whose mass sits on a dual hour gets 1 when the High state holds at
    least half of it; rows on single-state hours get 1.
    """
    P = np.atleast_2d(np.asarray(dists, dtype=float))
    hours = space.hours
    dominant = hours[np.argmax(P, axis=1)]
    stray = np.where(hours[None, :] != dominant[:, None], P, 0.0).sum(1)
    bad = np.flatnonzero(stray > SUPPORT_TOL)
    if bad.size:
        raise ConsistencyError(
            f"distribution {bad[0]} puts {stray[bad[0]]:.3g} mass outside hour {dominant[bad[0]]}"
        )
    high = space.is_high()
    same = hours[None, :] == dominant[:, None]
    p_hour = np.where(same, P, 0.0).sum(1)
    p_high = np.where(same & high[None, :], P, 0.0).sum(1)
    dual = np.isin(dominant, hours[high])
    labels = np.ones(len(P), dtype=int)
    labels[dual] = (p_high[dual] >= 0.5 * p_hour[dual]).astype(int)
    return labels


def latent_label(dist, space: StateSpace) -> int:
    return int(latent_labels(dist, space)[0])


def init_params(series, space: StateSpace = None, seed: int = 0) -> HmmModel:
    """Data-driven starting point for Baum-Welch.

    High/Low means start at the 75th/25th percentile of the hour's readings,
    single states at the hourly mean; variances at the hourly sample variance.
    Transitions favour staying on the same level (0.7 vs 0.3) plus a seeded
    jitter of at most 0.05 before renormalizing.
    """
    space = space or build_state_space()
    y = np.asarray(series.consumption, dtype=float)
    hours = np.asarray(series.hours)
    if y.size < 7 * 24:
        raise InsufficientDataError(f"need at least 168 hourly readings, got {y.size}")
    m = space.n_states
    means = np.empty(m)
    variances = np.empty(m)
    for h in range(24):
        vals = y[hours == h]
        states = space.states_for_hour(h)
        variances[states] = max(vals.var(ddof=1), VAR_FLOOR) if vals.size > 1 else VAR_FLOOR
        if states.size == 2:
            means[states[0]] = np.percentile(vals, 75)
            means[states[1]] = np.percentile(vals, 25)
        else:
            means[states] = vals.mean()

    rng = np.random.default_rng(seed)
    A = np.zeros((m, m))
    for i in range(m):
        targets = np.flatnonzero(space.mask[i])
        if targets.size == 1:
            A[i, targets] = 1.0
            continue
        if space.levels[i] == SINGLE:
            base = np.full(targets.size, 1.0 / targets.size)
        else:
            base = np.array([0.7 if space.levels[j] == space.levels[i] else 0.3 for j in targets])
        row = base + rng.uniform(0.0, 0.05, targets.size)
        A[i, targets] = row / row.sum()

    first = space.states_for_hour(hours[0])
    pi = np.zeros(m)
    pi[first[np.argmin(np.abs(means[first] - y[0]))]] = 1.0
    return HmmModel(pi, A, means, variances, space)


def baum_welch_step(model: HmmModel, y, post: PosteriorTable) -> HmmModel:
    """One M-step. States with no posterior weight keep their parameters."""
    y = _as_obs(y)
    gamma = post.marginals
    weight = gamma.sum(0)
    visited = weight > VISIT_TOL
    means = model.means.copy()
    variances = model.variances.copy()
    means[visited] = (gamma[:, visited].T @ y) / weight[visited]
    spread = (gamma * (y[:, None] - means[None, :]) ** 2).sum(0)
    variances[visited] = np.maximum(spread[visited] / weight[visited], VAR_FLOOR)

    counts = np.where(model.mask, post.pair_counts, 0.0)
    rows = counts.sum(1)
    left = rows > VISIT_TOL
    A = model.transitions.copy()
    A[left] = counts[left] / rows[left, None]
    pi = gamma[0] / gamma[0].sum()
    if not (visited.all() and left.all()):
        log.debug("%d states / %d rows held at previous values", (~visited).sum(), (~left).sum())
    return HmmModel(pi, A, means, variances, model.space)


def em_fit(model: HmmModel, y, tol: float = 1e-4, max_iter: int = 200):
    """Baum-Welch from a given starting model.

    Stops when ``log P(Y)`` rises by less than ``tol``; the trace records
    ``log P(Y)`` of every visited parameter set.
    """
    y = _as_obs(y)
    trace = EmTrace()
    post = posteriors(model, y)
    trace.values.append(post.loglik)
    for _ in range(max_iter):
        model = baum_welch_step(model, y, post)
        post = posteriors(model, y)
        trace.values.append(post.loglik)
        if trace.values[-1] - trace.values[-2] < tol:
            trace.converged = True
            break
    return model, trace


def fit_hmm(series, tol: float = 1e-4, max_iter: int = 200, seed: int = 0, space: StateSpace = None):
    model = init_params(series, space, seed)
    return em_fit(model, series.consumption, tol=tol, max_iter=max_iter)


def simulate(model: HmmModel, n: int, rng) -> tuple:
    """Draw ``n`` steps of (state, observation) from the model."""
    states = np.empty(n, dtype=int)
    q = rng.choice(model.n_states, p=model.pi)
    for t in range(n):
        states[t] = q
        q = rng.choice(model.n_states, p=model.transitions[q])
    y = rng.normal(model.means[states], np.sqrt(model.variances[states]))
    return states, y
