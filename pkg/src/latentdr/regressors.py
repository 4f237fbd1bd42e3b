"""Baseline regressors on a shared (X, y) design: least squares, k-nearest
neighbours, epsilon-SVR with a Gaussian kernel, and a CART regression tree.

Each family has plain fit/predict functions plus a small estimator class
with ``fit``/``predict`` used by the forecasting pipelines.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .metrics import ZERO_TRUTH

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message, gap):
        super().__init__(message)
        self.gap = gap


def as_design(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"design matrix must be N x d with N, d >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("design matrix contains non-finite entries")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {y.size} outcomes")
    if not np.all(np.isfinite(y)):
        raise ValueError("outcomes contain non-finite entries")
    return X, y


def _queries(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ValueError(f"covariate dimension {x.shape[1]} does not match model dimension {d}")
    return x, single


# -- least squares ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    rank_deficient: bool = False


def weighted_lstsq(X, y, weights=None):
    """Minimum-norm solution of the (weighted) least-squares problem and the
    numerical rank of the weighted design."""
    if weights is not None:
        root = np.sqrt(weights)
        X, y = X * root[:, None], y * root
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    return coef, rank


def fit_ols(X, y) -> LinearModel:
    X, y = as_design(X, y)
    w, rank = weighted_lstsq(X, y)
    if rank < X.shape[1]:
        log.debug("OLS design has rank %d < %d; using the minimum-norm solution", rank, X.shape[1])
    return LinearModel(w, rank < X.shape[1])


def predict_linear(model: LinearModel, x):
    x, single = _queries(x, model.weights.size)
    out = x @ model.weights
    return float(out[0]) if single else out


# -- k nearest neighbours --------------------------------------------------


def sq_distances(A, B):
    """Squared Euclidean distances between rows of A and rows of B, from
    explicit differences so exact ties stay exact."""
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, int(4_000_000 // max(B.size, 1)))
    for start in range(0, A.shape[0], step):
        diff = A[start:start + step, None, :] - B[None, :, :]
        out[start:start + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest_rows(X, x, k):
    """Indices of the k nearest training rows per query, ties to lower index."""
    dist = sq_distances(x, X)
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k]


def knn_predict(X, y, x, k: int):
    X, y = as_design(X, y)
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k={k} outside [1, {X.shape[0]}]")
    x, single = _queries(x, X.shape[1])
    out = y[nearest_rows(X, x, k)].mean(1)
    return float(out[0]) if single else out


# -- support vector regression ---------------------------------------------


def rbf_kernel(A, B, gamma):
    return np.exp(-gamma * sq_distances(A, B))


@dataclass(frozen=True, eq=False)
class SvrModel:
    coef: np.ndarray
    bias: float
    gamma: float
    C: float
    epsilon: float
    support: np.ndarray
    iterations: int = 0
    kkt_gap: float = 0.0
    alpha: np.ndarray = None
    alpha_star: np.ndarray = None


def fit_svr(X, y, C=1.0, epsilon=0.01, gamma=None, tol=1e-3, max_iter=100_000) -> SvrModel:
    """epsilon-SVR dual solved by sequential minimal optimization.

    The dual is written over 2N variables (alpha, alpha*) with labels +1/-1
    and solved with second-order working-set selection; the returned
    coefficients are ``alpha - alpha*``. ``gamma`` defaults to 1/d.
    """
    X, y = as_design(X, y)
    if not C > 0 or not epsilon >= 0:
        raise ValueError("need C > 0 and epsilon >= 0")
    n, d = X.shape
    gamma = 1.0 / d if gamma is None else float(gamma)
    if not gamma > 0:
        raise ValueError("gamma must be positive")

    K = rbf_kernel(X, X, gamma)
    z = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - y, epsilon + y])
    src = np.concatenate([np.arange(n), np.arange(n)])
    kdiag = np.diag(K)[src]
    alpha = np.zeros(2 * n)
    grad = p.copy()
    tau = 1e-12

    gap = np.inf
    it = 0
    while it < max_iter:
        up = ((z > 0) & (alpha < C)) | ((z < 0) & (alpha > 0))
        low = ((z > 0) & (alpha > 0)) | ((z < 0) & (alpha < C))
        score = -z * grad
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        g_max = score[i]
        g_min = score[low].min()
        gap = g_max - g_min
        if gap < tol:
            break
        k_i = K[src[i], src]
        cand = low & (score < g_max)
        b = g_max - score[cand]
        a = kdiag[i] + kdiag[cand] - 2.0 * k_i[cand]
        a = np.where(a > 0, a, tau)
        j = int(np.flatnonzero(cand)[np.argmax(b * b / a)])

        q_i = z[i] * z * k_i
        q_j = z[j] * z * K[src[j], src]
        old_i, old_j = alpha[i], alpha[j]
        if z[i] != z[j]:
            quad = kdiag[i] + kdiag[j] + 2.0 * q_i[j]
            quad = quad if quad > 0 else tau
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = kdiag[i] + kdiag[j] - 2.0 * q_i[j]
            quad = quad if quad > 0 else tau
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        grad += q_i * (alpha[i] - old_i) + q_j * (alpha[j] - old_j)
        it += 1
    else:
        raise ConvergenceError(f"SMO stopped after {max_iter} iterations with KKT gap {gap:.3g}", gap)

    # bias from free variables, else the midpoint of the feasible interval
    zg = z * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = zg[free].mean()
    else:
        at_upper = alpha >= C
        ub_set = (at_upper & (z < 0)) | (~at_upper & (z > 0))
        lb_set = (at_upper & (z > 0)) | (~at_upper & (z < 0))
        ub = zg[ub_set].min() if ub_set.any() else np.inf
        lb = zg[lb_set].max() if lb_set.any() else -np.inf
        rho = 0.5 * (ub + lb)
    coef = alpha[:n] - alpha[n:]
    return SvrModel(coef, float(-rho), gamma, float(C), float(epsilon), X, it, float(max(gap, 0.0)),
                    alpha[:n].copy(), alpha[n:].copy())


def svr_predict(model: SvrModel, x):
    x, single = _queries(x, model.support.shape[1])
    out = rbf_kernel(x, model.support, model.gamma) @ model.coef + model.bias
    return float(out[0]) if single else out


# -- regression tree -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-backed binary tree; leaves have ``feature == -1``. Every node
    stores the mean and count of the training outcomes routed to it."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    depth: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, node) -> bool:
        return self.feature[node] < 0


def best_split(X, y, min_samples_leaf=1):
    """Exhaustive search for the (feature, threshold) minimizing the
    count-weighted child MSE. Returns (feature, threshold, weighted_mse) or
    None when no admissible split exists. Ties go to the lowest feature,
    then the lowest threshold."""
    n, d = X.shape
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, 0)
    ys = y[order]
    c1 = np.cumsum(ys, 0)
    c2 = np.cumsum(ys * ys, 0)
    counts = np.arange(1, n)[:, None]
    left_sse = c2[:-1] - c1[:-1] ** 2 / counts
    right_sum = c1[-1] - c1[:-1]
    right_sse = (c2[-1] - c2[:-1]) - right_sum**2 / (n - counts)
    ok = (xs[:-1] < xs[1:]) & (counts >= min_samples_leaf) & (n - counts >= min_samples_leaf)
    if not ok.any():
        return None
    score = np.where(ok, np.maximum(left_sse, 0.0) + np.maximum(right_sse, 0.0), np.inf) / n
    j, pos = divmod(int(np.argmin(score.T.ravel())), n - 1)
    lo, hi = xs[pos, j], xs[pos + 1, j]
    t = 0.5 * (lo + hi)
    if not t < hi:
        t = lo
    return j, float(t), float(score[pos, j])


def fit_tree(X, y, max_depth: int = 5, min_samples_leaf: int = 1) -> RegressionTree:
    """Greedy CART growth; a node stays a leaf at ``max_depth``, when no
    admissible split exists, or when the best split does not lower the
    impurity. Goes left when ``x[j] <= threshold``."""
    X, y = as_design(X, y)
    if max_depth < 1 or min_samples_leaf < 1:
        raise ValueError("need max_depth >= 1 and min_samples_leaf >= 1")
    feature, threshold, left, right, value, count, impurity, depth = ([] for _ in range(8))

    def grow(idx, level):
        node = len(feature)
        ys = y[idx]
        h = float(ys.var())
        for lst, v in ((feature, -1), (threshold, np.nan), (left, -1), (right, -1),
                       (value, float(ys.mean())), (count, idx.size), (impurity, h), (depth, level)):
            lst.append(v)
        if level >= max_depth or h == 0.0 or idx.size < 2 * min_samples_leaf:
            return node
        split = best_split(X[idx], ys, min_samples_leaf)
        if split is None or not split[2] < h * (1.0 - 1e-12):
            return node
        j, t, _ = split
        go_left = X[idx, j] <= t
        feature[node], threshold[node] = j, t
        left[node] = grow(idx[go_left], level + 1)
        right[node] = grow(idx[~go_left], level + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return RegressionTree(
        np.array(feature), np.array(threshold), np.array(left), np.array(right),
        np.array(value), np.array(count), np.array(impurity), np.array(depth), X.shape[1],
    )


def tree_apply(tree: RegressionTree, x, max_depth=None) -> np.ndarray:
    """Node reached by each query row, optionally stopping at ``max_depth``."""
    x, _ = _queries(x, tree.n_features)
    node = np.zeros(x.shape[0], dtype=int)
    rows = np.arange(x.shape[0])
    while True:
        active = tree.feature[node] >= 0
        if max_depth is not None:
            active &= tree.depth[node] < max_depth
        if not active.any():
            return node
        cur = node[active]
        goes_left = x[rows[active], tree.feature[cur]] <= tree.threshold[cur]
        node[active] = np.where(goes_left, tree.left[cur], tree.right[cur])


def tree_predict(tree: RegressionTree, x, max_depth=None):
    single = np.asarray(x).ndim == 1
    out = tree.value[tree_apply(tree, x, max_depth)]
    return float(out[0]) if single else out


# -- estimator wrappers ----------------------------------------------------


@dataclass
class OLS:
    model: LinearModel = None

    def fit(self, X, y):
        self.model = fit_ols(X, y)
        return self

    def predict(self, X):
        return predict_linear(self.model, np.atleast_2d(X))


@dataclass
class KNN:
    k: int = 5
    scale: bool = False
    _X: np.ndarray = field(default=None, repr=False)
    _y: np.ndarray = field(default=None, repr=False)
    _mu: np.ndarray = field(default=None, repr=False)
    _sd: np.ndarray = field(default=None, repr=False)

    def fit(self, X, y):
        X, y = as_design(X, y)
        if self.scale:
            self._mu, self._sd = X.mean(0), X.std(0)
            self._sd[self._sd == 0] = 1.0
            X = (X - self._mu) / self._sd
        self._X, self._y = X, y
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.scale:
            X = (X - self._mu) / self._sd
        return knn_predict(self._X, self._y, X, self.k)


@dataclass
class SVR:
    C: float = 1.0
    epsilon: float = 0.01
    gamma: float = None
    model: SvrModel = None

    def fit(self, X, y):
        self.model = fit_svr(X, y, C=self.C, epsilon=self.epsilon, gamma=self.gamma)
        return self

    def predict(self, X):
        return svr_predict(self.model, np.atleast_2d(X))


@dataclass
class DecisionTree:
    max_depth: int = 5
    min_samples_leaf: int = 1
    tree: RegressionTree = None

    def fit(self, X, y):
        self.tree = fit_tree(X, y, self.max_depth, self.min_samples_leaf)
        return self

    def predict(self, X):
        return tree_predict(self.tree, np.atleast_2d(X))


FAMILIES = {"ols": OLS, "knn": KNN, "svr": SVR, "dt": DecisionTree}


def make_regressor(method: str, **params):
    try:
        cls = FAMILIES[method]
    except KeyError:
        raise ValueError(f"unknown regressor family {method!r}") from None
    return cls(**params)


# -- cross-validation ------------------------------------------------------


def _complexity(method, params):
    """Sort key: smaller means simpler."""
    if method == "knn":
        return (params.get("k", 0),)
    if method == "dt":
        return (params.get("max_depth", 0), -params.get("min_samples_leaf", 1))
    if method == "svr":
        return (-params.get("epsilon", 0.0), params.get("C", 0.0), params.get("gamma") or 0.0)
    return ()


def _fold_mape(pred, truth):
    keep = np.abs(truth) >= ZERO_TRUTH
    if not keep.any():
        return np.nan
    return float(np.mean(np.abs((pred[keep] - truth[keep]) / truth[keep])) * 100.0)


def cross_validate(X, y, method: str, grid, folds: int = 5) -> dict:
    """Grid point with the lowest mean out-of-fold MAPE.

    Folds are contiguous blocks in row (time) order. Grid points that cannot
    be fitted on some training split (e.g. k larger than the split) are
    skipped; ties go to the simpler model.
    """
    X, y = as_design(X, y)
    grid = [dict(g) for g in grid]
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if len(grid) == 1:
        return grid[0]
    n = X.shape[0]
    if n < folds:
        raise ValueError(f"{n} rows cannot form {folds} folds")
    blocks = np.array_split(np.arange(n), folds)
    scores = np.zeros(len(grid))
    feasible = np.ones(len(grid), dtype=bool)
    for test in blocks:
        train = np.setdiff1d(np.arange(n), test)
        Xtr, ytr, Xte, yte = X[train], y[train], X[test], y[test]
        if method == "dt" and all(set(g) <= {"max_depth", "min_samples_leaf"} for g in grid):
            preds = _tree_path_predictions(Xtr, ytr, Xte, grid)
        else:
            preds = []
            for g in grid:
                if method == "knn" and g.get("k", 1) > train.size:
                    preds.append(None)
                    continue
                preds.append(make_regressor(method, **g).fit(Xtr, ytr).predict(Xte))
        for i, pred in enumerate(preds):
            if pred is None:
                feasible[i] = False
                continue
            s = _fold_mape(pred, yte)
            scores[i] += 0.0 if np.isnan(s) else s / folds
    if not feasible.any():
        raise ValueError(f"folds too small for every {method} grid point")
    order = sorted(np.flatnonzero(feasible), key=lambda i: (scores[i], _complexity(method, grid[i])))
    return grid[order[0]]


def _tree_path_predictions(Xtr, ytr, Xte, grid):
    """Greedy growth does not depend on the depth cap, so one deep tree per
    min_samples_leaf serves every depth on the grid."""
    out = []
    trees = {}
    for g in grid:
        msl = g.get("min_samples_leaf", 1)
        deepest = max(h.get("max_depth", 5) for h in grid if h.get("min_samples_leaf", 1) == msl)
        if msl not in trees:
            trees[msl] = fit_tree(Xtr, ytr, deepest, msl)
        out.append(tree_predict(trees[msl], Xte, g.get("max_depth", 5)))
    return out
