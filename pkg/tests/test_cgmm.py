import numpy as np
import pytest
from scipy.stats import norm

from latentdr import cgmm
from latentdr.regressors import fit_ols, predict_linear

from oracles import two_line_mixture


def _model(weights, coefs, sigma2, resp=None, X=None):
    return cgmm.CgmmModel(np.asarray(weights, float), np.asarray(coefs, float), sigma2,
                          None if resp is None else np.asarray(resp, float),
                          None if X is None else np.asarray(X, float))


# -- E-step --------------------------------------------------------------------


def test_e_step_single_component():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(20, 2)), rng.normal(size=20)
    resp = cgmm.cgmm_e_step(_model([1.0], [[0.3, -0.2]], 0.5), X, y)
    assert np.all(resp == 1.0)


def test_e_step_identical_components_return_the_prior():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(15, 2)), rng.normal(size=15)
    resp = cgmm.cgmm_e_step(_model([0.3, 0.7], [[1.0, 2.0], [1.0, 2.0]], 0.4), X, y)
    assert np.allclose(resp, [0.3, 0.7], atol=1e-12)


def test_e_step_matches_hand_gaussian_ratio():
    X = np.array([[1.0], [2.0]])
    y = np.array([1.2, -1.5])
    model = _model([0.4, 0.6], [[1.0], [-1.0]], 0.3)
    sd = np.sqrt(0.3)
    for i in range(2):
        a = 0.4 * norm.pdf(y[i], 1.0 * X[i, 0], sd)
        b = 0.6 * norm.pdf(y[i], -1.0 * X[i, 0], sd)
        assert cgmm.cgmm_e_step(model, X, y)[i] == pytest.approx([a / (a + b), b / (a + b)], abs=1e-9)


def test_e_step_survives_tiny_variance():
    X = np.array([[1.0], [2.0], [3.0]])
    y = np.array([1.0, -2.0, 30.0])
    resp = cgmm.cgmm_e_step(_model([0.5, 0.5], [[1.0], [-1.0]], 1e-10), X, y)
    assert np.all(np.isfinite(resp))
    assert np.allclose(resp.sum(1), 1.0, atol=1e-12)
    assert resp[0, 0] == 1.0 and resp[1, 1] == 1.0


# -- M-step --------------------------------------------------------------------


def test_m_step_point_mass_gives_ols():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(30, 3)), rng.normal(size=30)
    resp = np.column_stack([np.ones(30), np.zeros(30)])
    weights, coefs, sigma2 = cgmm.cgmm_m_step(resp, X, y)
    w = fit_ols(X, y).weights
    assert weights.tolist() == [1.0, 0.0]
    assert np.allclose(coefs[0], w, atol=1e-12)
    assert sigma2 == pytest.approx(np.mean((y - X @ w) ** 2))


def test_m_step_uniform_responsibilities_give_ols_twice():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(30, 2)), rng.normal(size=30)
    _, coefs, _ = cgmm.cgmm_m_step(np.full((30, 2), 0.5), X, y)
    w = fit_ols(X, y).weights
    assert np.allclose(coefs, [w, w], atol=1e-12)


def test_m_step_matches_hand_weighted_least_squares():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
    y = np.array([1.0, 2.0, 4.0])
    d = np.array([1.0, 0.5, 0.25])
    # X'DX = [[1.75, 1.0], [1.0, 1.5]], X'Dy = [3.0, 3.0]; det = 1.625
    # w = [[1.5, -1.0], [-1.0, 1.75]] @ [3, 3] / 1.625 = (1.5, 2.25) / 1.625
    resp = np.column_stack([d, 1.0 - d])
    _, coefs, _ = cgmm.cgmm_m_step(resp, X, y)
    assert np.allclose(coefs[0], [1.5 / 1.625, 2.25 / 1.625], atol=1e-12)


# -- fitting -------------------------------------------------------------------


def test_k1_equals_ols():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 3))
    y = X @ [1.0, -1.0, 0.5] + 0.3 * rng.normal(size=60)
    model, trace = cgmm.fit_cgmm(X, y, K=1)
    w = fit_ols(X, y).weights
    assert np.allclose(model.coefs[0], w, atol=1e-12)
    assert model.sigma2 == pytest.approx(np.mean((y - X @ w) ** 2), rel=1e-12)
    Xq = rng.normal(size=(10, 3))
    assert np.allclose(cgmm.cgmm_predict(model, Xq), predict_linear(fit_ols(X, y), Xq), atol=1e-9)
    assert trace.converged


def test_huge_tolerance_stops_after_one_iteration():
    X, y = two_line_mixture(0, n=100)
    _, trace = cgmm.fit_cgmm(X, y, K=2, tol=1e9)
    assert trace.iterations == 1 and trace.converged


def test_max_iter_reached_reports_not_converged():
    X, y = two_line_mixture(1, n=100)
    _, trace = cgmm.fit_cgmm(X, y, K=2, tol=0.0, max_iter=3)
    assert trace.iterations == 3 and not trace.converged


@pytest.mark.parametrize("seed", range(10))
def test_em_trace_is_monotone(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(120), rng.normal(size=(120, 2))])
    y = np.where(rng.random(120) < 0.3, X @ [1.0, 2.0, 0.0], X @ [-1.0, 0.0, 1.0]) + 0.2 * rng.normal(size=120)
    model, trace = cgmm.fit_cgmm(X, y, K=3, seed=seed)
    assert trace.is_monotone(1e-9)
    assert abs(model.weights.sum() - 1.0) < 1e-12
    assert np.allclose(model.responsibilities.sum(1), 1.0, atol=1e-12)
    assert model.sigma2 > 0


def test_two_line_recovery():
    X, y = two_line_mixture(7)
    model, _ = cgmm.fit_cgmm(X, y, K=2, seed=7)
    slopes = np.sort(model.coefs[:, 0])
    assert slopes == pytest.approx([-2.0, 2.0], rel=0.05)
    assert np.all(np.abs(model.weights - 0.5) < 0.05)


def test_fit_is_deterministic_for_a_seed():
    X, y = two_line_mixture(3, n=150)
    a, _ = cgmm.fit_cgmm(X, y, seed=5)
    b, _ = cgmm.fit_cgmm(X, y, seed=5)
    assert np.array_equal(a.coefs, b.coefs) and a.sigma2 == b.sigma2


# -- prediction ----------------------------------------------------------------


def test_predict_single_component():
    model = _model([1.0], [[2.0, -1.0]], 1.0, [[1.0], [1.0]], [[0.0, 0.0], [5.0, 5.0]])
    assert cgmm.cgmm_predict(model, [3.0, 1.0]) == 5.0


def test_predict_point_mass_responsibility():
    model = _model([0.5, 0.5], [[2.0], [-3.0]], 1.0, [[1.0, 0.0], [0.0, 1.0]], [[1.0], [4.0]])
    assert cgmm.cgmm_predict(model, [1.0]) == 2.0


def test_predict_three_row_fixture():
    resp = [[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]]
    model = _model([0.5, 0.5], [[1.0, 1.0], [2.0, -1.0]], 1.0, resp, [[0.0, 0.0], [2.0, 2.0], [4.0, 0.0]])
    # nearest to (2.4, 1.5) is row 1; w1.x = 3.9, w2.x = 3.3; 0.2 * 3.9 + 0.8 * 3.3 = 3.42
    assert cgmm.cgmm_predict(model, [2.4, 1.5]) == pytest.approx(3.42, abs=1e-12)


def test_predict_is_invariant_to_label_swaps():
    X, y = two_line_mixture(9, n=120)
    model, _ = cgmm.fit_cgmm(X, y, K=2, seed=9)
    Xq = np.linspace(-1, 1, 17)[:, None]
    assert np.allclose(cgmm.cgmm_predict(model.permuted([1, 0]), Xq), cgmm.cgmm_predict(model, Xq), atol=1e-14)


def test_predict_errors():
    with pytest.raises(ValueError):
        cgmm.cgmm_predict(_model([1.0], [[1.0]], 1.0), [0.0])
    model = _model([1.0], [[1.0]], 1.0, [[1.0]], [[0.0]])
    with pytest.raises(ValueError):
        cgmm.cgmm_predict(model, [0.0, 1.0])


def test_json_round_trip():
    X, y = two_line_mixture(2, n=40)
    model, _ = cgmm.fit_cgmm(X, y)
    back = cgmm.CgmmModel.from_dict(model.to_dict())
    assert np.array_equal(back.coefs, model.coefs)
    assert np.array_equal(cgmm.cgmm_predict(back, X), cgmm.cgmm_predict(model, X))
