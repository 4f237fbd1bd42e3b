import numpy as np

ZERO_TRUTH = 1e-9


class UndefinedMapeError(ValueError):
    pass


def mape(predictions, truth, return_excluded=False):
    """Mean absolute percentage error in percent.

    Truth values with magnitude below ``ZERO_TRUTH`` are left out of the
    average; with ``return_excluded=True`` their count is returned too.
    """
    pred = np.asarray(predictions, dtype=float).ravel()
    true = np.asarray(truth, dtype=float).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {true.size} truth values")
    if pred.size == 0:
        raise UndefinedMapeError("MAPE needs at least one point")
    keep = np.abs(true) >= ZERO_TRUTH
    n_excluded = int(pred.size - keep.sum())
    if not keep.any():
        raise UndefinedMapeError("every truth value is zero; MAPE undefined")
    value = float(np.mean(np.abs((pred[keep] - true[keep]) / true[keep])) * 100.0)
    if return_excluded:
        return value, n_excluded
    return value
