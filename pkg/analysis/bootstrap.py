import warnings
from typing import Callable, NamedTuple

import numpy as np

from analysis.errors import InvalidArgument

DEFAULT_RESAMPLES = 1000


class BootstrapResult(NamedTuple):
    estimate: float | np.ndarray
    std_error: float | np.ndarray


def bootstrap(values, statistic: Callable = np.mean, n_resamples: int = DEFAULT_RESAMPLES,
              seed=0) -> BootstrapResult:
    """
    Resample the first axis of `values` with replacement n_resamples times.
    estimate is statistic(values); std_error is the spread of the resampled statistic
    (nan resamples are ignored).
    """
    values = np.asarray(values)
    if values.ndim == 0 or values.shape[0] == 0:
        raise InvalidArgument("bootstrap needs at least one value")
    if n_resamples < 1:
        raise InvalidArgument("n_resamples must be >= 1")

    rng = np.random.default_rng(seed)
    n = values.shape[0]
    vals = []
    for _ in range(n_resamples):
        ind = rng.integers(0, n, size=n)
        vals.append(statistic(values[ind]))
    vals = np.asarray(vals, dtype=np.float64)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        err = np.nanstd(vals, axis=0)
    est = np.asarray(statistic(values), dtype=np.float64)
    if est.ndim == 0:
        return BootstrapResult(float(est), float(err))
    return BootstrapResult(est, err)
