"""Input validation helpers for the estimator API."""
import numpy as np
from sklearn.utils import check_array

from .exceptions import DataError


def check_series(x, name="X", min_length=1):
    """Return ``x`` as a finite 1-D float64 array.

    Accepts shape ``(m,)`` or a single-column ``(m, 1)``.
    """
    arr = check_array(x, ensure_2d=False, dtype=np.float64, input_name=name)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise DataError(f"{name} must be a 1-D series or a single column, got shape {arr.shape}")
    if len(arr) < min_length:
        raise DataError(f"{name} has {len(arr)} samples, need at least {min_length}")
    return np.ascontiguousarray(arr)


def is_segment_list(x):
    """True when ``x`` is a list/tuple of 1-D series rather than one series."""
    return isinstance(x, (list, tuple)) and len(x) > 0 and np.ndim(x[0]) >= 1


def check_segments(X, y=None, min_length=1):
    """Normalize one series or a list of series into a list of 1-D arrays.

    When ``y`` is given it must have the same segment structure and lengths.
    """
    xs = list(X) if is_segment_list(X) else [X]
    xs = [check_series(x, "X", min_length) for x in xs]
    if y is None:
        return xs, None
    ys = list(y) if is_segment_list(y) else [y]
    if len(ys) != len(xs):
        raise DataError(f"X has {len(xs)} segments but y has {len(ys)}")
    ys = [check_series(t, "y", min_length) for t in ys]
    for i, (a, t) in enumerate(zip(xs, ys)):
        if len(a) != len(t):
            raise DataError(f"segment {i}: X has {len(a)} samples but y has {len(t)}")
    return xs, ys
