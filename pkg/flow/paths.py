import numpy as np

from utils.exceptions import DomainError, ShapeError


def _pair(x0, x1):
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"Endpoints differ in shape: {x0.shape} vs {x1.shape}")
    return x0, x1


def interpolate(x0, x1, t):
    """
    X_t = (1 - t) X_0 + t X_1.

    `t` is a scalar, or a vector with one entry per row of x0/x1.
    """
    x0, x1 = _pair(x0, x1)
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"Interpolation time must lie in [0, 1], got {t}")
    if t.ndim == 1 and x0.ndim > 1:
        t = t.reshape((-1,) + (1,) * (x0.ndim - 1))
    # Endpoints come back exactly: 1*x0 + 0*x1 and 0*x0 + 1*x1
    return (1.0 - t) * x0 + t * x1


def velocity_target(x0, x1):
    """V_t = X_1 - X_0, independent of t."""
    x0, x1 = _pair(x0, x1)
    return x1 - x0
