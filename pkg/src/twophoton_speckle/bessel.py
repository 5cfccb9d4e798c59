"""Integer-order modified Bessel functions of the second kind.

K_0 and K_1 come from the exponentially scaled Cephes kernels in
:mod:`scipy.special`; higher orders follow from the upward recurrence

    K_{n+1}(x) = K_{n-1}(x) + (2n/x) K_n(x),

which is stable for K. The recurrence is run on the ratio
``K_{n+1}/K_n`` and accumulated in log-space, so orders in the hundreds at
small argument do not overflow.
"""

import numpy as np
from scipy.special import k0e, k1e

__all__ = ["log_bessel_k_table", "log_bessel_k_int", "bessel_k_int"]


def _as_positive(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("bessel_k_int requires x > 0")
    return x


def log_bessel_k_table(nmax, x):
    """Return ``log K_k(x)`` for every ``k = 0..nmax``.

    The result has shape ``(nmax + 1,) + np.shape(x)``.
    """
    if nmax < 0 or int(nmax) != nmax:
        raise ValueError("order must be a non-negative integer")
    nmax = int(nmax)
    x = _as_positive(x)
    out = np.empty((nmax + 1,) + x.shape)
    k0 = k0e(x)
    out[0] = np.log(k0) - x
    if nmax == 0:
        return out
    k1 = k1e(x)
    out[1] = np.log(k1) - x
    ratio = k1 / k0  # K_{k}/K_{k-1}
    for k in range(1, nmax):
        ratio = 1.0 / ratio + 2.0 * k / x
        out[k + 1] = out[k] + np.log(ratio)
    return out


def log_bessel_k_int(n, x):
    """``log K_n(x)`` for integer ``n >= 0`` and ``x > 0``."""
    return log_bessel_k_table(n, x)[-1]


def bessel_k_int(n, x):
    """Modified Bessel function of the second kind, integer order ``n``.

    Overflows to ``inf`` where ``K_n(x)`` exceeds the double range; use
    :func:`log_bessel_k_int` there.
    """
    out = np.exp(log_bessel_k_int(n, x))
    return float(out) if out.ndim == 0 else out
