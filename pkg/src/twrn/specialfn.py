"""Modified Bessel functions of order 0 and 1, the Laguerre function
L_{1/2} at negative arguments, and the function Q(x) = (pi/4) L_{1/2}(-x)^2 - x.

Everything that multiplies Bessel values by e^{-x} is evaluated with the
exponentially scaled kernels so that nothing overflows for large x.
All functions accept scalars or numpy arrays and return the same shape.
"""

import numpy as np

__all__ = [
    "bessel_i",
    "bessel_i0e",
    "bessel_i1e",
    "laguerre_half_neg",
    "q_function",
    "q_expansion_terms",
]

# Power series below, asymptotic expansion above. Both branches agree to
# ~1e-14 here (the smallest asymptotic term at x=15 is ~e^{-2x}).
_CROSSOVER = 15.0
_SERIES_TERMS = 60
_ASYMPTOTIC_TERMS = 30


def _check_nonneg(x, name="x"):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise ValueError(f"{name} must be non-negative, got {x!r}")
    return x


def _series_scaled(order, x):
    # e^{-x} * sum_k (x/2)^{2k+order} / (k! (k+order)!)
    q = 0.25 * x * x
    term = np.ones_like(x) if order == 0 else 0.5 * x
    total = term.copy()
    for k in range(1, _SERIES_TERMS):
        term = term * q / (k * (k + order))
        total = total + term
    return total * np.exp(-x)


def _asymptotic_scaled(order, x):
    # e^{-x} I_order(x) ~ (2 pi x)^{-1/2} sum_k (-1)^k prod_j (4 order^2 - (2j-1)^2) / (k! (8x)^k)
    mu = 4.0 * order * order
    term = np.ones_like(x)
    total = term.copy()
    for k in range(1, _ASYMPTOTIC_TERMS + 1):
        term = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        total = total + term
    return total / np.sqrt(2.0 * np.pi * x)


def _scaled(order, x):
    x = _check_nonneg(x)
    out = np.empty_like(x)
    small = x <= _CROSSOVER
    if np.any(small):
        out[small] = _series_scaled(order, x[small])
    if np.any(~small):
        out[~small] = _asymptotic_scaled(order, x[~small])
    return out


def _as_output(value, like):
    return float(value) if np.ndim(like) == 0 else value


def bessel_i0e(x):
    """Exponentially scaled I_0: e^{-x} I_0(x) for x >= 0."""
    return _as_output(_scaled(0, np.atleast_1d(np.asarray(x, dtype=float))).reshape(np.shape(x)), x)


def bessel_i1e(x):
    """Exponentially scaled I_1: e^{-x} I_1(x) for x >= 0."""
    return _as_output(_scaled(1, np.atleast_1d(np.asarray(x, dtype=float))).reshape(np.shape(x)), x)


def bessel_i(order, x, scaled=False):
    """Modified Bessel function of the first kind, order 0 or 1.

    Parameters
    ----------
    order : int
        0 or 1.
    x : float or array_like
        Non-negative argument.
    scaled : bool
        If True return e^{-x} I_order(x), which stays finite for any x.

    Raises
    ------
    ValueError
        For negative x or an order other than 0 and 1.
    """
    if order not in (0, 1):
        raise ValueError(f"unsupported Bessel order {order!r}; only 0 and 1 are implemented")
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    value = _scaled(order, x_arr)
    if not scaled:
        value = value * np.exp(x_arr)
    return _as_output(value.reshape(np.shape(x)), x)


def laguerre_half_neg(x):
    """L_{1/2}(-x) for x >= 0.

    Closed form e^{-x/2}[(1+x) I_0(x/2) + x I_1(x/2)], evaluated with the
    scaled Bessel kernels at x/2. The result is >= 1 and increasing.
    """
    x_arr = _check_nonneg(np.atleast_1d(np.asarray(x, dtype=float)))
    half = 0.5 * x_arr
    value = (1.0 + x_arr) * _scaled(0, half) + x_arr * _scaled(1, half)
    return _as_output(value.reshape(np.shape(x)), x)


def q_expansion_terms(x):
    """The three scaled products whose sum, times pi/4, gives Q(x) + x.

    Returns ``(pi/4 e^{-x}(1+x)^2 I_0^2, pi/4 e^{-x} 2x(1+x) I_0 I_1,
    pi/4 e^{-x} x^2 I_1^2)`` with the Bessel functions taken at x/2.
    """
    x_arr = _check_nonneg(np.atleast_1d(np.asarray(x, dtype=float)))
    half = 0.5 * x_arr
    i0 = _scaled(0, half)
    i1 = _scaled(1, half)
    c = np.pi / 4.0
    terms = (
        c * (1.0 + x_arr) ** 2 * i0 * i0,
        c * 2.0 * x_arr * (1.0 + x_arr) * i0 * i1,
        c * x_arr * x_arr * i1 * i1,
    )
    return tuple(_as_output(t.reshape(np.shape(x)), x) for t in terms)


def q_function(x):
    """Q(x) = (pi/4) L_{1/2}(-x)^2 - x, for x >= 0.

    Q(0) = pi/4, Q is positive and decreasing, and tends to 1/2.
    """
    t0, t1, t2 = q_expansion_terms(x)
    value = np.asarray(t0) + np.asarray(t1) + np.asarray(t2) - np.asarray(x, dtype=float)
    return _as_output(value, x)
