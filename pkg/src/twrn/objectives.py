"""Blind objectives over the self-interference candidate u and their gradients.

Both objectives are built on the envelopes |z_i - A u t1_i| of the cleaned
samples. ``u`` may be a scalar or an array of candidates; array inputs are
evaluated row-wise, which is what the grid search relies on.
"""

import numpy as np

__all__ = [
    "SingularPointError",
    "cleaned",
    "sample_envelope_variance",
    "ml_objective",
    "msev_gradient",
    "ml_gradient",
    "objective_for",
    "gradient_for",
]

ML = "ML"
MSEV = "MSEV"

# Below this |u| the ML log-term is treated as flat (subgradient 0).
_ML_SINGULAR_RADIUS = 1e-12


class SingularPointError(ValueError):
    """Gradient requested where the objective is not differentiable."""


def cleaned(batch, u):
    """z_i - A u t1_i; shape (N,) for scalar u, (len(u), N) for arrays."""
    u = np.asarray(u, dtype=complex)
    amp = batch.amplification
    if u.ndim == 0:
        return batch.z - amp * complex(u) * batch.t1
    return batch.z[None, :] - amp * u.reshape(-1, 1) * batch.t1[None, :]


def _scalar_or_array(value, u):
    return float(value) if np.ndim(u) == 0 else np.asarray(value).reshape(np.shape(u))


def sample_envelope_variance(batch, u):
    """W_N(u): unbiased sample variance of the cleaned envelopes."""
    if batch.n < 2:
        raise ValueError("envelope variance needs at least two samples")
    env = np.abs(cleaned(batch, u))
    return _scalar_or_array(np.var(env, axis=-1, ddof=1), u)


def ml_objective(batch, u):
    """Deterministic-symbol ML cost in u (sigma^2 treated as known).

    sum_i (|z~_i| - mean)^2 / (sigma^2 (A^2|u| + 1)) + N log(A^2|u| + 1)
    """
    amp2 = batch.amplification ** 2
    sigma2 = batch.config.sigma2
    spread = (batch.n - 1) * np.asarray(sample_envelope_variance(batch, u))
    growth = amp2 * np.abs(np.asarray(u, dtype=complex)) + 1.0
    return _scalar_or_array(spread / (sigma2 * growth) + batch.n * np.log(growth), u)


def _envelope_spread_gradient(batch, u):
    # Complex-packed gradient (d/dRe + j d/dIm) of S(u) = sum_i (e_i - mean e)^2.
    # Each envelope has gradient -A conj(t1_i) z~_i / |z~_i|; a zero residual
    # contributes nothing.
    zt = cleaned(batch, complex(u))
    env = np.abs(zt)
    unit = np.zeros_like(zt)
    nz = env > 0
    unit[nz] = zt[nz] / env[nz]
    dev = env - env.mean()
    return complex(-2.0 * batch.amplification * np.sum(dev * np.conj(batch.t1) * unit)), float(np.sum(dev * dev))


def msev_gradient(batch, u):
    """(dW_N/dRe u, dW_N/dIm u)."""
    g, _ = _envelope_spread_gradient(batch, u)
    g /= batch.n - 1
    return g.real, g.imag


def ml_gradient(batch, u, singular="raise"):
    """(d/dRe u, d/dIm u) of :func:`ml_objective`.

    At u = 0 the |u| term has no derivative. ``singular="raise"`` raises
    :class:`SingularPointError`; ``"subgradient"`` uses 0 for that term.
    """
    u = complex(u)
    amp2 = batch.amplification ** 2
    sigma2 = batch.config.sigma2
    radius = abs(u)
    if radius < _ML_SINGULAR_RADIUS:
        if singular == "raise":
            raise SingularPointError("ML objective is not differentiable at u = 0; evaluate at a perturbed point")
        radial = 0j
    else:
        radial = u / radius
    grad_spread, spread = _envelope_spread_gradient(batch, u)
    growth = amp2 * radius + 1.0
    g = (
        grad_spread / (sigma2 * growth)
        - spread * amp2 * radial / (sigma2 * growth * growth)
        + batch.n * amp2 * radial / growth
    )
    return g.real, g.imag


def objective_for(method):
    return {ML: ml_objective, MSEV: sample_envelope_variance}[method.upper()]


def gradient_for(method, singular="raise"):
    method = method.upper()
    if method == MSEV:
        return msev_gradient
    if method == ML:
        return lambda batch, u: ml_gradient(batch, u, singular=singular)
    raise ValueError(f"unknown method {method!r}")
