"""Large-sample and high-SNR behaviour of the two criteria.

The population envelope variance W(u) is the limit of W_N(u); the ML cost
scaled by 1/(N-1) tends to Y(u) = W(u)/(sigma^2(A^2|u|+1)) + log(A^2|u|+1).
At u = a the gradient of W vanishes but the gradient of Y does not, which
is why ML is inconsistent while MSEV is not.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model import ChannelState, SystemConfig, make_stream, simulate_batch
from .objectives import ml_objective, sample_envelope_variance
from .specialfn import laguerre_half_neg, q_function

__all__ = [
    "AsymptoticContext",
    "lambda_k",
    "theoretical_variance",
    "ml_limit_function",
    "limit_derivative_at_truth",
    "derivative_bracket",
    "snr_argument",
    "high_snr_probability",
    "high_snr_config",
    "high_snr_probe",
    "probe_to_csv",
    "verification_suite",
]


@dataclass(frozen=True)
class AsymptoticContext:
    config: SystemConfig
    channel: ChannelState

    @property
    def alpha(self) -> float:
        return self.config.p1 / self.config.p2

    @property
    def beta_r(self) -> float:
        return self.config.pr / (self.config.p1 + self.config.p2)

    @property
    def amp2(self) -> float:
        return self.config.amplification() ** 2

    @property
    def noise(self) -> float:
        # Effective noise variance sigma^2 (A^2|a| + 1). The |a|^2 printed in
        # one place of the source formula is a typo; Monte-Carlo agrees with |a|.
        return self.config.effective_noise(self.channel.a)


def lambda_k(ctx: AsymptoticContext, v, k: int):
    """Noncentrality lambda_k(v) of the cleaned envelope for phase offset 2 pi k / M.

    ``v`` may be an array; |v| cos(angle v - phi_b + 2 pi k/M) is evaluated
    as Re{v exp(-j(phi_b - 2 pi k/M))}, which is smooth through v = 0.
    """
    m = ctx.config.m
    if not 0 <= k < m:
        raise ValueError(f"k must lie in [0, {m}), got {k}")
    cfg, b = ctx.config, ctx.channel.b
    v = np.asarray(v, dtype=complex)
    cross = np.real(v * np.exp(-1j * (ctx.channel.phi_b - 2.0 * np.pi * k / m)))
    value = ctx.amp2 * (
        np.abs(v) ** 2 * cfg.p1
        + abs(b) ** 2 * cfg.p2
        + 2.0 * abs(b) * math.sqrt(cfg.p1 * cfg.p2) * cross
    ) / ctx.noise
    # Rounding can push a zero-noncentrality value a hair below 0.
    value = np.maximum(value, 0.0)
    return float(value) if value.ndim == 0 else value


def theoretical_variance(ctx: AsymptoticContext, u):
    """Population variance W(u) of |z - A u t1| under uniform M-PSK data."""
    cfg, ch = ctx.config, ctx.channel
    u = np.asarray(u, dtype=complex)
    v = ch.a - u
    m = cfg.m
    lag = sum(laguerre_half_neg(np.asarray(lambda_k(ctx, v, k))) for k in range(m))
    value = (
        ctx.amp2 * np.abs(v) ** 2 * cfg.p1
        + ctx.amp2 * abs(ch.b) ** 2 * cfg.p2
        + ctx.noise
        - math.pi * ctx.noise / (4.0 * m * m) * lag ** 2
    )
    return float(value) if np.ndim(value) == 0 else value


def ml_limit_function(ctx: AsymptoticContext, u):
    """Y(u): in-probability limit of the ML cost divided by N - 1."""
    u = np.asarray(u, dtype=complex)
    growth = ctx.amp2 * np.abs(u) + 1.0
    value = theoretical_variance(ctx, u) / (ctx.config.sigma2 * growth) + np.log(growth)
    return float(value) if np.ndim(value) == 0 else value


def snr_argument(ctx: AsymptoticContext) -> float:
    """x = A^2 |b|^2 P2 / (sigma^2 (A^2|a| + 1)), the argument of Q at u = a."""
    return ctx.amp2 * abs(ctx.channel.b) ** 2 * ctx.config.p2 / ctx.noise


def derivative_bracket(ctx: AsymptoticContext) -> float:
    """1 - W(a) / (sigma^2 (A^2|a| + 1)), computed from W directly."""
    return 1.0 - theoretical_variance(ctx, ctx.channel.a) / ctx.noise


def limit_derivative_at_truth(ctx: AsymptoticContext, bracket: str = "q") -> tuple[float, float]:
    """(dY/dRe u, dY/dIm u) at u = a.

    Only the log-barrier term survives there, scaled by the bracket
    1 - W(a)/(sigma^2(A^2|a|+1)) = Q(x) > 0. ``bracket="direct"`` evaluates
    the bracket from W instead of Q.
    """
    a = ctx.channel.a
    if a == 0:
        raise ValueError("the limit derivative is undefined at a = 0")
    factor = q_function(snr_argument(ctx)) if bracket == "q" else derivative_bracket(ctx)
    scale = ctx.amp2 / (abs(a) * (ctx.amp2 * abs(a) + 1.0)) * factor
    return scale * a.real, scale * a.imag


def high_snr_probability(m: int, n: int) -> float:
    """Probability 1 - (2/M)^{N-1} (M-1) that G diverges for every u != a."""
    return 1.0 - (2.0 / m) ** (n - 1) * (m - 1)


def high_snr_config(template: SystemConfig, snr_db: float, alpha: float | None = None,
                    beta: float | None = None) -> SystemConfig:
    """Config at ``snr_db`` with P2 kept, P1 = alpha P2 and Pr = beta (P1 + P2)."""
    p2 = template.p2
    alpha = template.p1 / p2 if alpha is None else alpha
    beta = template.pr / (template.p1 + p2) if beta is None else beta
    p1 = alpha * p2
    return template.replace(p1=p1, pr=beta * (p1 + p2), sigma2=p2 / 10.0 ** (snr_db / 10.0))


def high_snr_probe(template: SystemConfig, channel: ChannelState, u: complex, snr_list,
                   trials: int, master_seed: int = 0):
    """Medians of G = W_N/sigma^2 and of the ML cost at ``u`` and at ``a`` per SNR.

    Trial ``j`` uses the same symbol and standard-normal noise draws at
    every SNR, so rows differ only through sigma^2.
    Returns a list of dicts with keys snr_db, g_at_u, g_at_a, lambda_at_u,
    lambda_at_a.
    """
    snr_list = list(snr_list)
    if any(b <= a for a, b in zip(snr_list, snr_list[1:])):
        raise ValueError("snr_list must be strictly ascending")
    rows = []
    for snr_db in snr_list:
        cfg = high_snr_config(template, snr_db)
        g_u, g_a, l_u, l_a = [], [], [], []
        for j in range(trials):
            batch = simulate_batch(cfg, channel, make_stream(master_seed, j, role="probe"))
            g_u.append(sample_envelope_variance(batch, u) / cfg.sigma2)
            g_a.append(sample_envelope_variance(batch, channel.a) / cfg.sigma2)
            l_u.append(ml_objective(batch, u))
            l_a.append(ml_objective(batch, channel.a))
        rows.append({
            "snr_db": float(snr_db),
            "g_at_u": float(np.median(g_u)),
            "g_at_a": float(np.median(g_a)),
            "lambda_at_u": float(np.median(l_u)),
            "lambda_at_a": float(np.median(l_a)),
        })
    return rows


def probe_to_csv(rows) -> str:
    buf = io.StringIO()
    fields = ["snr_db", "g_at_u", "g_at_a", "lambda_at_u", "lambda_at_a"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(float(row[k])) for k in fields})
    return buf.getvalue()


def _check(name, passed, measured, tolerance) -> dict:
    return {"check_name": name, "status": "pass" if passed else "fail",
            "measured": float(measured), "tolerance": float(tolerance)}


def _limit_gradient_fd(ctx: AsymptoticContext, h: float = 1e-6):
    a = ctx.channel.a
    d_re = (ml_limit_function(ctx, a + h) - ml_limit_function(ctx, a - h)) / (2 * h)
    d_im = (ml_limit_function(ctx, a + 1j * h) - ml_limit_function(ctx, a - 1j * h)) / (2 * h)
    return d_re, d_im


def verification_suite(config: SystemConfig, master_seed: int = 0, pairs: int = 5,
                       samples: int = 200_000, channels: int = 10, probe_trials: int = 50):
    """Numerical checks of the asymptotic machinery at ``config``.

    Returns a list of ``{check_name, status, measured, tolerance}`` dicts:
    the Q identity and its sign and limit, the Monte-Carlo match of W(u),
    the closed-form derivative of Y at the truth against finite
    differences, and the high-SNR growth of G away from the truth.
    """
    from .model import draw_channel

    checks = []
    x = np.logspace(-6, 3, 400)
    q = q_function(x)
    rebuilt = math.pi / 4 * laguerre_half_neg(x) ** 2 - x
    checks.append(_check("q_identity", np.max(np.abs(rebuilt / q - 1)) < 1e-12,
                         np.max(np.abs(rebuilt / q - 1)), 1e-12))
    checks.append(_check("q_positive", np.min(q) > 0, np.min(q), 0.0))
    checks.append(_check("q_limit", abs(q_function(100.0) - 0.5) < 0.01, abs(q_function(100.0) - 0.5), 0.01))

    worst = 0.0
    big = config.replace(n=samples)
    for r in range(pairs):
        rng = make_stream(master_seed, 1000 + r, role="probe")
        channel = draw_channel(rng)
        u = complex(*rng.normal(0.0, 1.0, 2))
        batch = simulate_batch(big, channel, rng)
        predicted = theoretical_variance(AsymptoticContext(config, channel), u)
        worst = max(worst, abs(sample_envelope_variance(batch, u) / predicted - 1))
    checks.append(_check("variance_law", worst < 0.02, worst, 0.02))

    worst, signs_ok, found, r = 0.0, True, 0, 0
    while found < channels:
        channel = draw_channel(make_stream(master_seed, 2000 + r, role="probe"))
        r += 1
        if abs(channel.a.real) <= 0.1:
            continue
        found += 1
        ctx = AsymptoticContext(config, channel)
        closed = np.array(limit_derivative_at_truth(ctx))
        numeric = np.array(_limit_gradient_fd(ctx))
        worst = max(worst, np.linalg.norm(closed - numeric) / np.linalg.norm(closed))
        signs_ok &= bool(np.sign(closed[0]) == np.sign(channel.a.real))
    checks.append(_check("limit_derivative_fd", worst < 1e-4, worst, 1e-4))
    checks.append(_check("limit_derivative_sign", signs_ok, float(signs_ok), 1.0))

    channel = draw_channel(make_stream(master_seed, 3000, role="probe"))
    rows = high_snr_probe(config, channel, channel.a + 0.5, [10.0, 60.0], probe_trials, master_seed)
    ratio = rows[1]["g_at_u"] / rows[1]["g_at_a"]
    drift = max(rows[1]["g_at_a"] / rows[0]["g_at_a"], rows[0]["g_at_a"] / rows[1]["g_at_a"])
    checks.append(_check("high_snr_separation", ratio > 1e3, ratio, 1e3))
    checks.append(_check("high_snr_truth_bounded", drift < 10.0, drift, 10.0))
    return checks
