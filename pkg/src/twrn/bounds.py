"""Cramer-Rao bounds on the estimation of a.

Parameters are theta = [Re a, Im a, |b|, psi_1..psi_N] with the data phases
treated as deterministic nuisances. The FIM has the block form
[[F_a, B], [B^T, diag(c)]]; the bound on a is tr((F_a - B diag(1/c) B^T)^{-1}).
The modified bound replaces the nuisance part by its expectation over t2,
which decouples |b| and leaves tr(F_a^{-1}) in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ChannelState, SystemConfig, draw_mpsk_symbols, make_stream

__all__ = [
    "SingularFimError",
    "FimBlocks",
    "BoundReport",
    "build_fim_blocks",
    "full_fim",
    "crb_a",
    "crb_a_full_inverse",
    "mfim",
    "mcrb_a",
    "mcrb_a_from_mfim",
    "averaged_crb_a",
    "bound_report",
    "log_density",
]


class SingularFimError(np.linalg.LinAlgError):
    def __init__(self, message, condition_number):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


@dataclass(frozen=True, eq=False)
class FimBlocks:
    block_a: np.ndarray       # 2 x 2, (Re a, Im a)
    block_b: np.ndarray       # 2 x (N + 1), coupling with (|b|, psi_1..psi_N)
    block_c_diag: np.ndarray  # N + 1, diagonal of the nuisance block

    @property
    def n(self) -> int:
        return len(self.block_c_diag) - 1


@dataclass(frozen=True)
class BoundReport:
    crb_a: float
    mcrb_a: float
    n: int
    channel: ChannelState

    CSV_FIELDS = ("metric", "value", "n", "re_a", "im_a")

    def csv_rows(self):
        a = self.channel.a
        for metric, value in (("crb_a", self.crb_a), ("mcrb_a", self.mcrb_a)):
            yield {"metric": metric, "value": repr(float(value)), "n": self.n, "re_a": repr(float(a.real)), "im_a": repr(float(a.imag))}


def _a_block(config: SystemConfig, a: complex, n: int) -> np.ndarray:
    if a == 0:
        raise ValueError("a = 0 makes the information about a singular (|a| appears in denominators)")
    amp2 = config.amplification() ** 2
    growth = amp2 * abs(a) + 1.0
    mean_part = 2.0 * amp2 * n * config.p1 / (config.sigma2 * growth)
    var_part = amp2 * amp2 * n / (abs(a) ** 2 * growth ** 2)
    re, im = a.real, a.imag
    return np.array([
        [mean_part + var_part * re * re, var_part * re * im],
        [var_part * re * im, mean_part + var_part * im * im],
    ])


def build_fim_blocks(config: SystemConfig, channel: ChannelState, t1, t2) -> FimBlocks:
    """Assemble the three FIM blocks for one realisation of (t1, t2)."""
    t1 = np.asarray(t1, dtype=complex)
    t2 = np.asarray(t2, dtype=complex)
    if t1.shape != t2.shape or t1.ndim != 1:
        raise ValueError("t1 and t2 must be 1-D vectors of equal length")
    b = channel.b
    if b == 0:
        raise ValueError("b = 0 leaves the data phases unidentifiable")
    n = len(t1)
    amp2 = config.amplification() ** 2
    noise = config.effective_noise(channel.a)
    scale = 2.0 * amp2 / noise

    block_a = _a_block(config, channel.a, n)
    first = np.exp(1j * channel.phi_b) * np.vdot(t1, t2)   # vdot conjugates t1
    per_sample = np.conj(b) * t1 * np.conj(t2)
    block_b = scale * np.vstack([
        np.concatenate([[first.real], per_sample.imag]),
        np.concatenate([[first.imag], per_sample.real]),
    ])
    block_c = np.full(n + 1, scale * abs(b) ** 2 * config.p2)
    block_c[0] = scale * n * config.p2
    return FimBlocks(block_a=block_a, block_b=block_b, block_c_diag=block_c)


def full_fim(blocks: FimBlocks) -> np.ndarray:
    """Dense (N+3) x (N+3) FIM; only for checks and small N."""
    k = blocks.n + 3
    fim = np.zeros((k, k))
    fim[:2, :2] = blocks.block_a
    fim[:2, 2:] = blocks.block_b
    fim[2:, :2] = blocks.block_b.T
    fim[2:, 2:] = np.diag(blocks.block_c_diag)
    return fim


def crb_a(blocks: FimBlocks) -> float:
    """tr((F_a - B C^{-1} B^T)^{-1}) with C inverted elementwise."""
    bb = blocks.block_b
    schur = blocks.block_a - (bb / blocks.block_c_diag) @ bb.T
    schur = (schur + schur.T) / 2
    # Conditioning is measured against F_a: when the subtraction cancels, the
    # Schur complement is rounding noise and its own condition number can look
    # harmless while its inverse has the wrong sign.
    lam_min = np.linalg.eigvalsh(schur)[0]
    scale = np.linalg.norm(blocks.block_a, 2)
    cond = scale / lam_min if lam_min > 0 else math.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularFimError("Schur complement of the FIM is singular", cond)
    return float(np.trace(np.linalg.inv(schur)))


def crb_a_full_inverse(blocks: FimBlocks) -> float:
    inv = np.linalg.inv(full_fim(blocks))
    return float(inv[0, 0] + inv[1, 1])


def mfim(config: SystemConfig, channel: ChannelState) -> np.ndarray:
    """Modified FIM over (Re a, Im a, |b|), averaged over the t2 symbols."""
    n = config.n
    amp2 = config.amplification() ** 2
    out = np.zeros((3, 3))
    out[:2, :2] = _a_block(config, channel.a, n)
    out[2, 2] = 2.0 * amp2 * n * config.p2 / config.effective_noise(channel.a)
    return out


def mcrb_a_from_mfim(config: SystemConfig, channel: ChannelState) -> float:
    inv = np.linalg.inv(mfim(config, channel))
    return float(inv[0, 0] + inv[1, 1])


def mcrb_a(config: SystemConfig, channel: ChannelState) -> float:
    """Closed-form modified CRB on a for N = ``config.n`` samples."""
    amp2 = config.amplification() ** 2
    s2, p1, n = config.sigma2, config.p1, config.n
    growth = amp2 * abs(channel.a) + 1.0
    num = 4.0 * s2 * p1 * growth ** 2 + s2 * s2 * amp2 * growth
    den = 4.0 * n * amp2 * p1 * p1 * growth + 2.0 * n * s2 * amp2 * amp2 * p1
    return num / den


def averaged_crb_a(config: SystemConfig, channel: ChannelState, symbol_draws: int,
                   rng: np.random.Generator, max_singular_fraction: float = 0.01):
    """Mean CRB on a over independent (t1, t2) draws.

    Draws with a singular Schur complement are skipped and counted; more
    than ``max_singular_fraction`` of them raises :class:`SingularFimError`.
    Returns ``(mean, standard_error, singular_count)``.
    """
    if symbol_draws < 1:
        raise ValueError("symbol_draws must be >= 1")
    values = []
    singular = 0
    worst = 0.0
    for _ in range(symbol_draws):
        t1 = draw_mpsk_symbols(config.m, config.n, config.p1, rng)
        t2 = draw_mpsk_symbols(config.m, config.n, config.p2, rng)
        try:
            values.append(crb_a(build_fim_blocks(config, channel, t1, t2)))
        except SingularFimError as exc:
            singular += 1
            worst = max(worst, exc.condition_number)
    if singular > max_singular_fraction * symbol_draws:
        raise SingularFimError(f"{singular} of {symbol_draws} symbol draws gave a singular FIM", worst)
    values = np.asarray(values)
    sem = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), sem, singular


def bound_report(config: SystemConfig, channel: ChannelState, symbol_draws: int, master_seed: int = 0) -> BoundReport:
    mean, _, _ = averaged_crb_a(config, channel, symbol_draws, make_stream(master_seed, 0, role="crb"))
    return BoundReport(crb_a=mean, mcrb_a=mcrb_a(config, channel), n=config.n, channel=channel)


def log_density(config: SystemConfig, theta, t1, z) -> np.ndarray:
    """log f(z | theta) for theta = [Re a, Im a, |b|, psi_1..psi_N].

    ``z`` may be (N,) or (trials, N); used as an independent score oracle.
    """
    theta = np.asarray(theta, dtype=float)
    a = complex(theta[0], theta[1])
    b_mag, psi = theta[2], theta[3:]
    amp = config.amplification()
    noise = config.sigma2 * (amp * amp * abs(a) + 1.0)
    mean = amp * a * np.asarray(t1) + amp * b_mag * math.sqrt(config.p2) * np.exp(1j * psi)
    resid = np.abs(np.asarray(z) - mean) ** 2
    n = len(psi)
    return -n * np.log(math.pi * noise) - resid.sum(axis=-1) / noise
