"""Partially-blind estimators of the self-interference channel a = h^2.

Two criteria share the same machinery: the deterministic-symbol ML cost
and the minimum sample envelope variance (MSEV) cost. Once a is estimated,
|b| and the per-sample phases psi_i = phi_2i + phi_b follow in closed form;
separating phi_b from the data phases needs pilots.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import (
    ML,
    MSEV,
    cleaned,
    gradient_for,
    ml_objective,
    objective_for,
    sample_envelope_variance,
)
from .optimize import (
    GridSpec,
    SolverConfig,
    SolverStats,
    finite_difference_gradient,
    multiscale_grid_search,
    steepest_descent,
)

__all__ = [
    "ML",
    "MSEV",
    "METHODS",
    "MissingPilotsError",
    "ResidualView",
    "EstimateReport",
    "sample_envelope_variance",
    "ml_objective",
    "msev_objective",
    "sample_average_initializer",
    "residual_view",
    "recover_nuisance",
    "estimate",
    "estimate_by_grid",
    "resolve_phase_from_pilots",
]

METHODS = (ML, MSEV)
_TWO_PI = 2.0 * math.pi


class MissingPilotsError(ValueError):
    pass


def msev_objective(batch, u):
    """The MSEV cost is the sample envelope variance itself."""
    return sample_envelope_variance(batch, u)


@dataclass(frozen=True, eq=False)
class ResidualView:
    candidate: complex
    cleaned: np.ndarray
    envelopes: np.ndarray


def residual_view(batch, u) -> ResidualView:
    zt = cleaned(batch, complex(u))
    return ResidualView(candidate=complex(u), cleaned=zt, envelopes=np.abs(zt))


def sample_average_initializer(batch) -> complex:
    """a_s = sum_i conj(t1_i) z_i / (N A P1)."""
    amp = batch.amplification
    return complex(np.sum(np.conj(batch.t1) * batch.z) / (batch.n * amp * batch.config.p1))


def recover_nuisance(batch, a_hat):
    """Closed-form |b| estimate and wrapped phases psi_i for a given a_hat."""
    zt = cleaned(batch, complex(a_hat))
    b_mag = float(np.sum(np.abs(zt)) / (batch.n * batch.amplification * math.sqrt(batch.config.p2)))
    psi = np.mod(np.angle(zt), _TWO_PI)  # angle(0) == 0 by numpy convention
    psi[psi >= _TWO_PI] = 0.0
    return b_mag, psi


@dataclass(frozen=True, eq=False)
class EstimateReport:
    a_hat: complex
    b_mag_hat: float
    psi_hat: np.ndarray
    phi_b_hat: float | None
    objective_value: float
    method: str
    optimizer_stats: SolverStats = field(repr=False)

    def to_dict(self) -> dict:
        s = self.optimizer_stats
        return {
            "method": self.method,
            "a_hat": [self.a_hat.real, self.a_hat.imag],
            "b_mag_hat": self.b_mag_hat,
            "phi_b_hat": self.phi_b_hat,
            "psi_hat": [float(p) for p in self.psi_hat],
            "objective_value": self.objective_value,
            "optimizer_stats": {
                "iterations": s.iterations,
                "line_search_steps": s.line_search_steps,
                "converged": s.converged,
                "stalled": s.stalled,
                "grad_norm": s.grad_norm,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    CSV_FIELDS = ("method", "re_a_hat", "im_a_hat", "b_mag_hat", "phi_b_hat", "objective_value",
                  "iterations", "line_search_steps", "converged")

    def csv_row(self) -> dict:
        s = self.optimizer_stats
        return {
            "method": self.method,
            "re_a_hat": repr(float(self.a_hat.real)),
            "im_a_hat": repr(float(self.a_hat.imag)),
            "b_mag_hat": repr(float(self.b_mag_hat)),
            "phi_b_hat": "" if self.phi_b_hat is None else repr(float(self.phi_b_hat)),
            "objective_value": repr(float(self.objective_value)),
            "iterations": s.iterations,
            "line_search_steps": s.line_search_steps,
            "converged": int(s.converged),
        }


def _start_point(batch, solver: SolverConfig) -> complex:
    if solver.initializer == "sample_average":
        return sample_average_initializer(batch)
    return complex(solver.initializer)


def _finish(batch, method, a_hat, stats) -> EstimateReport:
    b_mag, psi = recover_nuisance(batch, a_hat)
    report = EstimateReport(
        a_hat=complex(a_hat),
        b_mag_hat=b_mag,
        psi_hat=psi,
        phi_b_hat=None,
        objective_value=float(objective_for(method)(batch, a_hat)),
        method=method,
        optimizer_stats=stats,
    )
    if batch.pilot_count:
        object.__setattr__(report, "phi_b_hat", resolve_phase_from_pilots(report, batch))
    return report


def estimate(batch, method: str = MSEV, solver: SolverConfig = SolverConfig()) -> EstimateReport:
    """Estimate a by steepest descent on the chosen criterion.

    Non-convergence within the iteration budget is reported through
    ``optimizer_stats.converged`` rather than raised.
    """
    method = method.upper()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    objective = objective_for(method)
    f = lambda u: objective(batch, u)  # noqa: E731
    if solver.gradient == "analytic":
        grad_fn = gradient_for(method, singular="subgradient")
        grad = lambda u: grad_fn(batch, u)  # noqa: E731
    else:
        grad = lambda u: finite_difference_gradient(f, u, solver.fd_step)  # noqa: E731
    a_hat, stats = steepest_descent(f, grad, _start_point(batch, solver), solver)
    return _finish(batch, method, a_hat, stats)


def estimate_by_grid(batch, method: str = MSEV, grid: GridSpec | None = None,
                     coarse_step: float = 1e-2, step: float = 1e-3) -> EstimateReport:
    """Grid-search counterpart of :func:`estimate` (validation reference).

    The default grid is centred on the sample-average estimate with
    half-width 3 max(1, |a_s|) and a ``step`` lattice.
    """
    method = method.upper()
    objective = objective_for(method)
    if grid is None:
        grid = GridSpec.around(sample_average_initializer(batch), step=step)
    a_hat = multiscale_grid_search(lambda u: objective(batch, u), grid, coarse_step=coarse_step)
    return _finish(batch, method, a_hat, SolverStats(iterations=0, line_search_steps=0, converged=True))


def resolve_phase_from_pilots(report: EstimateReport, batch) -> float:
    """Circular mean of psi_i - angle(t2_i) over pilot positions, in [0, 2 pi)."""
    mask = batch.pilot_mask
    if not mask.any():
        raise MissingPilotsError("phi_b cannot be separated from the data phases without pilots")
    diffs = np.asarray(report.psi_hat)[mask] - np.angle(batch.t2[mask])
    mean = cmath.phase(complex(np.sum(np.exp(1j * diffs))))
    phi = mean % _TWO_PI
    return 0.0 if phi >= _TWO_PI else phi
