"""Minimisers for real-valued functions of one complex variable.

``steepest_descent`` treats u as a point of R^2 and uses Armijo
backtracking. ``grid_search`` is the exhaustive reference; the multiscale
variant restricts the fine lattice to windows around the best coarse
candidates so that a 1e-3 lattice over a several-unit square stays cheap.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import objectives
from .objectives import SingularPointError

__all__ = [
    "SolverConfig",
    "SolverStats",
    "GridSpec",
    "DivergedError",
    "SingularPointError",
    "steepest_descent",
    "grid_search",
    "multiscale_grid_search",
    "analytic_gradient",
    "finite_difference_gradient",
]


class DivergedError(ArithmeticError):
    """The objective or its gradient became non-finite."""

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class SolverConfig:
    initializer: object = "sample_average"  # or a complex starting point
    grad_tolerance: float = 1e-8
    max_iterations: int = 500
    backtrack_alpha: float = 0.3
    backtrack_beta: float = 0.5
    initial_step: float = 1.0
    fd_step: float = 1e-6
    gradient: str = "analytic"  # or "finite_difference"
    # A trial step shorter than this (relative to 1 + |u|) cannot change u.
    step_tolerance: float = 1e-15

    def __post_init__(self):
        if not self.grad_tolerance > 0:
            raise ValueError("grad_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.backtrack_alpha < 0.5:
            raise ValueError("backtrack_alpha must lie in (0, 0.5)")
        if not 0 < self.backtrack_beta < 1:
            raise ValueError("backtrack_beta must lie in (0, 1)")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.gradient not in ("analytic", "finite_difference"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if not (self.initializer == "sample_average" or isinstance(self.initializer, (complex, float, int))):
            raise ValueError(f"initializer must be 'sample_average' or a number, got {self.initializer!r}")

    def to_dict(self) -> dict:
        data = asdict(self)
        if self.initializer != "sample_average":
            start = complex(self.initializer)
            data["initializer"] = [start.real, start.imag]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        data = dict(data)
        init = data.get("initializer", "sample_average")
        if isinstance(init, (list, tuple)):
            data["initializer"] = complex(init[0], init[1])
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown solver keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SolverStats:
    iterations: int
    line_search_steps: int
    converged: bool
    stalled: bool = False
    grad_norm: float = float("nan")
    objective_trace: tuple = field(default=(), repr=False)

    @property
    def line_search_per_iteration(self) -> float:
        return self.line_search_steps / self.iterations if self.iterations else 0.0


@dataclass(frozen=True)
class GridSpec:
    center: complex
    half_width: float
    step: float = 1e-3

    def __post_init__(self):
        if not (self.half_width > 0 and self.step > 0):
            raise ValueError("half_width and step must be positive")
        if self.points_per_axis < 9:
            raise ValueError("grid needs at least 9 points per axis")

    @property
    def half_count(self) -> int:
        return int(math.floor(self.half_width / self.step + 1e-9))

    @property
    def points_per_axis(self) -> int:
        return 2 * self.half_count + 1

    def axis(self, center_component: float) -> np.ndarray:
        k = np.arange(-self.half_count, self.half_count + 1)
        return center_component + k * self.step

    @classmethod
    def around(cls, center: complex, step: float = 1e-3) -> "GridSpec":
        """Default validation grid: half-width 3 max(1, |center|)."""
        return cls(center=complex(center), half_width=3.0 * max(1.0, abs(center)), step=step)

    def to_dict(self) -> dict:
        return {"center": [self.center.real, self.center.imag], "half_width": self.half_width, "step": self.step}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        c = data["center"]
        return cls(center=complex(c[0], c[1]), half_width=float(data["half_width"]), step=float(data["step"]))


def finite_difference_gradient(objective, u, h=1e-6):
    """Central differences of ``objective`` along Re u and Im u."""
    u = complex(u)
    d_re = (objective(u + h) - objective(u - h)) / (2 * h)
    d_im = (objective(u + 1j * h) - objective(u - 1j * h)) / (2 * h)
    return d_re, d_im


def analytic_gradient(kind, batch, u):
    """Closed-form (d/dRe u, d/dIm u) of the ML or MSEV objective."""
    return objectives.gradient_for(kind, singular="raise")(batch, u)


def steepest_descent(objective, gradient, start, config: SolverConfig = SolverConfig()):
    """Minimise ``objective`` from ``start`` by gradient steps with backtracking.

    ``gradient(u)`` returns the pair (d/dRe u, d/dIm u). Each iteration starts
    from ``config.initial_step`` and shrinks by ``backtrack_beta`` until
    f(u - t g) <= f(u) - alpha t |g|^2. The run stops when |g| falls below
    ``grad_tolerance``, when no representable step decreases f (``stalled``,
    reported as converged), or after ``max_iterations`` steps.

    Returns ``(argmin, SolverStats)``.
    """
    u = complex(start)
    f = float(objective(u))
    if not math.isfinite(f):
        raise DivergedError(f"objective is not finite at the start point {u!r}", u)
    alpha, beta = config.backtrack_alpha, config.backtrack_beta
    trace = [f]
    iterations = ls_steps = 0
    converged = stalled = False
    grad_norm = float("nan")

    while True:
        g_re, g_im = gradient(u)
        g = complex(g_re, g_im)
        grad_norm = abs(g)
        if not math.isfinite(grad_norm):
            raise DivergedError(f"gradient is not finite at {u!r}", u)
        if grad_norm <= config.grad_tolerance:
            converged = True
            break
        if iterations >= config.max_iterations:
            break
        t = config.initial_step
        sq = grad_norm * grad_norm
        while True:
            ls_steps += 1
            candidate = u - t * g
            fc = float(objective(candidate))
            if math.isfinite(fc) and fc <= f - alpha * t * sq:
                break
            t *= beta
            if t * grad_norm < config.step_tolerance * (1.0 + abs(u)):
                stalled = True
                break
        if stalled:
            converged = True
            break
        u, f = candidate, fc
        trace.append(f)
        iterations += 1

    stats = SolverStats(
        iterations=iterations,
        line_search_steps=ls_steps,
        converged=converged,
        stalled=stalled,
        grad_norm=grad_norm,
        objective_trace=tuple(trace),
    )
    return u, stats


def _best_index(values, points):
    # Minimum value; exact ties go to the smallest |u|, then the smallest phase.
    best = np.flatnonzero(values == values.min())
    if len(best) == 1:
        return int(best[0])
    cand = points[best]
    phase = np.mod(np.angle(cand), 2 * np.pi)
    order = np.lexsort((phase, np.abs(cand)))
    return int(best[order[0]])


def _evaluate_grid(objective, re_axis, im_axis, chunk):
    values = np.empty((len(re_axis), len(im_axis)))
    rows = max(1, chunk // len(im_axis))
    for start in range(0, len(re_axis), rows):
        block = re_axis[start:start + rows, None] + 1j * im_axis[None, :]
        values[start:start + rows] = np.asarray(objective(block.ravel())).reshape(block.shape)
    return values


def grid_search(objective, grid: GridSpec, chunk: int = 8192) -> complex:
    """Exhaustive minimum of a vectorised ``objective`` over ``grid``.

    ``objective`` must accept a 1-D complex array and return one value per
    entry.
    """
    re_axis = grid.axis(grid.center.real)
    im_axis = grid.axis(grid.center.imag)
    values = _evaluate_grid(objective, re_axis, im_axis, chunk)
    points = re_axis[:, None] + 1j * im_axis[None, :]
    idx = _best_index(values.ravel(), points.ravel())
    return complex(points.ravel()[idx])


def _local_minima(values):
    padded = np.pad(values, 1, constant_values=np.inf)
    core = padded[1:-1, 1:-1]
    mask = np.ones_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                mask &= core <= padded[1 + di:padded.shape[0] - 1 + di, 1 + dj:padded.shape[1] - 1 + dj]
    return np.argwhere(mask)


def multiscale_grid_search(objective, grid: GridSpec, coarse_step: float = 1e-2, keep: int = 4,
                           chunk: int = 8192) -> complex:
    """Minimum over the fine lattice of ``grid``, searched coarse-to-fine.

    A coarse lattice (``coarse_step``) covers the full square; the ``keep``
    lowest coarse local minima are then refined exhaustively on the fine
    lattice within two coarse steps. Every returned point lies on the fine
    lattice of ``grid``.
    """
    if coarse_step <= grid.step:
        return grid_search(objective, grid, chunk)
    coarse = GridSpec(grid.center, grid.half_width, coarse_step)
    re_axis = coarse.axis(grid.center.real)
    im_axis = coarse.axis(grid.center.imag)
    values = _evaluate_grid(objective, re_axis, im_axis, chunk)
    minima = _local_minima(values)
    order = np.argsort(values[minima[:, 0], minima[:, 1]], kind="stable")[:keep]

    best_u, best_f = None, math.inf
    window = 2.0 * coarse_step
    for i, j in minima[order]:
        rough = complex(re_axis[i], im_axis[j])
        # Snap the window centre onto the fine lattice of the full grid.
        offset = rough - grid.center
        snapped = grid.center + complex(round(offset.real / grid.step), round(offset.imag / grid.step)) * grid.step
        lim = grid.half_count * grid.step
        k = np.arange(-round(window / grid.step), round(window / grid.step) + 1)
        re_f = snapped.real + k * grid.step
        im_f = snapped.imag + k * grid.step
        re_f = re_f[np.abs(re_f - grid.center.real) <= lim + 1e-12]
        im_f = im_f[np.abs(im_f - grid.center.imag) <= lim + 1e-12]
        fine = _evaluate_grid(objective, re_f, im_f, chunk)
        pts = (re_f[:, None] + 1j * im_f[None, :]).ravel()
        idx = _best_index(fine.ravel(), pts)
        f = fine.ravel()[idx]
        if f < best_f or (f == best_f and abs(pts[idx]) < abs(best_u)):
            best_u, best_f = complex(pts[idx]), f
    return best_u
