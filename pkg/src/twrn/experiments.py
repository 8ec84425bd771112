"""Monte-Carlo sweeps: MSE of the ML and MSEV estimates of a against SNR or N,
with averaged CRB / MCRB reference curves and optimizer statistics.

Randomness is keyed, never sequential: realisation r of the channel comes
from (master_seed, "channel", r) and trial j of realisation r from
(master_seed, "batch", r, j). The same channel set is therefore used in
every cell, and results do not depend on execution order or worker count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .estimators import METHODS, estimate, estimate_by_grid
from .model import SystemConfig, draw_channel, make_stream, simulate_batch
from .optimize import SolverConfig

__all__ = [
    "ExperimentError",
    "ExperimentSpec",
    "ExperimentResult",
    "run_experiment",
    "run_mse_vs_snr",
    "run_mse_vs_n",
    "iteration_statistics",
    "result_sidecar",
    "CSV_FIELDS",
]

log = logging.getLogger(__name__)

CSV_FIELDS = ["sweep_name", "sweep_value", "method", "mse", "sd_iters", "ls_iters",
              "crb_a", "mcrb_a", "nonconverged_fraction"]
SWEEPS = ("snr", "sample_size")
DEFAULT_SNR_GRID = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
DEFAULT_N_GRID = (25, 50, 100, 200, 400)


class ExperimentError(RuntimeError):
    pass


def _experiment_template() -> SystemConfig:
    # Equal powers Pr = P1 = P2. The common level does not change any MSE or
    # bound (only ratios enter), but it sets the scale of the MSEV cost and
    # hence how well a unit initial backtracking step fits it; 4 gives
    # A^2 P1 ~ 2 at high SNR.
    return SystemConfig(p1=4.0, p2=4.0, pr=4.0, sigma2=4.0 / 10 ** 1.5, m=4, n=100)


@dataclass(frozen=True)
class ExperimentSpec:
    sweep: str = "snr"
    values: tuple = DEFAULT_SNR_GRID
    config_template: SystemConfig = field(default_factory=_experiment_template)
    channel_realizations: int = 100
    trials_per_cell: int = 1
    methods: tuple = METHODS
    solver: SolverConfig = field(default_factory=SolverConfig)
    grid_validation: bool = False
    grid_coarse_step: float = 1e-2
    grid_step: float = 1e-3
    master_seed: int = 0
    pilot_count: int = 4
    crb_symbol_draws: int = 100
    fixed_snr_db: float = 15.0  # SNR of sample-size sweeps
    max_nonconverged_fraction: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        values = tuple(self.values)
        if not values or any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("sweep values must be non-empty and strictly ascending")
        object.__setattr__(self, "values", values)
        methods = tuple(m.upper() for m in self.methods)
        if not methods or any(m not in METHODS for m in methods):
            raise ValueError(f"methods must be a non-empty subset of {METHODS}")
        object.__setattr__(self, "methods", methods)
        if self.trials_per_cell < 1 or self.channel_realizations < 1:
            raise ValueError("channel_realizations and trials_per_cell must be >= 1")
        if self.sweep == "sample_size" and any(int(v) != v or v < 2 for v in values):
            raise ValueError("sample sizes must be integers >= 2")

    def cell_config(self, value) -> SystemConfig:
        if self.sweep == "snr":
            return self.config_template.with_snr_db(value)
        return self.config_template.with_snr_db(self.fixed_snr_db).replace(n=int(value))

    def to_dict(self) -> dict:
        return {
            "sweep": self.sweep,
            "values": list(self.values),
            "config_template": self.config_template.to_dict(),
            "channel_realizations": self.channel_realizations,
            "trials_per_cell": self.trials_per_cell,
            "methods": list(self.methods),
            "solver": self.solver.to_dict(),
            "grid_validation": self.grid_validation,
            "grid_coarse_step": self.grid_coarse_step,
            "grid_step": self.grid_step,
            "master_seed": self.master_seed,
            "pilot_count": self.pilot_count,
            "crb_symbol_draws": self.crb_symbol_draws,
            "fixed_snr_db": self.fixed_snr_db,
            "max_nonconverged_fraction": self.max_nonconverged_fraction,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        if "config_template" in data:
            data["config_template"] = SystemConfig.from_dict(data["config_template"])
        if "solver" in data:
            data["solver"] = SolverConfig.from_dict(data["solver"])
        for key in ("values", "methods"):
            if key in data:
                data[key] = tuple(data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)

    def fingerprint(self) -> str:
        # Parallelism does not change results, so it is not part of the identity.
        data = self.to_dict()
        data.pop("workers")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    rows: list
    spec_fingerprint: str
    channel_fingerprint: str
    trials: list = field(repr=False, default_factory=list)
    sweep_name: str = "snr"

    def to_csv(self) -> str:
        fields = list(CSV_FIELDS)
        if any("mse_grid" in row for row in self.rows):
            fields.append("mse_grid")
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            out = {"sweep_name": self.sweep_name}
            for key in fields[1:]:
                value = row.get(key, "")
                out[key] = repr(float(value)) if isinstance(value, float) else value
            writer.writerow(out)
        return buf.getvalue()

    def row(self, sweep_value, method) -> dict:
        for row in self.rows:
            if row["sweep_value"] == sweep_value and row["method"] == method:
                return row
        raise KeyError((sweep_value, method))


def _channels(spec: ExperimentSpec):
    return [draw_channel(make_stream(spec.master_seed, r, role="channel"))
            for r in range(spec.channel_realizations)]


def _channel_fingerprint(channels) -> str:
    text = ";".join(f"{c.h.real!r},{c.h.imag!r},{c.g.real!r},{c.g.imag!r}" for c in channels)
    return hashlib.sha256(text.encode()).hexdigest()


def _realization_records(spec: ExperimentSpec, r: int):
    """All per-trial records and per-cell bounds for channel realisation ``r``."""
    channel = draw_channel(make_stream(spec.master_seed, r, role="channel"))
    records, cell_bounds = [], []
    for cell, value in enumerate(spec.values):
        config = spec.cell_config(value)
        try:
            crb_mean, _, _ = bounds.averaged_crb_a(
                config, channel, spec.crb_symbol_draws, make_stream(spec.master_seed, r, cell, role="crb"))
        except bounds.SingularFimError as exc:
            log.warning("CRB undefined for realisation %d at %s=%s: %s", r, spec.sweep, value, exc)
            crb_mean = float("nan")
        cell_bounds.append({"cell": cell, "r": r, "crb_a": crb_mean, "mcrb_a": bounds.mcrb_a(config, channel)})
        for j in range(spec.trials_per_cell):
            batch = simulate_batch(config, channel, make_stream(spec.master_seed, r, j, role="batch"),
                                   pilot_count=min(spec.pilot_count, config.n))
            for method in spec.methods:
                report = estimate(batch, method, spec.solver)
                stats = report.optimizer_stats
                rec = {
                    "cell": cell, "r": r, "j": j, "method": method,
                    "sq_err": abs(report.a_hat - channel.a) ** 2,
                    "iterations": stats.iterations,
                    "line_search_steps": stats.line_search_steps,
                    "converged": stats.converged,
                }
                if spec.grid_validation:
                    grid_report = estimate_by_grid(batch, method, coarse_step=spec.grid_coarse_step,
                                                   step=spec.grid_step)
                    rec["sq_err_grid"] = abs(grid_report.a_hat - channel.a) ** 2
                records.append(rec)
    return records, cell_bounds


def _aggregate(spec: ExperimentSpec, records, cell_bounds):
    rows = []
    for cell, value in enumerate(spec.values):
        cb = [b for b in cell_bounds if b["cell"] == cell]
        crb = float(np.mean([b["crb_a"] for b in cb]))
        mcrb = float(np.mean([b["mcrb_a"] for b in cb]))
        for method in spec.methods:
            recs = [x for x in records if x["cell"] == cell and x["method"] == method]
            iters = sum(x["iterations"] for x in recs)
            ls = sum(x["line_search_steps"] for x in recs)
            nonconv = sum(not x["converged"] for x in recs) / len(recs)
            row = {
                "sweep_value": value,
                "method": method,
                "mse": float(np.mean([x["sq_err"] for x in recs])),
                "sd_iters": iters / len(recs),
                "ls_iters": ls / iters if iters else 0.0,
                "crb_a": crb,
                "mcrb_a": mcrb,
                "nonconverged_fraction": nonconv,
            }
            if spec.grid_validation:
                row["mse_grid"] = float(np.mean([x["sq_err_grid"] for x in recs]))
            if nonconv > spec.max_nonconverged_fraction:
                raise ExperimentError(
                    f"{method} at {spec.sweep}={value}: {nonconv:.1%} of solves did not converge")
            rows.append(row)
    return rows


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run every cell of ``spec`` and aggregate per (sweep value, method)."""
    channels = _channels(spec)
    indices = range(spec.channel_realizations)
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            parts = list(pool.map(_realization_records, [spec] * len(indices), indices))
    else:
        parts = [_realization_records(spec, r) for r in indices]
    records = [rec for part, _ in parts for rec in part]
    cell_bounds = [b for _, part in parts for b in part]
    records.sort(key=lambda x: (x["cell"], x["r"], x["j"], spec.methods.index(x["method"])))
    cell_bounds.sort(key=lambda x: (x["cell"], x["r"]))
    rows = _aggregate(spec, records, cell_bounds)
    log.info("experiment %s finished: %d rows", spec.fingerprint()[:12], len(rows))
    return ExperimentResult(
        rows=rows,
        spec_fingerprint=spec.fingerprint(),
        channel_fingerprint=_channel_fingerprint(channels),
        trials=records,
        sweep_name=spec.sweep,
    )


def run_mse_vs_snr(spec: ExperimentSpec) -> ExperimentResult:
    if spec.sweep != "snr":
        raise ValueError("run_mse_vs_snr needs an snr sweep")
    return run_experiment(spec)


def run_mse_vs_n(spec: ExperimentSpec) -> ExperimentResult:
    if spec.sweep != "sample_size":
        raise ValueError("run_mse_vs_n needs a sample_size sweep")
    return run_experiment(spec)


def iteration_statistics(result):
    """Per-cell mean descent iterations and line-search evaluations per iteration.

    ``result`` is an :class:`ExperimentResult` or a list of its row dicts
    (for instance read back from the CSV).
    """
    rows = result.rows if isinstance(result, ExperimentResult) else result
    return [
        {
            "sweep_value": row["sweep_value"],
            "method": row["method"],
            "sd_iters": row["sd_iters"],
            "ls_iters": row["ls_iters"],
        }
        for row in rows
    ]


def result_sidecar(spec: ExperimentSpec, result: ExperimentResult, metadata: dict | None = None) -> str:
    data = {
        "spec": spec.to_dict(),
        "spec_fingerprint": result.spec_fingerprint,
        "channel_fingerprint": result.channel_fingerprint,
        "metadata": metadata or {},
    }
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
