"""Command-line front end: ``twrn <verb> --config cfg.json --out path``.

Verbs: simulate, estimate, bounds, verify, sweep-snr, sweep-n, iters.
Exit codes: 0 success, 1 validation failure, 2 numerical failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from numpy.linalg import LinAlgError

from . import analysis, bounds
from .estimators import METHODS, estimate, estimate_by_grid
from .experiments import (
    DEFAULT_N_GRID,
    DEFAULT_SNR_GRID,
    ExperimentError,
    ExperimentSpec,
    iteration_statistics,
    result_sidecar,
    run_experiment,
)
from .model import ChannelState, SystemConfig, draw_channel, make_stream, read_batch, simulate_batch, write_batch
from .objectives import SingularPointError
from .optimize import DivergedError, SolverConfig

__all__ = ["RunConfig", "ExperimentSection", "GridSection", "main", "EXIT_OK", "EXIT_VALIDATION",
           "EXIT_NUMERICAL", "EXIT_IO"]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
VERBS = ("simulate", "estimate", "bounds", "verify", "sweep-snr", "sweep-n", "iters")


class ValidationError(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    pass


def _reject_unknown(section: str, data: dict, known) -> None:
    unknown = set(data) - set(known)
    if unknown:
        raise ValidationError(f"unknown keys in [{section}]: {sorted(unknown)}")


@dataclass(frozen=True)
class GridSection:
    step: float = 1e-3
    coarse_step: float = 1e-2

    def __post_init__(self):
        if not 0 < self.step < self.coarse_step:
            raise ValidationError("grid needs 0 < step < coarse_step")

    def to_dict(self) -> dict:
        return {"step": self.step, "coarse_step": self.coarse_step}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSection":
        _reject_unknown("grid", data, ("step", "coarse_step"))
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class ExperimentSection:
    master_seed: int = 0
    channel_realizations: int = 100
    trials_per_cell: int = 1
    pilot_count: int = 4
    crb_symbol_draws: int = 100
    snr_values: tuple = DEFAULT_SNR_GRID
    n_values: tuple = DEFAULT_N_GRID
    fixed_snr_db: float = 15.0
    max_nonconverged_fraction: float = 0.05
    workers: int = 1
    noiseless: bool = False

    def __post_init__(self):
        for name in ("channel_realizations", "trials_per_cell", "crb_symbol_draws", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"experiment.{name} must be >= 1")
        if self.pilot_count < 0:
            raise ValidationError("experiment.pilot_count must be >= 0")
        if not 0 <= self.max_nonconverged_fraction <= 1:
            raise ValidationError("experiment.max_nonconverged_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "channel_realizations": self.channel_realizations,
            "trials_per_cell": self.trials_per_cell,
            "pilot_count": self.pilot_count,
            "crb_symbol_draws": self.crb_symbol_draws,
            "snr_values": [float(v) for v in self.snr_values],
            "n_values": [int(v) for v in self.n_values],
            "fixed_snr_db": self.fixed_snr_db,
            "max_nonconverged_fraction": self.max_nonconverged_fraction,
            "workers": self.workers,
            "noiseless": self.noiseless,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSection":
        _reject_unknown("experiment", data, cls.__dataclass_fields__)
        data = dict(data)
        if "snr_values" in data:
            data["snr_values"] = tuple(float(v) for v in data["snr_values"])
        if "n_values" in data:
            data["n_values"] = tuple(int(v) for v in data["n_values"])
        return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    """Parsed config file; ``to_dict(from_dict(d))`` is a fixed point after one pass."""

    system: SystemConfig = field(default_factory=lambda: ExperimentSpec().config_template)
    channel: ChannelState | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    grid: GridSection = field(default_factory=GridSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def to_dict(self) -> dict:
        data = {
            "system": self.system.to_dict(),
            "solver": self.solver.to_dict(),
            "grid": self.grid.to_dict(),
            "experiment": self.experiment.to_dict(),
        }
        if self.channel is not None:
            data["channel"] = self.channel.to_dict()
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        _reject_unknown("config", data, ("system", "channel", "solver", "grid", "experiment"))
        try:
            return cls(
                system=SystemConfig.from_dict(data.get("system", cls().system.to_dict())),
                channel=ChannelState.from_dict(data["channel"]) if data.get("channel") else None,
                solver=SolverConfig.from_dict(data.get("solver", {})),
                grid=GridSection.from_dict(data.get("grid", {})),
                experiment=ExperimentSection.from_dict(data.get("experiment", {})),
            )
        except (TypeError, KeyError) as exc:
            raise ValidationError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        exp = ExperimentSection.from_dict({**self.experiment.to_dict(), "master_seed": seed})
        return RunConfig(self.system, self.channel, self.solver, self.grid, exp)

    def resolved_channel(self) -> ChannelState:
        if self.channel is not None:
            return self.channel
        return draw_channel(make_stream(self.experiment.master_seed, 0, role="channel"))

    def experiment_spec(self, sweep: str, methods, grid_validation: bool) -> ExperimentSpec:
        e = self.experiment
        return ExperimentSpec(
            sweep=sweep,
            values=e.snr_values if sweep == "snr" else e.n_values,
            config_template=self.system,
            channel_realizations=e.channel_realizations,
            trials_per_cell=e.trials_per_cell,
            methods=tuple(methods),
            solver=self.solver,
            grid_validation=grid_validation,
            grid_coarse_step=self.grid.coarse_step,
            grid_step=self.grid.step,
            master_seed=e.master_seed,
            pilot_count=e.pilot_count,
            crb_symbol_draws=e.crb_symbol_draws,
            fixed_snr_db=e.fixed_snr_db,
            max_nonconverged_fraction=e.max_nonconverged_fraction,
            workers=e.workers,
        )


def _metadata() -> dict:
    return {"created": datetime.now(timezone.utc).isoformat(timespec="seconds"), "tool": "twrn"}


def _methods(choice: str):
    return METHODS if choice == "both" else (choice.upper(),)


def _write_rows(path: Path, fields, rows) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_simulate(cfg: RunConfig, args) -> int:
    e = cfg.experiment
    channel = cfg.resolved_channel()
    batch = simulate_batch(cfg.system, channel, make_stream(e.master_seed, 0, 0, role="batch"),
                           pilot_count=min(e.pilot_count, cfg.system.n), noiseless=e.noiseless)
    csv_path, json_path = write_batch(batch, channel, args.out, metadata=_metadata())
    log.info("wrote %s and %s", csv_path, json_path)
    return EXIT_OK


def cmd_estimate(cfg: RunConfig, args) -> int:
    if args.batch is None:
        raise ValidationError("estimate needs --batch <path of a simulated batch>")
    batch, truth = read_batch(args.batch)
    reports = []
    for method in _methods(args.method):
        reports.append(("steepest_descent", estimate(batch, method, cfg.solver)))
        if args.grid_validate:
            reports.append(("grid", estimate_by_grid(batch, method, coarse_step=cfg.grid.coarse_step,
                                                             step=cfg.grid.step)))
    out = Path(args.out)
    fields = ("solver",) + tuple(reports[0][1].CSV_FIELDS)
    _write_rows(out.with_suffix(".csv"), fields, [{"solver": s, **r.csv_row()} for s, r in reports])
    _write_json(out.with_suffix(".json"), {
        "batch": str(args.batch),
        "truth_a": None if truth is None else [truth.a.real, truth.a.imag],
        "reports": [{"solver": s, **r.to_dict()} for s, r in reports],
        "metadata": _metadata(),
    })
    return EXIT_OK


def cmd_bounds(cfg: RunConfig, args) -> int:
    channel = cfg.resolved_channel()
    report = bounds.bound_report(cfg.system, channel, cfg.experiment.crb_symbol_draws, cfg.experiment.master_seed)
    out = Path(args.out)
    _write_rows(out.with_suffix(".csv"), report.CSV_FIELDS, report.csv_rows())
    _write_json(out.with_suffix(".json"), {"config": cfg.to_dict(), "metadata": _metadata()})
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    checks = analysis.verification_suite(cfg.system, cfg.experiment.master_seed)
    _write_json(Path(args.out).with_suffix(".json"), checks)
    failed = [c["check_name"] for c in checks if c["status"] != "pass"]
    if failed:
        raise NumericalFailure(f"verification failed: {', '.join(failed)}")
    return EXIT_OK


def _cmd_sweep(cfg: RunConfig, args, sweep: str) -> int:
    spec = cfg.experiment_spec(sweep, _methods(args.method), args.grid_validate)
    result = run_experiment(spec)
    out = Path(args.out)
    out.with_suffix(".csv").write_text(result.to_csv())
    out.with_suffix(".json").write_text(result_sidecar(spec, result, _metadata()))
    return EXIT_OK


def cmd_sweep_snr(cfg: RunConfig, args) -> int:
    return _cmd_sweep(cfg, args, "snr")


def cmd_sweep_n(cfg: RunConfig, args) -> int:
    return _cmd_sweep(cfg, args, "sample_size")


def cmd_iters(cfg: RunConfig, args) -> int:
    """Side-by-side iteration counts per sweep value from a sweep CSV."""
    if args.input is None:
        raise ValidationError("iters needs --input <sweep csv>")
    rows = list(csv.DictReader(io.StringIO(Path(args.input).read_text())))
    if not rows or not {"sweep_value", "method", "sd_iters", "ls_iters"} <= set(rows[0]):
        raise ValidationError(f"{args.input} is not a sweep CSV")
    stats = iteration_statistics(rows)
    by_value = {}
    for row in stats:
        by_value.setdefault(row["sweep_value"], {})[row["method"]] = row
    fields = ["sweep_value"]
    for method in METHODS:
        fields += [f"{method.lower()}_sd_iters", f"{method.lower()}_ls_iters"]
    fields.append("msev_fewer")
    out_rows = []
    for value, per in by_value.items():
        out = {"sweep_value": value}
        for method in METHODS:
            if method in per:
                out[f"{method.lower()}_sd_iters"] = per[method]["sd_iters"]
                out[f"{method.lower()}_ls_iters"] = per[method]["ls_iters"]
        if len(per) == 2:
            ml, msev = per["ML"], per["MSEV"]
            out["msev_fewer"] = int(float(msev["sd_iters"]) <= float(ml["sd_iters"])
                                    and float(msev["ls_iters"]) <= float(ml["ls_iters"]))
        out_rows.append(out)
    _write_rows(Path(args.out).with_suffix(".csv"), fields, out_rows)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "bounds": cmd_bounds,
    "verify": cmd_verify,
    "sweep-snr": cmd_sweep_snr,
    "sweep-n": cmd_sweep_n,
    "iters": cmd_iters,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="twrn", description="AF two-way relay channel estimation toolkit.")
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    parser.add_argument("--out", required=True, help="output path; .csv / .json suffixes are added")
    parser.add_argument("--seed", type=int, help="override experiment.master_seed")
    parser.add_argument("--method", choices=("ml", "msev", "both"), default="both")
    parser.add_argument("--grid-validate", action="store_true", help="also run the grid-search reference")
    parser.add_argument("--batch", help="batch path written by 'simulate' (estimate)")
    parser.add_argument("--input", help="sweep CSV to post-process (iters)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        print(f"twrn: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg = cfg.with_seed(args.seed)
        parent = Path(args.out).parent
        if not parent.is_dir():
            raise FileNotFoundError(f"output directory {parent} does not exist")
        return COMMANDS[args.verb](cfg, args)
    except (NumericalFailure, ExperimentError, bounds.SingularFimError, DivergedError,
            SingularPointError, FloatingPointError, LinAlgError) as exc:
        print(f"twrn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"twrn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"twrn: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
