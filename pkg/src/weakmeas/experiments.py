"""Experiment configuration, dispatch and CSV/JSON emission."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from weakmeas import __version__
from weakmeas.povm import EstimateMode, completeness_residual
from weakmeas.sde import (
    SdeConfig,
    brownian_path,
    coarsen,
    integrate_paths,
    propagator_reconstruction,
)
from weakmeas.stats import (
    FidelityMethod,
    avg_fidelity_single,
    continuum_time,
    drift_purity,
    fidelity_sequence_curve,
    saturation_value,
)

log = logging.getLogger(__name__)

SEED_ENV = "WEAKMEAS_SEED"
MAX_SEED = 2**64 - 1


class Experiment(str, enum.Enum):
    SATURATION = "saturation"
    DRIFT = "drift"
    SINGLE = "single"
    EQUIVALENCE = "equivalence"
    PROPAGATOR = "propagator"
    COMPLETENESS = "completeness"
    SEQUENCE_VS_CONTINUUM = "sequence_vs_continuum"


COLUMNS = {
    Experiment.SATURATION: ("n", "t", "fbar_mc", "fbar_se", "fbar_closed"),
    Experiment.DRIFT: ("t", "mean_s2", "se_s2", "drift_closed"),
    Experiment.EQUIVALENCE: ("delta", "f_direct", "se_direct", "f_hypo", "se_hypo"),
    Experiment.PROPAGATOR: ("t", "tr_rho", "tr_rho_prime", "tr_rho_q", "bloch_dev_vs_direct"),
    Experiment.COMPLETENESS: ("delta", "residual"),
    Experiment.SINGLE: ("delta", "fbar", "se"),
    Experiment.SEQUENCE_VS_CONTINUUM: ("n", "t", "fbar_discrete", "se", "fbar_sde", "se_sde", "fbar_closed"),
}

REQUIRED = {
    Experiment.SATURATION: ("delta", "n_steps", "trajectories"),
    Experiment.DRIFT: ("dt", "t_end", "trajectories"),
    Experiment.SINGLE: ("delta", "samples"),
    Experiment.EQUIVALENCE: ("samples",),
    Experiment.PROPAGATOR: ("dt", "t_end"),
    Experiment.COMPLETENESS: (),
    Experiment.SEQUENCE_VS_CONTINUUM: ("delta", "n_steps", "trajectories", "dt"),
}

DEFAULT_DELTAS = {
    Experiment.EQUIVALENCE: (0.5, 2.0, 5.0, 20.0),
    Experiment.COMPLETENESS: (0.1, 1.0, 20.0),
}

# number of points on the n grid of the sequence experiments
CURVE_POINTS = 20
# drift experiment samples every DRIFT_RECORD_DT in time
DRIFT_RECORD_DT = 0.05


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration (exit status 2)."""


class NumericalAbort(ArithmeticError):
    """A run produced non-finite output or a scheme failure (exit status 3)."""


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    experiment: Experiment
    delta: float | None = Field(default=None, gt=0)
    deltas: list[float] | None = None
    n_steps: int | None = Field(default=None, ge=0)
    dt: float | None = Field(default=None, gt=0, le=1e-2)
    t_end: float | None = Field(default=None, gt=0)
    trajectories: int | None = Field(default=None, ge=1)
    samples: int | None = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    estimate_mode: EstimateMode = EstimateMode.EIGEN_SAMPLE
    out_path: str
    apriori: list[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0], min_length=3, max_length=3)

    @model_validator(mode="after")
    def _required_fields(self):
        for name in REQUIRED[self.experiment]:
            if getattr(self, name) is None:
                raise ValueError(f"field '{name}' is required for experiment '{self.experiment.value}'")
        if self.deltas is not None and any(not d > 0 for d in self.deltas):
            raise ValueError("field 'deltas' must contain positive values")
        if float(np.linalg.norm(self.apriori)) > 1.0 + 1e-12:
            raise ValueError("field 'apriori' must be a Bloch vector of norm <= 1")
        return self

    def resolved_deltas(self) -> list[float]:
        if self.deltas:
            return list(self.deltas)
        if self.delta is not None:
            return [self.delta]
        return list(DEFAULT_DELTAS[self.experiment])


def resolve_config(file_values: dict[str, Any] | None, overrides: dict[str, Any], env=os.environ) -> ExperimentConfig:
    """Merge sources, lowest precedence first: ``WEAKMEAS_SEED``, config file, flags."""
    merged: dict[str, Any] = {}
    if env.get(SEED_ENV):
        try:
            merged["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"field 'seed': {SEED_ENV}={env[SEED_ENV]!r} is not an integer") from exc
    merged.update(file_values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(merged)
    except Exception as exc:  # pydantic.ValidationError
        raise ConfigError(_describe_validation(exc)) from exc


def _describe_validation(exc: Exception) -> str:
    errors = getattr(exc, "errors", None)
    if not callable(errors):
        return str(exc)
    parts = []
    for err in errors():
        loc = ".".join(str(x) for x in err.get("loc", ())) or "config"
        msg = err.get("msg", "invalid").removeprefix("Value error, ")
        parts.append(f"field '{loc}': {msg}" if loc != "config" else msg)
    return "; ".join(parts)


def load_config_file(path: str | os.PathLike) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return values


@dataclass
class ExperimentResult:
    columns: tuple[str, ...]
    rows: list[dict[str, float]]
    summary: dict[str, Any] = field(default_factory=dict)


def _n_grid(n_max: int) -> list[int]:
    stride = max(1, n_max // CURVE_POINTS)
    grid = list(range(0, n_max + 1, stride))
    if grid[-1] != n_max:
        grid.append(n_max)
    return grid


def _saturation(cfg: ExperimentConfig, workers) -> ExperimentResult:
    ns = _n_grid(cfg.n_steps)
    curve = fidelity_sequence_curve(ns, cfg.delta, cfg.trajectories, cfg.seed, workers)
    rows = [
        {
            "n": n,
            "t": float(continuum_time(n, cfg.delta)),
            "fbar_mc": est.value,
            "fbar_se": est.standard_error,
            "fbar_closed": float(saturation_value(n, cfg.delta)),
        }
        for n, est in zip(ns, curve)
    ]
    dev = max(abs(r["fbar_mc"] - r["fbar_closed"]) for r in rows)
    return ExperimentResult(COLUMNS[cfg.experiment], rows, {"max_abs_dev_closed": dev})


def _stride_for(span: float, dt: float) -> int:
    return max(1, int(round(span / dt)))


def _drift(cfg: ExperimentConfig, workers) -> ExperimentResult:
    sde = _sde_config(cfg.dt, cfg.t_end, _stride_for(DRIFT_RECORD_DT, cfg.dt))
    paths = integrate_paths(sde, np.zeros(3), "purity", cfg.trajectories, cfg.seed, workers)
    mean, se = paths.mean("s2"), paths.standard_error("s2")
    closed = drift_purity(paths.times)
    rows = [
        {"t": float(t), "mean_s2": float(m), "se_s2": float(e), "drift_closed": float(c)}
        for t, m, e, c in zip(paths.times, mean, se, closed)
    ]
    return ExperimentResult(COLUMNS[cfg.experiment], rows, {"max_abs_dev_closed": float(np.max(np.abs(mean - closed)))})


def _single(cfg: ExperimentConfig, workers) -> ExperimentResult:
    est = avg_fidelity_single(cfg.delta, FidelityMethod.DIRECT, cfg.samples, cfg.seed, cfg.estimate_mode, workers)
    rows = [{"delta": cfg.delta, "fbar": est.value, "se": est.standard_error}]
    return ExperimentResult(COLUMNS[cfg.experiment], rows)


def _equivalence(cfg: ExperimentConfig, workers) -> ExperimentResult:
    rows = []
    for delta in cfg.resolved_deltas():
        direct = avg_fidelity_single(delta, FidelityMethod.DIRECT, cfg.samples, cfg.seed, cfg.estimate_mode, workers)
        hypo = avg_fidelity_single(delta, FidelityMethod.HYPOTHETICAL, cfg.samples, cfg.seed, cfg.estimate_mode, workers)
        rows.append(
            {
                "delta": delta,
                "f_direct": direct.value,
                "se_direct": direct.standard_error,
                "f_hypo": hypo.value,
                "se_hypo": hypo.standard_error,
            }
        )
    z = max(abs(r["f_direct"] - r["f_hypo"]) / math.hypot(r["se_direct"], r["se_hypo"]) for r in rows)
    return ExperimentResult(COLUMNS[cfg.experiment], rows, {"max_z_score": z})


def _propagator(cfg: ExperimentConfig, workers) -> ExperimentResult:
    sde = _sde_config(cfg.dt, cfg.t_end, 1)
    path = brownian_path(cfg.seed, sde.n_steps, cfg.dt)
    stride = max(1, sde.n_steps // 100)
    fine = propagator_reconstruction(path, cfg.dt, np.asarray(cfg.apriori), stride=stride)
    rows = [
        {"t": t, "tr_rho": a, "tr_rho_prime": b, "tr_rho_q": c, "bloch_dev_vs_direct": d}
        for t, a, b, c, d in zip(fine.times, fine.tr_rho, fine.tr_rho_prime, fine.tr_rho_q, fine.bloch_deviation)
    ]
    summary = {"max_bloch_dev": fine.max_deviation}
    if sde.n_steps % 2 == 0:
        coarse = propagator_reconstruction(coarsen(path, 2), 2 * cfg.dt, np.asarray(cfg.apriori))
        summary["max_bloch_dev_double_dt"] = coarse.max_deviation
        summary["halving_ratio"] = coarse.max_deviation / fine.max_deviation if fine.max_deviation > 0 else math.inf
    return ExperimentResult(COLUMNS[cfg.experiment], rows, summary)


def _completeness(cfg: ExperimentConfig, workers) -> ExperimentResult:
    rows = [{"delta": d, "residual": completeness_residual(d)} for d in cfg.resolved_deltas()]
    return ExperimentResult(COLUMNS[cfg.experiment], rows)


def _sequence_vs_continuum(cfg: ExperimentConfig, workers) -> ExperimentResult:
    ns = _n_grid(cfg.n_steps)
    curve = fidelity_sequence_curve(ns, cfg.delta, cfg.trajectories, cfg.seed, workers)
    times = [float(continuum_time(n, cfg.delta)) for n in ns]
    step_times = [t / cfg.dt for t in times]
    if any(abs(x - round(x)) > 1e-6 * max(1.0, x) for x in step_times):
        raise ConfigError("field 'dt': continuum times 12 n / delta^2 of the n grid are not multiples of dt")
    steps = [int(round(x)) for x in step_times]
    if steps[-1] == 0:
        sde_rows = {0: (0.5, 0.0)}
    else:
        # every grid point is a multiple of the gcd, so one strided record covers them all
        sde = SdeConfig(cfg.dt, steps[-1] * cfg.dt, math.gcd(*steps))
        # a separate master seed keeps the ensemble independent of the discrete runs
        paths = integrate_paths(sde, np.zeros(3), "bloch", cfg.trajectories, (cfg.seed + 1) % (MAX_SEED + 1), workers)
        s2, se = paths.mean("s2"), paths.standard_error("s2")
        sde_rows = {int(k): (0.5 + m / 6.0, e / 6.0) for k, m, e in zip(sde.record_steps(), s2, se)}
    rows = []
    for n, t, k, est in zip(ns, times, steps, curve):
        f_sde, se_sde = sde_rows[k]
        rows.append(
            {
                "n": n,
                "t": t,
                "fbar_discrete": est.value,
                "se": est.standard_error,
                "fbar_sde": float(f_sde),
                "se_sde": float(se_sde),
                "fbar_closed": float(saturation_value(n, cfg.delta)),
            }
        )
    return ExperimentResult(COLUMNS[cfg.experiment], rows)


def _sde_config(dt: float, t_end: float, stride: int) -> SdeConfig:
    try:
        return SdeConfig(dt, t_end, stride)
    except ValueError as exc:
        raise ConfigError(f"field 'dt'/'t_end': {exc}") from exc


RUNNERS = {
    Experiment.SATURATION: _saturation,
    Experiment.DRIFT: _drift,
    Experiment.SINGLE: _single,
    Experiment.EQUIVALENCE: _equivalence,
    Experiment.PROPAGATOR: _propagator,
    Experiment.COMPLETENESS: _completeness,
    Experiment.SEQUENCE_VS_CONTINUUM: _sequence_vs_continuum,
}


def compute(cfg: ExperimentConfig, workers: int | None = 1) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg, workers)


def format_value(value) -> str:
    """Integers verbatim; floats with 17 significant digits, e.g. ``1.0000000000000000e0``."""
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("boolean values are not numeric CSV fields")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if not math.isfinite(x):
        raise NumericalAbort(f"non-finite value {x!r}")
    mantissa, exponent = f"{x:.16e}".split("e")
    return f"{mantissa}e{int(exponent)}"


def write_csv(rows: Iterable[dict[str, Any]], path: str | os.PathLike, columns: Iterable[str] | None = None) -> None:
    """Stream ``rows`` to ``path`` as comma-separated values with LF line endings.

    The file appears only after every row was written; a non-finite value
    raises :class:`NumericalAbort` and leaves no output behind.
    """
    path = Path(path)
    it = iter(rows)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("write_csv needs at least one row") from None
    columns = tuple(columns) if columns is not None else tuple(first)
    tmp = path.with_name(path.name + ".partial")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(columns) + "\n")
            for row in _chain(first, it):
                fh.write(",".join(format_value(row[c]) for c in columns) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write CSV to {path}: {exc.strerror}") from exc
    finally:
        if tmp.exists():
            tmp.unlink()


def _chain(first, rest):
    yield first
    yield from rest


def version_string() -> str:
    """``git describe``-style version: the package version plus the commit when available."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    return f"v{__version__}-g{out}" if out else f"v{__version__}"


def sidecar_path(out_path: str | os.PathLike) -> Path:
    return Path(out_path).with_suffix(".json")


def run_experiment(cfg: ExperimentConfig, workers: int | None = 1) -> ExperimentResult:
    """Run, then write the CSV and its JSON sidecar (config, version, summary)."""
    log.info("running %s (seed %d)", cfg.experiment.value, cfg.seed)
    result = compute(cfg, workers)
    write_csv(result.rows, cfg.out_path, result.columns)
    sidecar = {
        "config": json.loads(cfg.model_dump_json()),
        "version": version_string(),
        "columns": list(result.columns),
        "rows": len(result.rows),
        "summary": result.summary,
    }
    sidecar_path(cfg.out_path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result
