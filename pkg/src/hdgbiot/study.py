"""Configuration and drivers for the manufactured-solution convergence studies.

A study is described by a :class:`StudyConfig`, read from a flat
``key = value`` file and/or command-line flags.  Spatial studies refine the
mesh uniformly with a time step tied to ``h``; temporal studies fix the
mesh and halve the time step.  Both write ``report.csv``, ``report.md`` and
a per-step ``diagnostics.csv``; the files contain no timings or other
run-dependent values, so equal configurations give byte-identical output.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .forms import ModelParameters
from .interpolation import InterpolationError
from .linalg import SingularMatrixError
from .mesh import Mesh, generate_structured_mesh, refine_uniform
from .mms import ManufacturedSolution
from .solver import Discretization, TimeGrid, run_transient, write_diagnostics
from .verify import FIELDS, compute_errors, convergence_rates, records_to_csv, records_to_markdown, structural_checks

log = logging.getLogger(__name__)

PARAM_KEYS = tuple(f.name for f in dataclasses.fields(ModelParameters))
STUDY_KINDS = ("spatial", "temporal", "properties")


class StudyError(RuntimeError):
    """A study level failed; the message names the level."""


@dataclass
class StudyConfig:
    """Settings of one study run.

    ``params`` holds overrides of :class:`ModelParameters` fields; the
    interior-penalty parameters default to ``8 k^2``.
    """

    study: str = "spatial"
    degree: int = 1
    levels: int = 4
    coarse_n: int = 2
    final_time: float = 0.01
    dt_ladder: str = "T/8,T/16,T/32,T/64,T/128"
    dt_scale: float = 0.1  # spatial studies use dt = dt_scale * h^(k+2)
    temporal_mesh: int = 32
    out: str = "out"
    seed: int = 0
    dump_fields: bool = False
    ah_sign: float = 1.0  # mutation hook for the property suite
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.study not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.study!r}; expected one of {STUDY_KINDS}")
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if not self.final_time > 0:
            raise ValueError("final time must be positive")
        unknown = set(self.params) - set(PARAM_KEYS)
        if unknown:
            raise ValueError(f"unknown parameter override(s): {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, values: dict) -> "StudyConfig":
        """Build from string or typed values; keys are field names or model parameter names."""
        kw, params = {}, {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key in PARAM_KEYS:
                params[key] = float(raw)
            elif key in types and key != "params":
                kw[key] = _convert(raw, types[key])
            else:
                raise ValueError(f"unknown configuration key {key!r}")
        return cls(**kw, params=params)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "StudyConfig":
        """Read ``key = value`` lines (``#`` starts a comment); ``overrides`` win."""
        values = read_config_file(path)
        values.update(overrides or {})
        return cls.from_mapping(values)

    def parameters(self) -> ModelParameters:
        return ModelParameters.for_degree(self.degree, **self.params)

    def dt_values(self) -> list[float]:
        return parse_dt_ladder(self.dt_ladder, self.final_time)

    def describe(self) -> list[str]:
        p = self.parameters()
        pars = ", ".join(f"{k}={getattr(p, k):g}" for k in PARAM_KEYS)
        return [f"degree k={self.degree}, final time T={self.final_time:g}", f"parameters: {pars}"]


def _convert(raw, typ):
    if not isinstance(raw, str):
        return raw
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if typ == "bool":
        if raw.strip().lower() not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.strip().lower() in ("1", "true", "yes")
    return raw.strip()


def read_config_file(path) -> dict:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


_DT_TOKEN = re.compile(r"^\s*T\s*(?:/\s*([0-9.eE+-]+))?\s*$")


def parse_dt_ladder(text: str, final_time: float) -> list[float]:
    """Parse ``"T/8,T/16,0.0005"`` into time steps; each must divide ``T`` into whole steps."""
    out = []
    for tok in str(text).split(","):
        m = _DT_TOKEN.match(tok)
        dt = final_time / float(m.group(1) or 1.0) if m else float(tok)
        if not dt > 0:
            raise ValueError(f"time step must be positive: {tok!r}")
        n = final_time / dt
        if abs(n - round(n)) > 1e-9 * n:
            raise ValueError(f"time step {tok.strip()!r} does not divide T={final_time:g}")
        out.append(final_time / round(n))
    return out


def spatial_ladder(coarse_n: int, levels: int) -> list[Mesh]:
    """Structured coarse mesh and its uniform refinements."""
    meshes = [generate_structured_mesh(coarse_n)]
    for _ in range(levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def structural_monitor(data):
    """Per-step monitor recording the structural residuals of each new state."""

    def monitor(disc, state, prev):
        return structural_checks(state, disc.params, data, prev)

    return monitor


@dataclass
class ConvergenceReport:
    kind: str  # "spatial" or "temporal"
    config: StudyConfig
    records: list
    diagnostics: list  # per-step rows with a "level" column
    header: list = field(default_factory=list)

    @property
    def by(self) -> str:
        return "h" if self.kind == "spatial" else "dt"

    @property
    def rates(self) -> list[dict]:
        return convergence_rates(self.records, self.by) if len(self.records) > 1 else []

    def final_rates(self) -> dict:
        rates = self.rates
        return dict(rates[-1]) if rates else {}

    def structural_max(self) -> dict:
        keys = ("divergence", "compressibility", "normal_jump", "mass_balance")
        return {k: max((r[k] for r in self.diagnostics if k in r), default=float("nan")) for k in keys}

    def to_csv(self) -> str:
        return records_to_csv(self.records, self.rates, self.by)

    def to_markdown(self) -> str:
        title = "Spatial convergence" if self.kind == "spatial" else "Temporal convergence"
        lines = [f"# {title}", ""] + [f"- {h}" for h in self.config.describe() + self.header] + [""]
        lines.append(records_to_markdown(self.records, self.rates, self.by))
        lines += ["## Structural residuals (maximum over all levels and steps)", ""]
        lines += ["| quantity | value |", "|---|---|"]
        lines += [f"| {k} | {v:.3e} |" for k, v in self.structural_max().items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / "report.csv", "md": out / "report.md", "diagnostics": out / "diagnostics.csv"}
        paths["csv"].write_text(self.to_csv())
        paths["md"].write_text(self.to_markdown())
        write_diagnostics(self.diagnostics, paths["diagnostics"])
        return paths


def dump_fields(state, path) -> None:
    """Plain-text listing ``field entity c_0 c_1 ...`` of every coefficient block."""
    dm = state.dofmap
    with open(path, "w") as fh:
        fh.write(f"# time {state.time:.17g} degree {dm.config.k}\n")
        for name, f in dm.fields.items():
            for ent, dofs in zip(f.entities, f.dofs):
                fh.write(f"{name} {ent} " + " ".join(f"{v:.17g}" for v in state.x[dofs]) + "\n")


def _run_level(disc, grid, mms, level, dt, tag):
    try:
        traj = run_transient(disc, grid, monitor=structural_monitor(mms))
        rec = compute_errors(traj.final, mms, level=level, dt=dt)
    except (SingularMatrixError, InterpolationError, ValueError, FloatingPointError) as exc:
        raise StudyError(f"{tag} failed: {exc}") from exc
    return traj, rec


def run_spatial_study(config: StudyConfig, write: bool = True) -> ConvergenceReport:
    """Errors at ``T`` on a uniformly refined ladder with ``dt = dt_scale h^(k+2)``."""
    if config.levels < 2:
        raise ValueError("a convergence study needs at least two levels")
    params = config.parameters()
    mms = ManufacturedSolution(params)
    records, diags = [], []
    for level, mesh in enumerate(spatial_ladder(config.coarse_n, config.levels)):
        grid = TimeGrid.from_dt(config.final_time, config.dt_scale * mesh.h_max ** (config.degree + 2))
        disc = Discretization(mesh, config.degree, params, mms)
        tag = f"level {level} ({mesh.n_cells} cells, {grid.n_steps} steps)"
        log.info("spatial %s: %d dofs", tag, disc.dofmap.n_dofs)
        traj, rec = _run_level(disc, grid, mms, level, grid.dt, tag)
        records.append(rec)
        diags += [{"level": level, **row} for row in traj.diagnostics]
        if write and config.dump_fields:
            Path(config.out).mkdir(parents=True, exist_ok=True)
            dump_fields(traj.final, Path(config.out) / f"fields_level{level}.txt")
    header = [f"meshes: structured {config.coarse_n}x{config.coarse_n} and {config.levels - 1} uniform refinements",
              f"time step dt = {config.dt_scale:g} h^{config.degree + 2}, capped at T"]
    report = ConvergenceReport("spatial", config, records, diags, header)
    if write:
        report.write(config.out)
    return report


def run_temporal_study(config: StudyConfig, write: bool = True) -> ConvergenceReport:
    """Errors at ``T`` for a ladder of time steps on one fixed mesh.

    A ladder with a single entry is allowed and yields one record without rates.
    """
    dts = config.dt_values()
    params = config.parameters()
    mms = ManufacturedSolution(params)
    mesh = generate_structured_mesh(config.temporal_mesh)
    disc = Discretization(mesh, config.degree, params, mms)
    records, diags = [], []
    for level, dt in enumerate(dts):
        grid = TimeGrid.from_dt(config.final_time, dt)
        tag = f"level {level} (dt = {dt:.6g}, {grid.n_steps} steps)"
        log.info("temporal %s", tag)
        traj, rec = _run_level(disc, grid, mms, level, dt, tag)
        records.append(rec)
        diags += [{"level": level, **row} for row in traj.diagnostics]
        if write and config.dump_fields:
            Path(config.out).mkdir(parents=True, exist_ok=True)
            dump_fields(traj.final, Path(config.out) / f"fields_level{level}.txt")
    header = [
        f"mesh: structured {config.temporal_mesh}x{config.temporal_mesh} ({mesh.n_cells} cells), "
        f"{disc.dofmap.n_dofs} unknowns",
        "desk-scaled setup: mesh and degree are chosen so that the whole ladder runs in minutes; "
        "absolute errors depend on this choice and only the observed rates are meaningful",
        "errors are measured against the exact solution, so a field whose spatial error "
        "exceeds its temporal error shows a flattened rate",
    ]
    report = ConvergenceReport("temporal", config, records, diags, header)
    if write:
        report.write(config.out)
    return report


def rate_summary(report: ConvergenceReport) -> str:
    r = report.final_rates()
    if not r:
        return "none (single level)"
    return " ".join(f"{f}={r[f]:.2f}" if not math.isnan(r[f]) else f"{f}=nan" for f in FIELDS)
