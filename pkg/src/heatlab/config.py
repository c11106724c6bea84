"""Experiment configuration: an INI-style ``key = value`` file with sections.

Values are Python literals (numbers, tuples, lists, quoted strings); bare words are
read as strings. Relative file paths resolve against the config file's directory.

    [experiment]   name, output, seed, workers
    [potential]    spec = time_power(c=0.5, beta=1.0)
    [measure]      dim, atoms = [(x..., w), ...], density_file
    [grid]         half_width, h, T, t_min, ratio, r_max, theta
    [probes]       points, times, capacity_sets, psi_points, kernel_center, sigma
    [sweeps]       R_list, k_list, delta_list, lambda_levels
    [tolerances]   rtol, atol, eta, trace_rtol, monotone, lower_bound
    [trace]        sizes, t_min, h, candidates
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridSpec
from .kernel import EngineConfig, Tolerances
from .measures import Measure, MeasureError, read_density_csv, split_signed
from .potentials import Potential, parse_potential
from .solver import StepControl


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "experiment": {"name", "output", "seed", "workers"},
    "potential": {"spec"},
    "measure": {"dim", "atoms", "density_file"},
    "grid": {"half_width", "h", "t", "t_min", "ratio", "r_max", "theta"},
    "probes": {"points", "times", "capacity_sets", "psi_points", "kernel_center", "sigma"},
    "sweeps": {"r_list", "k_list", "delta_list", "lambda_levels"},
    "tolerances": {"rtol", "atol", "eta", "trace_rtol", "monotone", "lower_bound"},
    "trace": {"sizes", "t_min", "h", "candidates"},
}


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


@dataclass
class ExperimentConfig:
    name: str
    potential_spec: str
    dim: int
    atoms: list[tuple]
    density_file: Path | None
    T: float
    half_width: float
    h: float
    t_min: float
    ratio: float = 0.5
    r_max: float = 1.0
    theta: float = 0.005
    points: list[tuple] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    capacity_sets: list[list[tuple]] = field(default_factory=list)
    psi_points: list[tuple] = field(default_factory=list)
    kernel_center: tuple = ()
    sigma: float = 0.1
    R_list: list[float] = field(default_factory=list)
    k_list: list[float] = field(default_factory=list)
    delta_list: list[float] = field(default_factory=list)
    lambda_levels: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    rtol: float = 1e-3
    atol: float = 1e-14
    eta: float = 0.05
    trace_rtol: float = 0.1
    monotone: float = 0.01
    lower_bound: float = 0.02
    trace_sizes: tuple[float, ...] = (1.0, 0.5)
    trace_t_min: float = 2.0 ** -10
    trace_h: float = 0.01
    candidates: list[list[tuple]] = field(default_factory=list)
    seed: int = 0
    workers: int = 1
    output: Path = Path("heatlab_out")
    source: Path | None = None
    text: str = ""

    # ---------------------------------------------------------------- construction

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.parse(path.read_text(), base_dir=path.parent, source=path)

    @classmethod
    def parse(cls, text: str, base_dir: str | Path = ".", source: Path | None = None) -> ExperimentConfig:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config syntax: {exc}") from exc
        raw: dict[str, dict] = {}
        for sec in cp.sections():
            if sec not in _SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key, val in cp.items(sec):
                if key not in _SCHEMA[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                raw.setdefault(sec, {})[key] = _literal(val)
        base_dir = Path(base_dir)

        def get(sec, key, default=None, required=False):
            if key in raw.get(sec, {}):
                return raw[sec][key]
            if required:
                raise ConfigError(f"missing required key {key!r} in [{sec}]")
            return default

        try:
            T = float(get("grid", "t", 1.0))
            dim = int(get("measure", "dim", 1))
            density = get("measure", "density_file")
            if density is not None:
                density = Path(density) if Path(density).is_absolute() else base_dir / density
            cfg = cls(
                name=str(get("experiment", "name", "experiment")),
                potential_spec=str(get("potential", "spec", required=True)),
                dim=dim,
                atoms=[tuple(np.ravel(a)) for a in get("measure", "atoms", [])],
                density_file=density,
                T=T,
                half_width=float(get("grid", "half_width", 8.0 * np.sqrt(T))),
                h=float(get("grid", "h", 0.02)),
                t_min=float(get("grid", "t_min", 0.01)),
                ratio=float(get("grid", "ratio", 0.5)),
                r_max=float(get("grid", "r_max", 1.0)),
                theta=float(get("grid", "theta", 0.005)),
                points=[tuple(np.atleast_1d(p).astype(float)) for p in get("probes", "points", [])],
                times=[float(t) for t in get("probes", "times", [])],
                capacity_sets=[[tuple(np.atleast_1d(p).astype(float)) for p in s]
                               for s in get("probes", "capacity_sets", [])],
                psi_points=[tuple(np.atleast_1d(p).astype(float)) for p in get("probes", "psi_points", [])],
                kernel_center=tuple(np.atleast_1d(get("probes", "kernel_center", [0.0] * dim)).astype(float)),
                sigma=float(get("probes", "sigma", 0.1)),
                R_list=[float(v) for v in get("sweeps", "r_list", [])],
                k_list=[float(v) for v in get("sweeps", "k_list", [])],
                delta_list=[float(v) for v in get("sweeps", "delta_list", [])],
                lambda_levels=[float(v) for v in get("sweeps", "lambda_levels", [1e-1, 1e-2, 1e-3, 1e-4])],
                rtol=float(get("tolerances", "rtol", 1e-3)),
                atol=float(get("tolerances", "atol", 1e-14)),
                eta=float(get("tolerances", "eta", 0.05)),
                trace_rtol=float(get("tolerances", "trace_rtol", 0.1)),
                monotone=float(get("tolerances", "monotone", 0.01)),
                lower_bound=float(get("tolerances", "lower_bound", 0.02)),
                trace_sizes=tuple(float(s) for s in np.atleast_1d(get("trace", "sizes", (1.0, 0.5)))),
                trace_t_min=float(get("trace", "t_min", 2.0 ** -10)),
                trace_h=float(get("trace", "h", 0.01)),
                candidates=[[tuple(np.ravel(a)) for a in c] for c in get("trace", "candidates", [])],
                seed=int(get("experiment", "seed", 0)),
                workers=int(get("experiment", "workers", 1)),
                output=Path(str(get("experiment", "output", "heatlab_out"))),
                source=source,
                text=text,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value: {exc}") from exc
        cfg.validate(base_dir)
        return cfg

    def validate(self, base_dir: str | Path = ".") -> None:
        if self.dim not in (1, 2, 3):
            raise ConfigError("measure dim must be 1, 2 or 3")
        for name in ("rtol", "eta", "trace_rtol", "monotone", "lower_bound", "T", "h", "t_min", "sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.atol < 0:
            raise ConfigError("atol must be nonnegative")
        if self.density_file is not None and not self.density_file.is_file():
            raise ConfigError(f"density file not found: {self.density_file}")
        for a in self.atoms + [a for c in self.candidates for a in c]:
            if len(a) != self.dim + 1:
                raise ConfigError(f"atom {a} needs {self.dim} coordinates and a weight")
        for group in (self.points, self.psi_points, [p for s in self.capacity_sets for p in s]):
            for p in group:
                if len(p) != self.dim:
                    raise ConfigError(f"probe {p} does not have dimension {self.dim}")
        try:
            self.potential(base_dir)
            self.grid()
            self.signed_measure()
        except (ValueError, MeasureError, OSError) as exc:
            raise ConfigError(str(exc)) from exc

    # ---------------------------------------------------------------- derived objects

    def potential(self, base_dir: str | Path | None = None) -> Potential:
        if base_dir is None:
            base_dir = self.source.parent if self.source is not None else "."
        return parse_potential(self.potential_spec, self.dim, base_dir)

    def grid(self, h: float | None = None, t_min: float | None = None) -> GridSpec:
        return GridSpec.default(self.dim, self.T, self.half_width, h or self.h, t_min or self.t_min, self.ratio)

    def signed_measure(self) -> tuple[Measure, Measure]:
        """(positive part, negative part); a density file always belongs to the positive part."""
        pos, neg = split_signed(self.atoms, self.dim)
        if self.density_file is not None:
            dens = read_density_csv(self.density_file, self.dim)
            pos = Measure(self.dim, pos.locations, pos.weights, dens)
        return pos, neg

    def measure(self) -> Measure:
        pos, neg = self.signed_measure()
        if not neg.is_zero:
            raise ConfigError("this subcommand needs a nonnegative measure")
        return pos

    def total_variation(self) -> Measure:
        pos, neg = self.signed_measure()
        return pos + neg if not neg.is_zero else pos

    def candidate_measures(self) -> list[Measure]:
        return [Measure.from_atoms(c, self.dim) for c in self.candidates]

    def tolerances(self) -> Tolerances:
        return Tolerances(rtol=self.rtol, atol=self.atol, eta=self.eta)

    def engine(self) -> EngineConfig:
        return EngineConfig(tol=self.tolerances())

    def control(self) -> StepControl:
        return StepControl(theta=self.theta, r_max=self.r_max)

    def probe_array(self) -> np.ndarray:
        return np.array(self.points, dtype=float).reshape(-1, self.dim)
