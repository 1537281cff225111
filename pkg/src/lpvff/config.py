"""Experiment configuration: an INI file read with configparser.

Every field has a default, and the defaults are the benchmark experiment, so
an empty file (or no file) resolves to the same run as ``benchmark.cfg``.
Floats are written with ``repr`` so a config survives a write/read cycle
unchanged.
"""

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError, InvalidInputError
from .feedforward import BasisSet
from .kernel import BlockSpec, KernelSpec, SearchConfig
from .plant import PlantParams
from .trajectory import MotionBounds

__all__ = [
    "ControllerConfig",
    "TrajectoryConfig",
    "IdentificationConfig",
    "CompareConfig",
    "ExperimentConfig",
    "load_config",
    "benchmark_kernel",
]

GAMMA_POLICIES = ("trace", "search", "fixed")
TRAINING_FEEDFORWARD = ("none", "lti")


@dataclass(frozen=True)
class ControllerConfig:
    """Lead filter tuned for unit loop gain at ``crossover_hz`` with frozen ``tuning_rho``."""

    crossover_hz: float = 2.0
    ratio: float = 3.0
    tuning_rho: float = 0.5
    oversampling: int = 10


@dataclass(frozen=True)
class TrajectoryConfig:
    start: float = 0.2
    end: float = 0.8
    v_max: float = 1.0
    a_max: float = 2.0
    j_max: float = 5.0
    s_max: float = 32.5
    sample_period: float = 1e-3
    align_to_samples: bool = True

    @property
    def bounds(self):
        return MotionBounds(self.v_max, self.a_max, self.j_max, self.s_max)


@dataclass(frozen=True)
class IdentificationConfig:
    basis: str = "integral, identity, d2"
    training_feedforward: str = "lti"
    training_rho: float = 0.5
    frozen_rho: float = None
    remove_output_offset: bool = True
    gamma_policy: str = "search"
    gamma_scale: float = 1e-8
    gamma_value: float = None
    theta_grid_points: int = 101
    theta_error_margin: float = 0.05


@dataclass(frozen=True)
class CompareConfig:
    lti_rho: float = 0.5
    true_theta_rows: bool = True
    surface_rho_points: int = 41
    surface_drho_points: int = 41
    surface_drho_max: float = 1.0
    surface_ddr: float = 1.0
    surface_dddr: float = 20.0
    validation: bool = False
    validation_start: float = 0.7
    validation_end: float = 0.3


def benchmark_kernel():
    """Constant blocks for the first two parameters, a free SE block for the third."""
    return KernelSpec(
        (
            BlockSpec("constant", 1.0),
            BlockSpec("constant", 1.0),
            BlockSpec("se", 1e-8, 0.1, free_variance=True, free_lengthscale=True),
        )
    )


def benchmark_search():
    return SearchConfig(
        grid_points=25,
        variance_range=(1e-12, 1e2),
        lengthscale_range=(0.1, 10.0),
        refine_steps=20,
        gamma_range=(1e-16, 1e-6),
        stride=6,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    identification: IdentificationConfig = field(default_factory=IdentificationConfig)
    kernel: KernelSpec = field(default_factory=benchmark_kernel)
    search: SearchConfig = field(default_factory=benchmark_search)
    compare: CompareConfig = field(default_factory=CompareConfig)
    seed: int = 0

    def __post_init__(self):
        ident = self.identification
        if ident.training_feedforward not in TRAINING_FEEDFORWARD:
            raise ConfigError(f"training_feedforward must be one of {TRAINING_FEEDFORWARD}")
        if ident.gamma_policy not in GAMMA_POLICIES:
            raise ConfigError(f"gamma_policy must be one of {GAMMA_POLICIES}")
        if ident.gamma_policy == "fixed" and not (ident.gamma_value is not None and ident.gamma_value > 0):
            raise ConfigError("gamma_policy = fixed needs a positive gamma_value")
        if ident.gamma_policy == "search" and self.search.gamma_range is None:
            raise ConfigError("gamma_policy = search needs gamma_min and gamma_max in [search]")
        if len(self.basis) != len(self.kernel):
            raise ConfigError(f"{len(self.basis)} basis functions but {len(self.kernel)} kernel blocks")
        traj = self.trajectory
        if not traj.sample_period > 0:
            raise ConfigError("sample_period must be positive")
        try:
            traj.bounds
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def basis(self):
        try:
            return BasisSet.parse(self.identification.basis)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc

    # serialization

    def to_ini(self):
        cp = _parser()
        for section, obj in (
            ("plant", self.plant),
            ("controller", self.controller),
            ("trajectory", self.trajectory),
            ("identification", self.identification),
            ("compare", self.compare),
        ):
            cp[section] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
        s = self.search
        cp["search"] = {
            "grid_points": _fmt(s.grid_points),
            "variance_min": _fmt(s.variance_range[0]),
            "variance_max": _fmt(s.variance_range[1]),
            "lengthscale_min": _fmt(s.lengthscale_range[0]),
            "lengthscale_max": _fmt(s.lengthscale_range[1]),
            "refine_steps": _fmt(s.refine_steps),
            "stride": _fmt(s.stride),
            "gamma_min": _fmt(s.gamma_range[0] if s.gamma_range else None),
            "gamma_max": _fmt(s.gamma_range[1] if s.gamma_range else None),
        }
        for i, blk in enumerate(self.kernel.blocks):
            cp[f"kernel.{i + 1}"] = _block_to_dict(blk)
        for (i, j), blk in sorted(self.kernel.cross.items()):
            cp[f"kernel.{i + 1}.{j + 1}"] = _block_to_dict(blk)
        cp["run"] = {"seed": _fmt(self.seed)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text, source="<config>"):
        cp = _parser()
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        known = {"plant", "controller", "trajectory", "identification", "compare", "search", "run"}
        for name in cp.sections():
            if name not in known and not name.startswith("kernel."):
                raise ConfigError(f"{source}: unknown section [{name}]")
        try:
            plant = _load(PlantParams, cp, "plant")
            controller = _load(ControllerConfig, cp, "controller")
            trajectory = _load(TrajectoryConfig, cp, "trajectory")
            ident = _load(IdentificationConfig, cp, "identification")
            compare = _load(CompareConfig, cp, "compare")
            search = _load_search(cp)
            kernel = _load_kernel(cp)
            seed = int(cp.get("run", "seed", fallback="0"))
            return cls(plant, controller, trajectory, ident, kernel, search, compare, seed)
        except ConfigError:
            raise
        except (InvalidInputError, ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    def with_section(self, name, **changes):
        """Copy with fields of one sub-config replaced."""
        return replace(self, **{name: replace(getattr(self, name), **changes)})


def _parser():
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case: the plant has E, A and L
    return cp


def load_config(path=None):
    """Read a config file; None gives the built-in benchmark."""
    if path is None:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_ini(text, source=str(path))


def _fmt(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, typ, default):
    text = text.strip()
    if text.lower() == "none":
        return None
    kind = typ if typ in (bool, int, float, str) else type(default)
    if kind is bool or isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is str:
        return text
    return float(text)


def _load(cls, cp, section):
    if not cp.has_section(section):
        return cls()
    values = {}
    names = {f.name: f for f in fields(cls)}
    for key, text in cp[section].items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        f = names[key]
        typ = f.type if isinstance(f.type, type) else float
        default = f.default
        if isinstance(default, bool):
            typ = bool
        elif isinstance(default, int):
            typ = int
        elif isinstance(default, str):
            typ = str
        values[key] = _parse(text, typ, default)
    return cls(**values)


def _block_to_dict(blk):
    return {
        "kind": blk.kind,
        "variance": _fmt(float(blk.variance)),
        "lengthscale": _fmt(None if blk.lengthscale is None else float(blk.lengthscale)),
        "free_variance": _fmt(blk.free_variance),
        "free_lengthscale": _fmt(blk.free_lengthscale),
    }


def _load_block(section):
    return BlockSpec(
        kind=section.get("kind", "constant").strip(),
        variance=float(section.get("variance", "1.0")),
        lengthscale=_parse(section.get("lengthscale", "none"), float, 0.0),
        free_variance=_parse(section.get("free_variance", "false"), bool, False),
        free_lengthscale=_parse(section.get("free_lengthscale", "false"), bool, False),
    )


def _load_kernel(cp):
    names = [s for s in cp.sections() if s.startswith("kernel.")]
    if not names:
        return benchmark_kernel()
    diag, cross = {}, {}
    for name in names:
        parts = name.split(".")[1:]
        try:
            idx = [int(p) - 1 for p in parts]
        except ValueError:
            raise ConfigError(f"bad kernel section name [{name}]") from None
        if len(idx) == 1:
            diag[idx[0]] = _load_block(cp[name])
        elif len(idx) == 2:
            cross[tuple(idx)] = _load_block(cp[name])
        else:
            raise ConfigError(f"bad kernel section name [{name}]")
    if sorted(diag) != list(range(len(diag))):
        raise ConfigError("kernel blocks must be numbered 1..n without gaps")
    return KernelSpec(tuple(diag[i] for i in range(len(diag))), cross)


def _load_search(cp):
    if not cp.has_section("search"):
        return benchmark_search()
    sec = cp["search"]
    base = benchmark_search()
    allowed = {
        "grid_points", "variance_min", "variance_max", "lengthscale_min",
        "lengthscale_max", "refine_steps", "stride", "gamma_min", "gamma_max",
    }
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [search]")

    def get(key, default):
        return _parse(sec[key], float, 0.0) if key in sec else default

    g_lo = get("gamma_min", base.gamma_range[0])
    g_hi = get("gamma_max", base.gamma_range[1])
    if (g_lo is None) != (g_hi is None):
        raise ConfigError("gamma_min and gamma_max must both be set or both be none")
    return SearchConfig(
        grid_points=int(sec.get("grid_points", base.grid_points)),
        variance_range=(get("variance_min", base.variance_range[0]), get("variance_max", base.variance_range[1])),
        lengthscale_range=(
            get("lengthscale_min", base.lengthscale_range[0]),
            get("lengthscale_max", base.lengthscale_range[1]),
        ),
        refine_steps=int(sec.get("refine_steps", base.refine_steps)),
        gamma_range=None if g_lo is None else (g_lo, g_hi),
        stride=int(sec.get("stride", base.stride)),
    )
