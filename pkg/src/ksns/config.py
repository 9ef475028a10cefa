"""Run configuration: a YAML tree with defaults, validation and archiving.

Every error raised while parsing carries the dotted field path and, when the
value came from a file, its 1-based line number.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .fields import RECIPE_KINDS, ExponentSet, make_initial_state
from .functionals import GammaParams
from .noise import WienerPath, make_noise_spec, null_spec
from .spectral import Grid
from .stepper import SCHEMES, StepperConfig

OUTPUT_FORMATS = ("csv", "npz")


@dataclass
class GridConfig:
    N: int = 128
    L: float = 16.0 * math.pi


@dataclass
class ExponentsConfig:
    epsilon: float = 0.01


@dataclass
class GammaConfig:
    delta: float = 0.1


@dataclass
class NoiseConfig:
    enabled: bool = True
    J: int = 16
    sigma0: float = 0.1
    spectrum_exponent: float = 1.0
    gamma: float = 1.0
    lam: float = 0.0
    seed: int = 0


@dataclass
class StepperBlock:
    dt: float = 1e-3
    scheme: str = "exponential_euler"
    m: float = math.inf
    R: float = math.inf
    tol: float = 1e-10
    max_iters: int = 50
    t_final: float = 1.0
    checkpoint_every: int = 0
    picard_window: int = 10
    linf_cap: float = math.inf
    stop_at_cutoff: bool = True
    capped_norm: bool = True
    positivity_tol: float = 1e-10
    clamp_negative: bool = False


@dataclass
class EnsembleConfig:
    K: int = 64
    master_seed: int = 0
    k_moments: list = field(default_factory=lambda: [1, 2])
    workers: int = 1


@dataclass
class OutputConfig:
    directory: str = "output"
    cadence: int = 10
    formats: list = field(default_factory=lambda: ["csv"])


def _default_initial() -> list:
    return [{"kind": "gaussian_density", "mass": 4.0 * math.pi, "width": 1.0}]


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    initial: list = field(default_factory=_default_initial)
    exponents: ExponentsConfig = field(default_factory=ExponentsConfig)
    gamma: GammaConfig = field(default_factory=GammaConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    stepper: StepperBlock = field(default_factory=StepperBlock)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        # canonical recipe dicts, so equality and hashing ignore spelling
        self.initial = [_recipe_to_dict(_build_recipe(item, f"initial[{i}]")) for i, item in enumerate(self.initial)]

    # -- serialization --

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = {("lambda" if k == "lam" else k): v for k, v in d["noise"].items()}
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def hash(self) -> bytes:
        """SHA-256 of the canonical JSON form of the resolved config."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).digest()

    def with_updates(self, **sections) -> "RunConfig":
        """Copy with some blocks' fields replaced, e.g. ``stepper={"dt": 1e-4}``."""
        d = self.to_dict()
        for name, values in sections.items():
            if name == "initial":
                d["initial"] = copy.deepcopy(values)
            else:
                d[name].update(values)
        return from_dict(d)

    # -- builders --

    def make_grid(self) -> Grid:
        return Grid(self.grid.N, self.grid.L)

    def exponent_set(self) -> ExponentSet:
        return ExponentSet(self.exponents.epsilon)

    def stepper_config(self) -> StepperConfig:
        s = self.stepper
        return StepperConfig(
            dt=s.dt,
            scheme=s.scheme,
            picard_tol=s.tol,
            picard_max_iters=s.max_iters,
            picard_window=s.picard_window,
            cutoff_level=s.m,
            stop_at_cutoff=s.stop_at_cutoff,
            blowup_norm_cap=s.linf_cap,
            entropy_cap=s.R,
            positivity_tol=s.positivity_tol,
            clamp_negative=s.clamp_negative,
            capped_velocity_norm=s.capped_norm,
        )

    def noise_active(self) -> bool:
        nz = self.noise
        return nz.enabled and nz.J > 0 and nz.sigma0 != 0

    def noise_spec(self, grid: Grid):
        nz = self.noise
        if not self.noise_active():
            return null_spec(grid)
        return make_noise_spec(grid, nz.J, nz.sigma0, nz.spectrum_exponent, nz.gamma, nz.lam)

    def wiener_path(self, seed: int | None = None) -> WienerPath | None:
        if not self.noise_active():
            return None
        return WienerPath(self.noise.seed if seed is None else seed, self.noise.J)

    def recipes(self) -> list:
        return [_build_recipe(item, f"initial[{i}]") for i, item in enumerate(self.initial)]

    def initial_state(self, grid: Grid | None = None):
        return make_initial_state(self.recipes(), grid or self.make_grid())

    def gamma_params(self, mass: float) -> GammaParams:
        return GammaParams(self.gamma.delta, mass)


_SECTIONS = {
    "grid": GridConfig,
    "exponents": ExponentsConfig,
    "gamma": GammaConfig,
    "noise": NoiseConfig,
    "stepper": StepperBlock,
    "ensemble": EnsembleConfig,
    "output": OutputConfig,
}
_RENAMES = {("noise", "lambda"): "lam"}


# -- line tracking ---------------------------------------------------------------------


def _line_map(node, prefix: str = "", out: dict | None = None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = str(key_node.value)
            path = f"{prefix}.{key}" if prefix else key
            out[path] = key_node.start_mark.line + 1
            _line_map(value_node, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = item.start_mark.line + 1
            _line_map(item, path, out)
    return out


class _Ctx:
    def __init__(self, lines: dict | None = None):
        self.lines = lines or {}

    def error(self, path: str, message: str) -> ConfigError:
        line = self.lines.get(path)
        if line is None:
            # fall back to the closest enclosing node
            parent = path
            while line is None and ("." in parent or "[" in parent):
                cut = max(parent.rfind("."), parent.rfind("["))
                parent = parent[:cut]
                line = self.lines.get(parent)
        return ConfigError(message, field=path, line=line)


# -- coercion ---------------------------------------------------------------------------


def _coerce(ctx: _Ctx, path: str, value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ctx.error(path, f"expected true/false, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ctx.error(path, f"expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool):
            raise ctx.error(path, f"expected a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity", ".inf"):
            return math.inf
        raise ctx.error(path, f"expected a number, got {value!r}")
    if kind is str:
        if isinstance(value, str):
            return value
        raise ctx.error(path, f"expected a string, got {value!r}")
    if kind is list:
        if isinstance(value, list):
            return list(value)
        raise ctx.error(path, f"expected a list, got {value!r}")
    raise TypeError(kind)


_FIELD_TYPES = {
    int: int,
    float: float,
    bool: bool,
    str: str,
    list: list,
    "int": int,
    "float": float,
    "bool": bool,
    "str": str,
    "list": list,
}


def _section(ctx: _Ctx, name: str, cls, raw) -> object:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ctx.error(name, f"expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        attr = _RENAMES.get((name, key), key)
        renamed = {a for (s, _), a in _RENAMES.items() if s == name}
        if attr not in known or key in renamed:
            raise ctx.error(f"{name}.{key}", f"unknown key (allowed: {', '.join(_public_keys(name, cls))})")
        kind = _FIELD_TYPES[known[attr].type]
        kwargs[attr] = _coerce(ctx, f"{name}.{key}", value, kind)
    return cls(**kwargs)


def _public_keys(name: str, cls) -> list[str]:
    inv = {a: k for (s, k), a in _RENAMES.items() if s == name}
    return [inv.get(f.name, f.name) for f in fields(cls)]


def _check(ctx: _Ctx, cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ctx.error(path, message)


_RECIPE_FIELDS = {
    "gaussian_density": {"mass": float, "width": float, "center": list},
    "uniform_density": {"mass": float},
    "taylor_green_velocity": {"amplitude": float, "mode": int},
    "zero_velocity": {},
}


def _build_recipe(item: dict, path: str, ctx: _Ctx | None = None):
    ctx = ctx or _Ctx()
    if not isinstance(item, dict) or "kind" not in item:
        raise ctx.error(path, "each initial-data entry needs a 'kind'")
    kind = item["kind"]
    if kind not in RECIPE_KINDS:
        raise ctx.error(f"{path}.kind", f"unknown recipe kind {kind!r} (allowed: {', '.join(RECIPE_KINDS)})")
    spec = _RECIPE_FIELDS[kind]
    kwargs = {}
    for key, value in item.items():
        if key == "kind":
            continue
        if key not in spec:
            raise ctx.error(f"{path}.{key}", f"unknown key for {kind} (allowed: {', '.join(spec)})")
        if key == "center" and value is None:
            kwargs[key] = None
            continue
        v = _coerce(ctx, f"{path}.{key}", value, spec[key])
        if key == "center":
            if len(v) != 2:
                raise ctx.error(f"{path}.center", "center must have two coordinates")
            v = tuple(_coerce(ctx, f"{path}.center", c, float) for c in v)
        kwargs[key] = v
    try:
        return RECIPE_KINDS[kind](**kwargs)
    except ConfigError as exc:
        raise ctx.error(path, str(exc)) from None
    except TypeError as exc:
        raise ctx.error(path, f"missing field for {kind}: {exc}") from None


def _recipe_to_dict(recipe) -> dict:
    for kind, cls in RECIPE_KINDS.items():
        if isinstance(recipe, cls):
            d = {"kind": kind}
            d.update(asdict(recipe))
            if d.get("center") is not None:
                d["center"] = list(d["center"])
            return d
    raise ConfigError(f"cannot serialize recipe {recipe!r}")


def _validate(ctx: _Ctx, cfg: RunConfig) -> None:
    g = cfg.grid
    _check(ctx, g.N >= 16 and g.N % 2 == 0, "grid.N", f"N must be an even integer >= 16, got {g.N}")
    _check(ctx, g.L > 0 and math.isfinite(g.L), "grid.L", f"L must be positive and finite, got {g.L}")
    try:
        ExponentSet(cfg.exponents.epsilon)
    except ConfigError as exc:
        raise ctx.error("exponents.epsilon", str(exc).split(": ", 1)[-1]) from None
    _check(ctx, cfg.gamma.delta > 0, "gamma.delta", "delta must be positive")
    nz = cfg.noise
    _check(ctx, nz.J >= 0, "noise.J", "J must be >= 0")
    _check(ctx, nz.sigma0 >= 0, "noise.sigma0", "sigma0 must be >= 0")
    _check(ctx, nz.seed >= 0, "noise.seed", "seed must be a nonnegative integer")
    s = cfg.stepper
    _check(ctx, s.dt > 0, "stepper.dt", "dt must be positive")
    _check(ctx, s.scheme in SCHEMES, "stepper.scheme", f"scheme must be one of {', '.join(SCHEMES)}")
    _check(ctx, s.m > 0, "stepper.m", "cutoff level m must be positive (use .inf to disable)")
    _check(ctx, s.R > 0, "stepper.R", "entropy cap R must be positive (use .inf to disable)")
    _check(ctx, s.tol > 0, "stepper.tol", "tol must be positive")
    _check(ctx, s.max_iters >= 1, "stepper.max_iters", "max_iters must be >= 1")
    _check(ctx, s.picard_window >= 1, "stepper.picard_window", "picard_window must be >= 1")
    _check(ctx, s.t_final >= 0, "stepper.t_final", "t_final must be >= 0")
    n_steps = round(s.t_final / s.dt)
    _check(
        ctx,
        abs(n_steps * s.dt - s.t_final) <= 1e-9 * max(1.0, s.t_final),
        "stepper.t_final",
        f"t_final={s.t_final} is not a multiple of dt={s.dt}",
    )
    _check(ctx, s.checkpoint_every >= 0, "stepper.checkpoint_every", "checkpoint_every must be >= 0")
    _check(ctx, s.linf_cap > 0, "stepper.linf_cap", "linf_cap must be positive")
    _check(ctx, s.positivity_tol >= 0, "stepper.positivity_tol", "positivity_tol must be >= 0")
    e = cfg.ensemble
    _check(ctx, e.K >= 2, "ensemble.K", "K must be >= 2")
    _check(ctx, e.master_seed >= 0, "ensemble.master_seed", "master_seed must be a nonnegative integer")
    _check(ctx, e.workers >= 1, "ensemble.workers", "workers must be >= 1")
    _check(ctx, len(e.k_moments) > 0, "ensemble.k_moments", "k_moments must be a nonempty list")
    for i, k in enumerate(e.k_moments):
        _check(
            ctx,
            isinstance(k, int) and not isinstance(k, bool) and k >= 1,
            f"ensemble.k_moments[{i}]",
            f"moment orders must be integers >= 1, got {k!r}",
        )
    o = cfg.output
    _check(ctx, o.cadence >= 1, "output.cadence", "cadence must be >= 1")
    for i, fmt in enumerate(o.formats):
        _check(ctx, fmt in OUTPUT_FORMATS, f"output.formats[{i}]", f"unknown format {fmt!r} (allowed: {', '.join(OUTPUT_FORMATS)})")
    _check(ctx, isinstance(cfg.initial, list) and len(cfg.initial) > 0, "initial", "initial must be a nonempty list of recipes")


def from_dict(raw: dict, lines: dict | None = None) -> RunConfig:
    ctx = _Ctx(lines)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ctx.error("<root>", "the configuration must be a mapping")
    allowed = set(_SECTIONS) | {"initial"}
    for key in raw:
        if key not in allowed:
            raise ctx.error(str(key), f"unknown section (allowed: {', '.join(sorted(allowed))})")
    kwargs = {name: _section(ctx, name, cls, raw.get(name)) for name, cls in _SECTIONS.items()}
    initial = raw.get("initial", _default_initial())
    if not isinstance(initial, list):
        raise ctx.error("initial", "initial must be a list of recipes")
    for i, item in enumerate(initial):
        _build_recipe(item, f"initial[{i}]", ctx)
    cfg = RunConfig(initial=list(initial), **kwargs)
    _validate(ctx, cfg)
    return cfg


def parse_config(text: str) -> RunConfig:
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", line=line) from None
    lines = _line_map(node) if node is not None else {}
    return from_dict(raw if raw is not None else {}, lines)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text)


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.dump(), encoding="utf-8")


__all__ = [
    "RunConfig",
    "GridConfig",
    "ExponentsConfig",
    "GammaConfig",
    "NoiseConfig",
    "StepperBlock",
    "EnsembleConfig",
    "OutputConfig",
    "parse_config",
    "load_config",
    "from_dict",
    "write_config",
]
