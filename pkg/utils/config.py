"""
YAML experiment configs loaded into frozen dataclasses.

Every key is checked before any compute: unknown keys, missing required keys
and wrongly typed values raise :class:`ConfigError` naming the dotted path.
"""

from __future__ import annotations

# Core Imports
import copy
import dataclasses
import os
import re
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar

# Third Party Imports
import yaml

# Local Imports
from core.dastr import DastrConfig
from core.errors import ConfigError
from core.latent import LatentConfig
from core.potentials import POTENTIALS, MuellerParameters, Potential
from .regex import RegEx

EXPERIMENT_IDS = ("brownian20", "rugged-mueller10", "rugged-mueller-latent", "flow-selftest")

T = TypeVar("T")


@dataclass(frozen=True)
class PotentialConfig:
    id: str
    dim: Optional[int] = None
    params_file: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=lambda: {})

    def __post_init__(self) -> None:
        if self.id not in POTENTIALS:
            raise ConfigError("potential.id", f"unknown potential '{self.id}'")


@dataclass(frozen=True)
class NetConfig:
    neurons: int = 100
    layers: int = 4
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.activation not in ("tanh", "tanh2"):
            raise ConfigError("net.activation", "must be 'tanh' or 'tanh2'")
        if self.layers < 2 or self.neurons < 1:
            raise ConfigError("net.layers", "need at least two weight layers")


@dataclass(frozen=True)
class FlowConfig:
    blocks: int = 5
    couplings_per_block: int = 8
    width: int = 120
    s_max: float = 5.0
    bounded: bool = True


@dataclass(frozen=True)
class SdeConfig:
    dt: float = 1e-5
    beta_initial: Optional[float] = None
    walkers: int = 100
    burn_in: int = 1000
    stride: int = 10
    max_steps: int = 10_000_000
    mtd_height: float = 1.0
    mtd_width: float = 0.1
    mtd_interval: int = 1000
    mtd_deposits: int = 100
    mtd_bias_factor: Optional[float] = None

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ConfigError("sde.dt", "must be > 0")
        if self.walkers < 1 or self.stride < 1:
            raise ConfigError("sde.walkers", "walkers and stride must be positive")
        if self.mtd_bias_factor is not None and self.mtd_bias_factor <= 1:
            raise ConfigError("sde.mtd_bias_factor", "must be > 1")


@dataclass(frozen=True)
class EvalConfig:
    curve_points: int = 5000
    isosurface_tol: float = 0.01
    isosurface_points: int = 200
    pool_size: int = 100_000
    n_traj: int = 200
    dt: float = 1e-5
    max_steps: int = 10_000_000
    bins: int = 20


@dataclass(frozen=True)
class BaselinesConfig:
    uniform: bool = True
    sde: bool = False
    artificial_temperature: bool = False
    metadynamics: bool = False
    beta_artificial: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    potential: PotentialConfig
    seed: int = 0
    threads: int = 1
    output_dir: Optional[str] = None
    net: NetConfig = field(default_factory=NetConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    dastr: DastrConfig = field(default_factory=DastrConfig)
    sde: SdeConfig = field(default_factory=SdeConfig)
    latent: LatentConfig = field(default_factory=LatentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENT_IDS:
            raise ConfigError("experiment", f"must be one of {EXPERIMENT_IDS}")
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")


# Schema checking


def _fail(path: str, reason: str) -> ConfigError:
    return ConfigError(path or "<root>", reason)


def _coerce(hint: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)

    if hint is Any:
        return value
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, Mapping):
            raise _fail(path, "expected a mapping")
        return build(typing.cast(Type[Any], hint), value, path)
    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise _fail(path, "expected a list")
        items = typing.cast(Sequence[Any], value)
        return [_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(items)]
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise _fail(path, "expected a list")
        items = typing.cast(Sequence[Any], value)
        if len(items) != len(args):
            raise _fail(path, f"expected {len(args)} items")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, items)))
    if origin in (dict, Dict):
        if not isinstance(value, Mapping):
            raise _fail(path, "expected a mapping")
        return dict(typing.cast(Mapping[str, Any], value))
    if hint is bool:
        if not isinstance(value, bool):
            raise _fail(path, "expected true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _fail(path, "expected an integer")
        return value
    if hint is float:
        # YAML 1.1 reads exponents without a dot ("1e-5") as strings
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise _fail(path, "expected a number") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _fail(path, "expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise _fail(path, "expected a string")
        return value
    raise _fail(path, f"unsupported field type {hint!r}")


def build(cls: Type[T], data: Mapping[str, Any], path: str = "") -> T:
    """Construct dataclass ``cls`` from ``data``, rejecting unknown and missing keys"""
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(typing.cast(Any, cls))}
    prefix = f"{path}." if path else ""

    for key in data:
        if key not in known:
            raise _fail(f"{prefix}{key}", "unknown key")

    kwargs: Dict[str, Any] = {}
    for name, f in known.items():
        where = f"{prefix}{name}"
        if name in data:
            kwargs[name] = _coerce(hints[name], data[name], where)
        elif dataclasses.is_dataclass(hints[name]) and f.default_factory is dataclasses.MISSING:
            # Required section: build it empty so the missing key inside gets named
            kwargs[name] = _coerce(hints[name], {}, where)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise _fail(where, "missing required key")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise _fail(path, str(e)) from e


# Overrides


def parse_override(text: str, regex: Optional[RegEx] = None) -> Tuple[List[str], Any]:
    """``a.b.c=value`` into its key path and a YAML-parsed scalar"""
    match = re.match((regex or RegEx()).override_regex, text)
    if match is None:
        raise ConfigError(text, "override must look like dotted.key=value")
    try:
        value = yaml.safe_load(match.group("value"))
    except yaml.YAMLError as e:
        raise ConfigError(match.group("key"), f"cannot parse value: {e}") from e
    return match.group("key").split("."), value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for i, key in enumerate(keys[:-1]):
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigError(".".join(keys[: i + 1]), "is not a section")
            node = typing.cast(Dict[str, Any], child)
        node[keys[-1]] = value
    return data


# Loading


def _read_yaml(path: str, where: str) -> Dict[str, Any]:
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(where, f"cannot read '{path}': {e.strerror}") from e
    except yaml.YAMLError as e:
        raise ConfigError(where, f"invalid YAML in '{path}': {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(where, f"'{path}' must hold a mapping")
    return typing.cast(Dict[str, Any], data)


def _inline_params(data: Dict[str, Any], base_dir: str) -> None:
    """Merge ``potential.params_file`` into ``potential.params`` so snapshots stand alone"""
    section = data.get("potential")
    if not isinstance(section, dict):
        return
    potential = typing.cast(Dict[str, Any], section)
    params_file = potential.get("params_file")
    if params_file is None:
        return
    if not isinstance(params_file, str):
        raise ConfigError("potential.params_file", "expected a string")
    path = params_file
    if not os.path.isabs(path) and not os.path.exists(path):
        path = os.path.join(base_dir, params_file)
    params = _read_yaml(path, "potential.params_file")
    inline = potential.get("params") or {}
    if not isinstance(inline, dict):
        raise ConfigError("potential.params", "expected a mapping")
    params.update(typing.cast(Dict[str, Any], inline))
    potential["params"] = params
    potential["params_file"] = None


def from_mapping(data: Mapping[str, Any], overrides: Sequence[str] = ()) -> ExperimentConfig:
    raw = apply_overrides(copy.deepcopy(dict(data)), overrides)
    _inline_params(raw, os.getcwd())
    return build(ExperimentConfig, raw)


def load_config(path: str, overrides: Sequence[str] = ()) -> ExperimentConfig:
    raw = apply_overrides(_read_yaml(path, "<config>"), overrides)
    _inline_params(raw, os.path.dirname(os.path.abspath(path)))
    return build(ExperimentConfig, raw)


def to_dict(config: Any) -> Dict[str, Any]:
    """Plain-data snapshot; tuples become lists so it round-trips through YAML and JSON"""

    def plain(value: Any) -> Any:
        if isinstance(value, (list, tuple)):
            return [plain(v) for v in typing.cast(Sequence[Any], value)]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in typing.cast(Dict[str, Any], value).items()}
        return value

    return plain(dataclasses.asdict(config))


def build_potential(config: PotentialConfig) -> Potential:
    kwargs: Dict[str, Any] = dict(config.params)
    if config.id == "rugged-mueller":
        try:
            kwargs = {"params": MuellerParameters.from_mapping(kwargs)}
        except (KeyError, TypeError) as e:
            raise ConfigError("potential.params", str(e)) from e
    if config.dim is not None:
        kwargs["dim"] = config.dim
    try:
        return POTENTIALS[config.id](**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError("potential.params", str(e)) from e
