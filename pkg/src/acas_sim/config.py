"""Scenario files: YAML with a fixed schema.

Every section maps onto a dataclass; unknown keys are rejected and errors
carry the file line.  Omitted keys take the dataclass defaults.

Top-level keys::

    seed, duration, epoch_interval, start_time, auth_failure_budget,
    signal, dynamics, channel, spoof, detection, mitigation, vss, outputs
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .channel import ChannelConfig, ClockParams, IonoModelConfig, MultipathConfig
from .detector import DetectionConfig
from .mitigation import MitigationConfig
from .signal_gen import E6_CARRIER_HZ, E6_CHIP_RATE, DynamicsParams
from .spoofer import SpoofProfile, make_profile

TABLES = ("correlators", "detections", "range", "verdicts")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SignalSpec:
    """E6 signal settings; the RECS chips themselves are drawn per epoch."""

    carrier_offset: float = 0.0
    recs_length: float = 0.016
    chip_rate: float = E6_CHIP_RATE
    amplitude: float = 1.0
    carrier_freq: float = E6_CARRIER_HZ
    guard: float = 20e-6

    def __post_init__(self):
        if not self.recs_length > 0:
            raise ValueError("recs_length must be positive")
        if not (self.chip_rate > 0 and self.carrier_freq > 0):
            raise ValueError("chip_rate and carrier_freq must be positive")
        if not self.guard >= 0:
            raise ValueError("guard must be >= 0")


@dataclass(frozen=True)
class ClockSpec:
    """Initial receiver clock state; the Allan parameters live in ``channel.clock``."""

    initial_bias: float = 0.0
    initial_drift: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.initial_bias) and math.isfinite(self.initial_drift)):
            raise ValueError("initial clock state must be finite")


@dataclass(frozen=True)
class VssSpec:
    """Per-epoch vestigial search settings (levels 2 and 3).

    The E1-seeded search covers ``+/- window`` meters around the handover
    prediction in half-chip steps.  Level 3 adds an exhaustive E6 search over
    ``exhaustive_delta_t`` seconds centred on the prediction.
    """

    window: float = 150.0
    exhaustive_delta_t: float = 20e-6
    doppler_span: float = 0.0
    override_resource_guard: bool = False

    def __post_init__(self):
        if not (self.window > 0 and self.exhaustive_delta_t > 0 and self.doppler_span >= 0):
            raise ValueError("vss window and delta_t must be positive")


@dataclass(frozen=True)
class SpoofSpec:
    profile: str = "none"
    params: dict = field(default_factory=dict)

    def build(self) -> SpoofProfile | None:
        return make_profile(self.profile, **self.params)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 100.0
    epoch_interval: float = 1.0
    start_time: float = 0.0
    auth_failure_budget: float = 0.01
    signal: SignalSpec = field(default_factory=SignalSpec)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    clock: ClockSpec = field(default_factory=ClockSpec)
    spoof: SpoofSpec = field(default_factory=SpoofSpec)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    mitigation: MitigationConfig = field(default_factory=MitigationConfig)
    vss: VssSpec = field(default_factory=VssSpec)
    outputs: tuple[str, ...] = TABLES
    name: str = "scenario"

    def __post_init__(self):
        if not self.epoch_interval > 0:
            raise ValueError("epoch_interval must be positive")
        if not self.duration >= self.epoch_interval:
            raise ValueError("duration must be >= epoch_interval")
        if not 0 <= self.auth_failure_budget <= 1:
            raise ValueError("auth_failure_budget must lie in [0, 1]")
        bad = [o for o in self.outputs if o not in TABLES]
        if bad:
            raise ValueError(f"unknown output tables {bad}; choose from {TABLES}")
        if self.signal.recs_length + 2 * self.signal.guard > self.epoch_interval:
            raise ValueError("RECS batch does not fit in one epoch interval")

    @property
    def n_epochs(self) -> int:
        return int(math.floor(self.duration / self.epoch_interval + 1e-9))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


# --- YAML with line numbers ----------------------------------------------------

def _to_python(node, where: str):
    """Compose-tree to Python, keeping ``(value, line)`` for mapping entries."""
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            if key in out:
                raise ConfigError(f"{where}:{key_node.start_mark.line + 1}: duplicate key {key!r}")
            out[key] = (_to_python(value_node, where), key_node.start_mark.line + 1)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, where) for v in node.value]
    return yaml.SafeLoader.construct_object(_LOADER, node)


class _Loader(yaml.SafeLoader):
    pass


_LOADER = _Loader("")


def _strip(value):
    """Drop the line annotations from a parsed subtree."""
    if isinstance(value, dict):
        return {k: _strip(v[0]) for k, v in value.items()}
    if isinstance(value, list):
        return [_strip(v) for v in value]
    return value


def _build(cls, tree: dict, where: str, section: str, line: int, nested: dict | None = None):
    nested = nested or {}
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{where}:{line}: section {section!r} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, (value, key_line) in tree.items():
        if key not in names:
            raise ConfigError(
                f"{where}:{key_line}: unknown key {key!r} in {section or 'top level'}"
            )
        path = f"{section}.{key}" if section else key
        if key in nested:
            kwargs[key] = nested[key](value, path, key_line)
        else:
            kwargs[key] = _coerce(_strip(value), names[key], where, path, key_line)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        field_line = _blame(str(exc), tree, line)
        raise ConfigError(f"{where}:{field_line}: invalid {section or 'scenario'}: {exc}") from None


def _blame(message: str, tree: dict, default: int) -> int:
    """Line of the first key named in an error message."""
    for key, (_, key_line) in tree.items():
        if key in message:
            return key_line
    return default


def _coerce(value, f: dataclasses.Field, where: str, path: str, line: int):
    hint = str(f.type)
    if value is None:
        return None
    try:
        if hint.startswith("tuple"):
            if isinstance(value, dict):
                raise TypeError("expected a list")
            return tuple(tuple(v) if isinstance(v, list) else v for v in value)
        if hint in ("float", "float | None"):
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if hint == "int":
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError("expected an integer")
            return int(value)
        if hint == "bool" and not isinstance(value, bool):
            raise TypeError("expected true or false")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}:{line}: {path}: {exc}") from None
    return value


def _number(value):
    """YAML 1.1 reads ``1e-3`` as a string; accept it as a float."""
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _parse(text: str, where: str) -> ScenarioConfig:
    try:
        root = yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{where}: parse error: {exc}") from None
    if root is None:
        tree = {}
    elif not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{where}: top level must be a mapping")
    else:
        tree = _to_python(root, where)

    def section(cls, name, nested=None):
        return lambda value, path, line: _build(cls, value, where, path, line, nested)

    def spoof(value, path, line):
        if value is None:
            return SpoofSpec()
        if not isinstance(value, dict):
            raise ConfigError(f"{where}:{line}: {path} must be a mapping")
        plain = {k: _number(v) for k, v in _strip(value).items()}
        name = plain.pop("profile", "none")
        spec = SpoofSpec(name, plain)
        try:
            spec.build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}:{_blame(str(exc), value, line)}: invalid {path}: {exc}") from None
        return spec

    channel = section(ChannelConfig, "channel", {
        "iono": section(IonoModelConfig, "iono"),
        "multipath": section(MultipathConfig, "multipath"),
        "clock": section(ClockParams, "clock"),
    })
    return _build(ScenarioConfig, tree, where, "", 1, {
        "signal": section(SignalSpec, "signal"),
        "dynamics": section(DynamicsParams, "dynamics"),
        "channel": channel,
        "clock": section(ClockSpec, "clock"),
        "spoof": spoof,
        "detection": section(DetectionConfig, "detection"),
        "mitigation": section(MitigationConfig, "mitigation"),
        "vss": section(VssSpec, "vss"),
    })


def bundled_scenarios() -> list[str]:
    root = resources.files("acas_sim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(path) -> ScenarioConfig:
    """Load a scenario file, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_scenarios():
        text = (resources.files("acas_sim") / "scenarios" / f"{path}.yaml").read_text()
        where, name = f"<bundled {path}>", str(path)
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        where, name = str(path), p.stem
    cfg = _parse(text, where)
    return cfg if cfg.name != "scenario" else cfg.replace(name=name)
