"""Scenario description, YAML round-trip and validation with line positions."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, fields
from typing import Any

import yaml

from ..attacker import AttackConfig
from ..core import ChannelPlan, default_plan
from ..device import DefectFlags, DeviceProfile
from ..gateway import GatewayConfig
from ..netserver import AdrPolicy, OverloadPolicy
from ..radio import LinkModel, RejectionMatrix, SensitivityTable

TRAFFIC_KINDS = ("lamp", "test")


class ScenarioError(ValueError):
    """Invalid scenario; ``diagnostics`` holds one line per problem."""

    def __init__(self, diagnostics: list[str]) -> None:
        super().__init__("\n".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass
class DeviceSpec:
    id: str
    position: tuple[float, float]
    profile: str = "lamp"
    defects: DefectFlags = field(default_factory=DefectFlags)
    activation: str = "otaa"
    power_on_s: float = 0.0
    power_off_s: float | None = None
    join_dr: int = 5
    abp_dr: int = 5
    tx_power_dbm: int = 14
    channels: list[int] | None = None
    rx2_preference: bool = False
    max_retries: int = 8
    adr: bool = True
    dr_backoff_every: int = 0
    join_dr_backoff_every: int = 0
    status_phase_s: float | None = None  # first status after power-on; None = one full period
    counters_phase_s: float | None = None
    send_boot: bool = True
    traffic: str = "lamp"
    test_count: int = 30
    test_interval_s: float = 60.0
    test_len: int = 16
    test_confirmed: bool = True
    test_start_s: float = 30.0  # first test message, after power-on


@dataclass
class BackgroundSource:
    """Foreign LoRa traffic (other networks) arriving as a Poisson process."""

    id: str
    position: tuple[float, float]
    rate_per_min: float
    sf: int = 12
    payload_len: int = 29
    channels: list[int] = field(default_factory=lambda: list(range(8)))
    power_dbm: int = 14


@dataclass
class Scenario:
    name: str
    seed: int = 1
    duration_s: float = 3600.0
    description: str = ""
    link: LinkModel = field(default_factory=LinkModel)
    plan: ChannelPlan = field(default_factory=default_plan)
    sensitivity: SensitivityTable = field(default_factory=SensitivityTable)
    rejection: RejectionMatrix = field(default_factory=RejectionMatrix)
    profiles: dict[str, DeviceProfile] = field(default_factory=lambda: {"lamp": DeviceProfile()})
    gateways: list[GatewayConfig] = field(default_factory=list)
    devices: list[DeviceSpec] = field(default_factory=list)
    attacks: list[AttackConfig] = field(default_factory=list)
    background: list[BackgroundSource] = field(default_factory=list)
    adr: AdrPolicy = field(default_factory=AdrPolicy)
    overload: OverloadPolicy = field(default_factory=OverloadPolicy)
    counter_persistence: bool = True
    dedup_window_ms: float = 200.0
    metrics: list[str] = field(default_factory=lambda: ["coverage", "rtt"])

    def check(self) -> list[str]:
        """Cross-field invariants; returns diagnostics (empty when valid)."""
        out = []
        if not self.duration_s > 0:
            out.append("duration_s: must be > 0")
        ids = [g.id for g in self.gateways]
        if len(set(ids)) != len(ids):
            out.append("gateways: duplicate gateway id")
        dev_ids = [d.id for d in self.devices]
        if len(set(dev_ids)) != len(dev_ids):
            out.append("devices: duplicate device id")
        for i, g in enumerate(self.gateways):
            if not all(math.isfinite(v) for v in g.position):
                out.append(f"gateways[{i}].position: must be finite")
            for c in g.channels:
                if not 0 <= c < len(self.plan.uplink):
                    out.append(f"gateways[{i}].channels: unknown channel {c}")
        for i, d in enumerate(self.devices):
            where = f"devices[{i}]"
            if not all(math.isfinite(v) for v in d.position):
                out.append(f"{where}.position: must be finite")
            if d.profile not in self.profiles:
                out.append(f"{where}.profile: unknown profile {d.profile!r}")
            if d.traffic not in TRAFFIC_KINDS:
                out.append(f"{where}.traffic: must be one of {TRAFFIC_KINDS}")
            if d.activation not in ("otaa", "abp"):
                out.append(f"{where}.activation: must be otaa or abp")
            if d.tx_power_dbm > 16:
                out.append(f"{where}.tx_power_dbm: compliant devices transmit at most 16 dBm")
            if d.power_off_s is not None and d.power_off_s <= d.power_on_s:
                out.append(f"{where}.power_off_s: must be after power_on_s")
            if not 0 <= d.join_dr <= 5 or not 0 <= d.abp_dr <= 5:
                out.append(f"{where}: data rates must be in 0..5")
            for c in d.channels or []:
                if not 0 <= c < len(self.plan.uplink):
                    out.append(f"{where}.channels: unknown channel {c}")
        for i, b in enumerate(self.background):
            if b.rate_per_min <= 0:
                out.append(f"background[{i}].rate_per_min: must be > 0")
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "description": self.description,
            "link": _plain(self.link),
            "plan": self.plan.to_dict(),
            "sensitivity": {"rssi_125k": dict(self.sensitivity.rssi_125k), "snr_floor": dict(self.sensitivity.snr_floor)},
            "rejection": self.rejection.to_dict(),
            "profiles": {k: _plain(v) for k, v in self.profiles.items()},
            "gateways": [_plain(g) for g in self.gateways],
            "devices": [_device_dict(d) for d in self.devices],
            "attacks": [_compact(a.to_dict()) for a in self.attacks],
            "background": [_plain(b) for b in self.background],
            "adr": _plain(self.adr),
            "overload": _plain(self.overload),
            "counter_persistence": self.counter_persistence,
            "dedup_window_ms": self.dedup_window_ms,
            "metrics": list(self.metrics),
        }

    def with_seed(self, seed: int) -> "Scenario":
        other = copy.deepcopy(self)
        other.seed = seed
        return other


def _plain(obj: Any) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _compact(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None and v != []}


_DEVICE_DEFAULTS = DeviceSpec("", (0.0, 0.0))


def _device_dict(d: DeviceSpec) -> dict:
    out = {"id": d.id, "position": list(d.position)}
    for f in fields(d):
        if f.name in ("id", "position"):
            continue
        v = getattr(d, f.name)
        if f.name == "defects":
            flags = {k: x for k, x in v.to_dict().items() if x}
            if flags:
                out["defects"] = flags
        elif v != getattr(_DEVICE_DEFAULTS, f.name):
            out[f.name] = v
    return out


# -- loading ---------------------------------------------------------------


class _LineDict(dict):
    """Mapping that remembers the source line of each key."""

    lines: dict[str, int]
    line: int


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader: _Loader, node: yaml.MappingNode) -> _LineDict:
    loader.flatten_mapping(node)
    out = _LineDict()
    out.lines = {}
    out.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _line(d: Any, key: str | None = None) -> str:
    if isinstance(d, _LineDict):
        n = d.lines.get(key, d.line) if key is not None else d.line
        return f"line {n}: "
    return ""


class _Builder:
    def __init__(self) -> None:
        self.diag: list[str] = []

    def err(self, where: str, msg: str, src: Any = None, key: str | None = None) -> None:
        self.diag.append(f"{_line(src, key)}{where}: {msg}")

    def make(self, cls: type, data: Any, where: str, required: tuple[str, ...] = (), convert: dict | None = None) -> Any:
        if not isinstance(data, dict):
            self.err(where, "expected a mapping", data)
            return None
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                self.err(f"{where}.{key}", "unknown field", data, key)
                continue
            if convert and key in convert:
                try:
                    value = convert[key](value)
                except (TypeError, ValueError, KeyError) as exc:
                    self.err(f"{where}.{key}", str(exc), data, key)
                    continue
            kwargs[key] = value
        for key in required:
            if key not in data:
                self.err(f"{where}.{key}", "required field missing", data)
        if any(key not in data for key in required):
            return None
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            self.err(where, str(exc), data)
            return None


def _position(value: Any) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValueError("position must be [x, y] in metres")
    x, y = float(value[0]), float(value[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("position must be finite")
    return (x, y)


def _plan(b: _Builder, data: Any) -> ChannelPlan | None:
    if not isinstance(data, dict):
        b.err("plan", "expected a mapping", data)
        return None
    ok = True
    for i, sb in enumerate(data.get("sub_bands", [])):
        dc = sb.get("duty_cycle") if isinstance(sb, dict) else None
        if not isinstance(dc, (int, float)) or not 0 < dc <= 1:
            b.err(f"plan.sub_bands[{i}].duty_cycle", f"must be in (0, 1], got {dc!r}", sb, "duty_cycle")
            ok = False
    if not ok:
        return None
    try:
        return ChannelPlan.from_dict(data)
    except (TypeError, ValueError, KeyError) as exc:
        b.err("plan", str(exc), data)
        return None


def scenario_from_dict(data: Any) -> Scenario:
    """Build and validate a scenario; raises ScenarioError listing every problem."""
    b = _Builder()
    if not isinstance(data, dict):
        raise ScenarioError(["scenario: top level must be a mapping"])
    known = {f.name for f in fields(Scenario)}
    for key in data:
        if key not in known:
            b.err(key, "unknown field", data, key)
    if "name" not in data:
        b.err("name", "required field missing", data)
    kw: dict[str, Any] = {k: data[k] for k in ("name", "seed", "duration_s", "description", "counter_persistence", "dedup_window_ms", "metrics") if k in data}
    if "duration_s" in data and not (isinstance(data["duration_s"], (int, float)) and data["duration_s"] > 0):
        b.err("duration_s", "must be > 0", data, "duration_s")
    if "link" in data:
        kw["link"] = b.make(LinkModel, data["link"], "link")
    if "plan" in data:
        kw["plan"] = _plan(b, data["plan"])
    if "sensitivity" in data:
        kw["sensitivity"] = b.make(SensitivityTable, data["sensitivity"], "sensitivity")
    if "rejection" in data:
        try:
            kw["rejection"] = RejectionMatrix.from_dict(data["rejection"])
        except (TypeError, ValueError) as exc:
            b.err("rejection", str(exc), data, "rejection")
    if "profiles" in data:
        kw["profiles"] = {k: b.make(DeviceProfile, v, f"profiles.{k}") for k, v in (data["profiles"] or {}).items()}
    kw["gateways"] = [
        b.make(GatewayConfig, g, f"gateways[{i}]", required=("id", "position"), convert={"position": _position})
        for i, g in enumerate(data.get("gateways") or [])
    ]
    kw["devices"] = [
        b.make(DeviceSpec, d, f"devices[{i}]", required=("id", "position"),
               convert={"position": _position, "defects": lambda v: DefectFlags(**v)})
        for i, d in enumerate(data.get("devices") or [])
    ]
    kw["attacks"] = [
        b.make(AttackConfig, a, f"attacks[{i}]", required=("kind", "position"), convert={"position": _position})
        for i, a in enumerate(data.get("attacks") or [])
    ]
    kw["background"] = [
        b.make(BackgroundSource, s, f"background[{i}]", required=("id", "position", "rate_per_min"), convert={"position": _position})
        for i, s in enumerate(data.get("background") or [])
    ]
    if "adr" in data:
        kw["adr"] = b.make(AdrPolicy, data["adr"], "adr")
    if "overload" in data:
        kw["overload"] = b.make(OverloadPolicy, data["overload"], "overload")
    if b.diag or any(v is None for v in kw.values()) or any(
        x is None for k in ("gateways", "devices", "attacks", "background") for x in kw[k]
    ) or any(v is None for v in kw.get("profiles", {}).values()):
        raise ScenarioError(b.diag or ["scenario: invalid"])
    scenario = Scenario(**kw)
    problems = scenario.check()
    if problems:
        raise ScenarioError(problems)
    return scenario


def load_scenario(text: str) -> Scenario:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ScenarioError([f"{where}parse error: {getattr(exc, 'problem', exc)}"]) from exc
    return scenario_from_dict(data)


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False, default_flow_style=None, width=120)
