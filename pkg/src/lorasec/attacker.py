"""Duty-cycle-exempt attack traffic: jammers, floods and credential replay."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

from .core import (
    DEFAULT_JOIN_CHANNELS,
    JOIN_REQUEST_LEN,
    LORAWAN_OVERHEAD,
    ChannelPlan,
    Timestamp,
    TxParams,
    airtime,
    seconds,
)
from .radio import FrameKind, MacFields, PhyFrame, merge_intervals

ATTACK_KINDS = ("indirect-interference", "direct-jam", "channel-exhaust", "preamble-flood", "join-flood")
JOIN_FLOOD_MODES = ("otaa-valid", "otaa-invalid", "abp-valid", "abp-invalid")
# Kinds whose strictly periodic emissions are folded into interval arithmetic.
ANALYTIC_KINDS = ("indirect-interference", "direct-jam", "preamble-flood")
MAX_ATTACK_POWER_DBM = 20.0

KIND_DEFAULTS: dict[str, dict] = {
    "indirect-interference": dict(
        frequencies_hz=[868_000_000, 868_200_000, 868_400_000, 868_600_000],
        sf=12, code_rate=8, payload_len=16, period_ms=2.5, preamble_symbols=8, power_dbm=14.0,
    ),
    "direct-jam": dict(
        frequencies_hz=None, sf=7, code_rate=8, payload_len=0, period_ms=1.0, preamble_symbols=0, power_dbm=20.0,
    ),
    "channel-exhaust": dict(
        frequencies_hz=None, sf=7, code_rate=5, payload_len=16, period_ms=4800.0, preamble_symbols=8, power_dbm=14.0,
    ),
    "preamble-flood": dict(
        frequencies_hz=None, sf=7, code_rate=5, payload_len=0, period_ms=20.0, preamble_symbols=8, power_dbm=14.0,
    ),
    "join-flood": dict(
        frequencies_hz=None, sf=12, code_rate=5, payload_len=16, period_ms=None, preamble_symbols=8, power_dbm=14.0,
    ),
}


@dataclass
class AttackConfig:
    kind: str
    position: tuple[float, float]
    id: str = "atk"
    power_dbm: float | None = None
    start_s: float = 0.0
    end_s: float | None = None
    frequencies_hz: list[int] | None = None
    sf: int | None = None
    code_rate: int | None = None
    payload_len: int | None = None
    period_ms: float | None = None
    preamble_symbols: int | None = None
    mode: str | None = None  # join-flood only
    identities: list[str] = field(default_factory=list)  # session ids used by protocol-level attacks
    gap_ms: float = 2500.0  # join-flood OTAA pause between requests
    clock_skew_us: int = 8  # per-emitter period error bound, so emitters drift against each other

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        self.position = (float(self.position[0]), float(self.position[1]))
        if not all(math.isfinite(v) for v in self.position):
            raise ValueError("attack position must be finite")
        for key, value in KIND_DEFAULTS[self.kind].items():
            if getattr(self, key) is None:
                setattr(self, key, list(value) if isinstance(value, list) else value)
        if self.kind == "join-flood":
            if self.mode not in JOIN_FLOOD_MODES:
                raise ValueError(f"join-flood mode must be one of {JOIN_FLOOD_MODES}")
        elif self.mode is not None:
            raise ValueError("mode applies to join-flood only")
        if self.power_dbm > MAX_ATTACK_POWER_DBM:
            raise ValueError(f"attack power {self.power_dbm} dBm exceeds {MAX_ATTACK_POWER_DBM} dBm")
        if self.end_s is not None and self.end_s <= self.start_s:
            raise ValueError("attack end must be after its start")
        if self.period_ms is not None and self.period_ms <= 0:
            raise ValueError("period must be > 0")

    @property
    def start(self) -> Timestamp:
        return seconds(self.start_s)

    @property
    def end(self) -> Timestamp | None:
        return None if self.end_s is None else seconds(self.end_s)

    def active(self, t: Timestamp) -> bool:
        return t >= self.start and (self.end is None or t < self.end)

    def channels(self, plan: ChannelPlan) -> list[int]:
        if self.frequencies_hz is not None:
            return list(self.frequencies_hz)
        if self.kind == "join-flood":
            return [plan.uplink[c].frequency_hz for c in DEFAULT_JOIN_CHANNELS]
        return [plan.uplink[c].frequency_hz for c in range(8)]

    def tx_params(self) -> TxParams:
        if self.kind == "direct-jam":
            # headerless, no CRC, preamble omitted unless overridden
            return TxParams(
                sf=self.sf, code_rate=self.code_rate, preamble_symbols=self.preamble_symbols,
                explicit_header=False, crc_on=False, payload_len=self.payload_len, power_dbm=int(self.power_dbm),
            )
        if self.kind == "preamble-flood":
            return TxParams(sf=self.sf, preamble_symbols=self.preamble_symbols, preamble_only=True, power_dbm=int(self.power_dbm))
        if self.kind == "join-flood" and self.mode.startswith("otaa"):
            return TxParams(sf=self.sf, code_rate=self.code_rate, preamble_symbols=self.preamble_symbols,
                            payload_len=JOIN_REQUEST_LEN, power_dbm=int(self.power_dbm))
        if self.kind in ("channel-exhaust", "join-flood"):
            return TxParams(sf=self.sf, code_rate=self.code_rate, preamble_symbols=self.preamble_symbols,
                            payload_len=self.payload_len + LORAWAN_OVERHEAD, power_dbm=int(self.power_dbm))
        return TxParams(sf=self.sf, code_rate=self.code_rate, preamble_symbols=self.preamble_symbols,
                        payload_len=self.payload_len, power_dbm=int(self.power_dbm))

    def period(self) -> Timestamp:
        if self.kind == "join-flood":
            air = airtime(self.tx_params())
            if self.mode.startswith("otaa"):
                return air + int(round(self.gap_ms * 1000))
            return air + 1  # back to back
        return int(round(self.period_ms * 1000))

    def frame_kind(self) -> FrameKind:
        if self.kind == "preamble-flood":
            return FrameKind.PREAMBLE_ONLY
        if self.kind in ("indirect-interference", "direct-jam"):
            return FrameKind.PLAIN_LORA
        if self.kind == "join-flood" and self.mode.startswith("otaa"):
            return FrameKind.JOIN_REQUEST
        return FrameKind.UPLINK_DATA

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["position"] = list(self.position)
        return out


@dataclass
class Identity:
    """Session material an attacker transmits with."""

    dev_id: str
    devaddr: str | None
    valid_keys: bool
    registered: bool
    replay_fcnt: int | None = None  # fixed stale counter for replays


def stolen_credentials(fleet: Sequence[str], mode: str, count: int) -> list[Identity]:
    """Identities for a join flood.

    Valid modes reuse sessions of captured, registered devices; invalid OTAA
    makes up identities the server has never seen; invalid ABP replays captured
    frames with their stale counters.
    """
    if mode not in JOIN_FLOOD_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if mode == "otaa-invalid":
        return [Identity(f"rogue-{k}", None, False, False) for k in range(count)]
    if not fleet:
        raise ValueError(f"{mode} needs captured session material")
    picks = [fleet[k % len(fleet)] for k in range(count)]
    if mode == "otaa-valid":
        return [Identity(d, None, True, True) for d in picks]
    if mode == "abp-valid":
        return [Identity(d, f"abp-{d}", True, True) for d in picks]
    return [Identity(d, f"abp-{d}", True, True, replay_fcnt=0) for d in picks]


@dataclass
class PeriodicEmitter:
    """Strictly periodic emitter whose on-air time is computed, not simulated.

    Emission k starts at ``start + phase + k * period`` while before ``end``.
    """

    id: str
    attack_id: str
    position: tuple[float, float]
    frequency_hz: int
    params: TxParams
    period: Timestamp
    phase: Timestamp
    start: Timestamp
    end: Timestamp | None
    kind: FrameKind

    def __post_init__(self) -> None:
        self.air = airtime(self.params)

    @property
    def sf(self) -> int:
        return self.params.sf

    @property
    def bandwidth_hz(self) -> int:
        return self.params.bandwidth_hz

    def _index_range(self, a: Timestamp, b: Timestamp, span: Timestamp) -> range:
        """Indices of emissions whose [s, s + span) overlaps [a, b)."""
        s0 = self.start + self.phase
        lo = max(0, (a - span - s0) // self.period + 1) if a - span >= s0 else 0
        hi = (b - 1 - s0) // self.period if b - 1 >= s0 else -1
        if self.end is not None:
            hi = min(hi, (self.end - 1 - s0) // self.period if self.end - 1 >= s0 else -1)
        return range(lo, hi + 1)

    def on_air(self, a: Timestamp, b: Timestamp) -> list[tuple[Timestamp, Timestamp]]:
        """Merged on-air intervals overlapping [a, b)."""
        ks = self._index_range(a, b, self.air)
        if not ks:
            return []
        s0 = self.start + self.phase
        if self.period <= self.air:
            return [(s0 + ks[0] * self.period, s0 + ks[-1] * self.period + self.air)]
        return merge_intervals((s0 + k * self.period, s0 + k * self.period + self.air) for k in ks)

    def emissions(self, a: Timestamp, b: Timestamp) -> int:
        """Number of emissions starting in [a, b)."""
        return len(self._index_range(a, b, 1))

    def holding(self, t: Timestamp, hold: Timestamp) -> bool:
        """True when an emission started in (t - hold, t]."""
        s0 = self.start + self.phase
        if t < s0:
            return False
        k = (t - s0) // self.period
        if self.end is not None:
            if self.end - 1 < s0:
                return False
            k = min(k, (self.end - 1 - s0) // self.period)
        return t - (s0 + k * self.period) < hold


@dataclass
class DiscreteEmitter:
    """Emitter whose frames go through the full radio and server path."""

    id: str
    config: AttackConfig
    frequency_hz: int
    identity: Identity | None
    phase: Timestamp
    rng: random.Random
    count: int = 0

    def first_time(self) -> Timestamp:
        return self.config.start + self.phase

    def next_emission(self, t: Timestamp, new_frame_id: Callable[[], int]) -> tuple[PhyFrame, Timestamp | None]:
        """Frame starting at ``t`` and when the next one is due (None once inactive)."""
        frame = next_emission(self.config, t, self.rng, new_frame_id(), self.frequency_hz, self.id, self.identity, self.count)
        self.count += 1
        nxt = t + self.config.period()
        if self.config.end is not None and nxt >= self.config.end:
            nxt = None
        return frame, nxt


def next_emission(
    config: AttackConfig,
    t: Timestamp,
    rng: random.Random,
    frame_id: int,
    frequency_hz: int,
    emitter: str,
    identity: Identity | None = None,
    seq: int = 0,
) -> PhyFrame:
    """One attack frame starting at ``t`` (attacks ignore duty cycle)."""
    if not config.active(t):
        raise ValueError(f"attack {config.id} is not active at t={t}")
    params = config.tx_params()
    kind = config.frame_kind()
    mac = MacFields(dev_id=emitter, msg_type="flood", adr_bit=False)
    confirmed = False
    app_len = config.payload_len
    if config.kind == "channel-exhaust":
        mac = MacFields(dev_id=identity.dev_id, devaddr=identity.devaddr, fcnt=seq, msg_type="flood", adr_bit=True)
    elif config.kind == "join-flood":
        if kind is FrameKind.JOIN_REQUEST:
            app_len = 0
            mac = MacFields(dev_id=identity.dev_id, devnonce=seq % (1 << 16), valid_keys=identity.valid_keys, msg_type="flood")
        else:
            fcnt = identity.replay_fcnt if identity.replay_fcnt is not None else seq
            mac = MacFields(dev_id=identity.dev_id, devaddr=identity.devaddr, fcnt=fcnt, msg_type="flood", adr_bit=False)
    mac.first_emission = t
    return PhyFrame(
        id=frame_id,
        emitter=emitter,
        frequency_hz=frequency_hz,
        params=params,
        start=t,
        air=airtime(params),
        kind=kind,
        confirmed=confirmed,
        app_len=app_len,
        content_id=f"{emitter}:{seq}",
        mac=mac,
    )


def _distinct_skews(rng: random.Random, bound: int, n: int) -> list[int]:
    # nonzero and distinct where possible, so no two oscillators stay phase-locked
    pool = [d for d in range(-bound, bound + 1) if d != 0] or [0]
    if len(pool) >= n:
        return rng.sample(pool, n)
    return [rng.choice(pool) for _ in range(n)]


def build_emitters(config: AttackConfig, plan: ChannelPlan, rng: random.Random) -> tuple[list[PeriodicEmitter], list[DiscreteEmitter]]:
    """Expand one attack declaration into its emitters, one per channel."""
    freqs = config.channels(plan)
    period = config.period()
    if config.kind in ANALYTIC_KINDS:
        params = config.tx_params()
        skews = _distinct_skews(rng, config.clock_skew_us, len(freqs))
        return [
            PeriodicEmitter(
                id=f"{config.id}/{k}", attack_id=config.id, position=config.position, frequency_hz=f,
                params=params, period=period + skews[k],
                phase=rng.randrange(period), start=config.start,
                end=config.end, kind=config.frame_kind(),
            )
            for k, f in enumerate(freqs)
        ], []
    if config.kind == "channel-exhaust":
        ids = config.identities or [f"{config.id}-dev{k}" for k in range(len(freqs))]
        idents = [Identity(d, f"abp-{d}", True, True) for d in ids]
    else:
        ids = config.identities or ([] if config.mode == "otaa-invalid" else [f"{config.id}-dev{k}" for k in range(len(freqs))])
        idents = stolen_credentials(ids, config.mode, len(freqs))
    out = []
    for k, f in enumerate(freqs):
        # deterministic stagger so emitters do not start in lockstep
        phase = (k * period) // len(freqs) + rng.randrange(max(1, period // (4 * len(freqs))))
        out.append(DiscreteEmitter(f"{config.id}/{k}", config, f, idents[k % len(idents)], phase, random.Random(rng.random())))
    return [], out


def channel_exhaust_rate_per_min(config: AttackConfig, plan: ChannelPlan) -> float:
    """Aggregate message rate of a channel-exhaust attack."""
    return len(config.channels(plan)) * 60_000.0 / config.period_ms


__all__ = [
    "ATTACK_KINDS",
    "AttackConfig",
    "DiscreteEmitter",
    "Identity",
    "JOIN_FLOOD_MODES",
    "PeriodicEmitter",
    "build_emitters",
    "next_emission",
    "stolen_credentials",
]
