"""EU868 channel plan, data rates, LoRa airtime and duty-cycle accounting.

All times are integer microseconds. A ``Timestamp`` counts from scenario
start, a ``Duration`` is a plain length; both are ``int``.
"""

from __future__ import annotations

import functools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

Timestamp = int
Duration = int

US_PER_MS = 1_000
US_PER_S = 1_000_000

# LoRaWAN MAC framing bytes added to the application payload:
# MHDR(1) + FHDR(7) + FPort(1) + MIC(4).
LORAWAN_OVERHEAD = 13
JOIN_REQUEST_LEN = 23
JOIN_ACCEPT_LEN = 17
MAX_PHY_PAYLOAD = 255


def seconds(value: float) -> Duration:
    return int(round(value * US_PER_S))


def millis(value: float) -> Duration:
    return int(round(value * US_PER_MS))


@dataclass(frozen=True)
class DataRate:
    index: int
    sf: int
    bandwidth_hz: int


DATA_RATES: tuple[DataRate, ...] = (
    DataRate(0, 12, 125_000),
    DataRate(1, 11, 125_000),
    DataRate(2, 10, 125_000),
    DataRate(3, 9, 125_000),
    DataRate(4, 8, 125_000),
    DataRate(5, 7, 125_000),
    DataRate(6, 7, 250_000),
)

# Application payload limits (N, repeater-compatible) for EU868.
MAX_PAYLOAD: dict[int, int] = {0: 51, 1: 51, 2: 51, 3: 115, 4: 222, 5: 222, 6: 222}


def data_rate(index: int) -> DataRate:
    if not 0 <= index < len(DATA_RATES):
        raise ValueError(f"unknown data rate DR{index}")
    return DATA_RATES[index]


def dr_to_sf(index: int) -> int:
    return data_rate(index).sf


def sf_to_dr(sf: int, bandwidth_hz: int = 125_000) -> int:
    for dr in DATA_RATES:
        if dr.sf == sf and dr.bandwidth_hz == bandwidth_hz:
            return dr.index
    raise ValueError(f"no EU868 data rate for SF{sf}/{bandwidth_hz} Hz")


def max_payload(dr: DataRate | int) -> int:
    index = dr.index if isinstance(dr, DataRate) else dr
    data_rate(index)
    return MAX_PAYLOAD[index]


@dataclass(frozen=True)
class SubBand:
    id: str
    duty_cycle: float
    low_hz: int
    high_hz: int


@dataclass(frozen=True)
class Channel:
    frequency_hz: int
    dr_min: int
    dr_max: int
    sub_band: str

    def allows(self, dr: int) -> bool:
        return self.dr_min <= dr <= self.dr_max


@dataclass
class ChannelPlan:
    uplink: list[Channel]
    sub_bands: list[SubBand]
    rx2_frequency_hz: int = 869_525_000
    rx2_dr: int = 0
    rx1_dr_offset: int = 0

    def __post_init__(self) -> None:
        ids = {sb.id for sb in self.sub_bands}
        for ch in self.uplink:
            if ch.sub_band not in ids:
                raise ValueError(f"channel {ch.frequency_hz} refers to unknown sub-band {ch.sub_band!r}")
            if not 863_000_000 <= ch.frequency_hz <= 870_000_000:
                raise ValueError(f"channel {ch.frequency_hz} Hz outside 863-870 MHz")
        for sb in self.sub_bands:
            if not 0 < sb.duty_cycle <= 1:
                raise ValueError(f"sub-band {sb.id}: duty_cycle must be in (0, 1]")
        if not 0 <= self.rx1_dr_offset <= 5:
            raise ValueError("rx1_dr_offset must be in 0..5")

    def sub_band(self, sb_id: str) -> SubBand:
        for sb in self.sub_bands:
            if sb.id == sb_id:
                return sb
        raise KeyError(sb_id)

    def sub_band_of(self, frequency_hz: int) -> SubBand:
        for sb in self.sub_bands:
            if sb.low_hz <= frequency_hz <= sb.high_hz:
                return sb
        raise ValueError(f"{frequency_hz} Hz is not inside any configured sub-band")

    @property
    def rx2_sub_band(self) -> SubBand:
        return self.sub_band_of(self.rx2_frequency_hz)

    def channels_for(self, dr: int, enabled: Iterable[int] | None = None) -> list[int]:
        ids = range(len(self.uplink)) if enabled is None else enabled
        return sorted(i for i in ids if self.uplink[i].allows(dr))

    def rx1_dr(self, uplink_dr: int) -> int:
        return max(0, min(5, uplink_dr) - self.rx1_dr_offset)

    def to_dict(self) -> dict:
        return {
            "uplink": [
                {"frequency_hz": c.frequency_hz, "dr_min": c.dr_min, "dr_max": c.dr_max, "sub_band": c.sub_band}
                for c in self.uplink
            ],
            "sub_bands": [
                {"id": s.id, "duty_cycle": s.duty_cycle, "low_hz": s.low_hz, "high_hz": s.high_hz}
                for s in self.sub_bands
            ],
            "rx2_frequency_hz": self.rx2_frequency_hz,
            "rx2_dr": self.rx2_dr,
            "rx1_dr_offset": self.rx1_dr_offset,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelPlan":
        return cls(
            uplink=[Channel(**c) for c in data["uplink"]],
            sub_bands=[SubBand(**s) for s in data["sub_bands"]],
            rx2_frequency_hz=data.get("rx2_frequency_hz", 869_525_000),
            rx2_dr=data.get("rx2_dr", 0),
            rx1_dr_offset=data.get("rx1_dr_offset", 0),
        )


def default_plan() -> ChannelPlan:
    """The default EU868 plan: three mandatory channels, five extra ones and the DR6 channel."""
    g1 = "g1"
    g867 = "g867"
    uplink = [Channel(f, 0, 5, g1) for f in (868_100_000, 868_300_000, 868_500_000)]
    uplink += [Channel(f, 0, 5, g867) for f in (867_100_000, 867_300_000, 867_500_000, 867_700_000, 867_900_000)]
    uplink.append(Channel(868_300_000, 6, 6, g1))
    sub_bands = [
        SubBand(g867, 0.001, 866_000_000, 867_999_999),
        SubBand(g1, 0.01, 868_000_000, 868_600_000),
        SubBand("g3", 0.10, 869_400_000, 869_650_000),
    ]
    return ChannelPlan(uplink=uplink, sub_bands=sub_bands)


DEFAULT_JOIN_CHANNELS = (0, 1, 2)


@dataclass(frozen=True)
class TxParams:
    sf: int
    bandwidth_hz: int = 125_000
    code_rate: int = 5  # denominator of 4/x
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_on: bool = True
    payload_len: int = 0  # PHY payload bytes
    power_dbm: int = 14
    low_dr_optimize: bool | None = None  # None: on for SF11/SF12 at 125 kHz
    preamble_only: bool = False

    def __post_init__(self) -> None:
        if not 7 <= self.sf <= 12:
            raise ValueError(f"SF{self.sf} outside 7..12")
        if self.bandwidth_hz not in (125_000, 250_000):
            raise ValueError(f"unsupported bandwidth {self.bandwidth_hz}")
        if not 5 <= self.code_rate <= 8:
            raise ValueError("code_rate must be the denominator 5..8 of 4/x")
        if self.preamble_symbols < 0:
            raise ValueError("preamble_symbols must be >= 0")
        if self.payload_len < 0:
            raise ValueError("payload_len must be >= 0")
        if self.power_dbm > 20:
            raise ValueError("power_dbm above 20 dBm hardware limit")

    @property
    def ldro(self) -> bool:
        if self.low_dr_optimize is not None:
            return self.low_dr_optimize
        return self.sf >= 11 and self.bandwidth_hz == 125_000


def symbol_time(sf: int, bandwidth_hz: int) -> Duration:
    """Symbol duration in microseconds; exact for 125/250 kHz."""
    num = (1 << sf) * US_PER_S
    if num % bandwidth_hz:
        raise ValueError("symbol time is not an integer number of microseconds")
    return num // bandwidth_hz


def payload_symbols(p: TxParams) -> int:
    if p.preamble_only:
        return 0
    de = 1 if p.ldro else 0
    ih = 0 if p.explicit_header else 1
    crc = 1 if p.crc_on else 0
    num = 8 * p.payload_len - 4 * p.sf + 28 + 16 * crc - 20 * ih
    den = 4 * (p.sf - 2 * de)
    return 8 + max(math.ceil(num / den) * p.code_rate, 0)


def preamble_time(p: TxParams) -> Duration:
    """Preamble plus sync word: ``preamble_symbols + 4.25`` symbols."""
    ts = symbol_time(p.sf, p.bandwidth_hz)
    return (4 * p.preamble_symbols + 17) * ts // 4


def header_end(p: TxParams) -> Duration:
    """Offset from frame start at which the 4/8-coded header block ends."""
    ts = symbol_time(p.sf, p.bandwidth_hz)
    return preamble_time(p) + min(8, payload_symbols(p)) * ts


def _check_payload(p: TxParams) -> None:
    if p.payload_len > MAX_PHY_PAYLOAD:
        raise ValueError(f"payload of {p.payload_len} B exceeds the {MAX_PHY_PAYLOAD} B radio limit")
    try:
        dr = sf_to_dr(p.sf, p.bandwidth_hz)
    except ValueError:
        return
    if p.payload_len > MAX_PAYLOAD[dr] + LORAWAN_OVERHEAD:
        raise ValueError(f"payload of {p.payload_len} B too large for DR{dr}")


@functools.lru_cache(maxsize=4096)
def airtime(p: TxParams) -> Duration:
    """Time on air of one LoRa frame in microseconds."""
    _check_payload(p)
    ts = symbol_time(p.sf, p.bandwidth_hz)
    return preamble_time(p) + payload_symbols(p) * ts


def next_channel(rng: random.Random, plan: ChannelPlan, enabled: Sequence[int], last: int | None) -> int:
    """Pseudo-random channel hop; avoids repeating ``last`` when there is a choice."""
    candidates = sorted(set(enabled))
    if not candidates:
        raise ValueError("no enabled channel")
    for c in candidates:
        if not 0 <= c < len(plan.uplink):
            raise ValueError(f"channel id {c} not in plan")
    if len(candidates) >= 2 and last in candidates:
        candidates.remove(last)
    return candidates[rng.randrange(len(candidates))]


@dataclass
class SubBandState:
    next_allowed: Timestamp = 0
    airtime: Duration = 0
    transmissions: int = 0


def off_time(air: Duration, duty: float) -> Duration:
    d = Fraction(duty).limit_denominator(1_000_000)
    return math.ceil(air * (1 - d) / d)


def duty_cycle_reserve(
    state: SubBandState, t: Timestamp, air: Duration, duty: float, enforce: bool = True
) -> Timestamp:
    """Book one transmission and return its start time.

    With ``enforce`` the start waits for the band to clear; otherwise the
    transmission starts at ``t`` and the off-time debt is pushed back.
    """
    if air <= 0:
        raise ValueError("airtime must be positive")
    if not 0 < duty <= 1:
        raise ValueError("duty must be in (0, 1]")
    start = max(t, state.next_allowed) if enforce else t
    state.next_allowed = max(state.next_allowed, start + air) + off_time(air, duty)
    state.airtime += air
    state.transmissions += 1
    return start


@dataclass
class DutyCycleTracker:
    """Per-radio set of sub-band states."""

    plan: ChannelPlan
    bands: dict[str, SubBandState] = field(default_factory=dict)

    def state(self, sb_id: str) -> SubBandState:
        return self.bands.setdefault(sb_id, SubBandState())

    def earliest(self, frequency_hz: int, t: Timestamp) -> Timestamp:
        return max(t, self.state(self.plan.sub_band_of(frequency_hz).id).next_allowed)

    def reserve(self, frequency_hz: int, t: Timestamp, air: Duration, enforce: bool = True) -> Timestamp:
        sb = self.plan.sub_band_of(frequency_hz)
        return duty_cycle_reserve(self.state(sb.id), t, air, sb.duty_cycle, enforce)

    def airtime_by_band(self) -> dict[str, Duration]:
        return {k: v.airtime for k, v in sorted(self.bands.items())}
