"""Propagation, link budget and CSS reception resolution."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .core import Duration, Timestamp, TxParams, airtime, header_end


class FrameKind(str, Enum):
    UPLINK_DATA = "uplink-data"
    DOWNLINK_DATA = "downlink-data"
    JOIN_REQUEST = "join-request"
    JOIN_ACCEPT = "join-accept"
    PLAIN_LORA = "plain-lora"
    PREAMBLE_ONLY = "preamble-only"


class LossReason(str, Enum):
    BELOW_SENSITIVITY = "below-sensitivity"
    HEADER_COLLISION = "header-collision"
    PAYLOAD_COLLISION = "payload-collision"
    INTER_SF_SWAMPED = "inter-sf-swamped"
    DEMOD_BUSY = "demod-busy"
    OFF_CHANNEL = "off-channel"
    GATEWAY_OFF = "gateway-off"
    HALF_DUPLEX = "gateway-transmitting"


@dataclass
class MacFields:
    """Logical LoRaWAN content carried by a frame (no real crypto)."""

    dev_id: str | None = None
    devaddr: str | None = None
    fcnt: int | None = None
    devnonce: int | None = None
    valid_keys: bool = True
    msg_type: str | None = None  # boot / status / counters / flood
    ack: bool = False
    adr_dr: int | None = None
    adr_bit: bool = True
    target_window: str | None = None  # rx1 / rx2 for downlinks
    uplink_id: int | None = None  # uplink a downlink answers
    attempt: int = 0
    first_emission: Timestamp | None = None


@dataclass
class PhyFrame:
    id: int
    emitter: str
    frequency_hz: int
    params: TxParams
    start: Timestamp
    air: Duration
    kind: FrameKind
    confirmed: bool = False
    app_len: int = 0
    content_id: str = ""
    mac: MacFields = field(default_factory=MacFields)

    def __post_init__(self) -> None:
        if self.air != airtime(self.params):
            raise ValueError("frame airtime does not match its TxParams")
        if (self.kind is FrameKind.PREAMBLE_ONLY) != self.params.preamble_only:
            raise ValueError("preamble-only kind and TxParams.preamble_only disagree")

    @property
    def end(self) -> Timestamp:
        return self.start + self.air

    @property
    def sf(self) -> int:
        return self.params.sf

    @property
    def bandwidth_hz(self) -> int:
        return self.params.bandwidth_hz


@dataclass
class LinkModel:
    pl0_db: float = 40.0
    d0_m: float = 1.0
    exponent: float = 2.7
    shadowing_sigma_db: float = 0.0
    fading_sigma_db: float = 0.0
    noise_floor_dbm: float = -117.0  # at 125 kHz

    def __post_init__(self) -> None:
        if self.exponent <= 0:
            raise ValueError("path-loss exponent must be > 0")
        if self.shadowing_sigma_db < 0 or self.fading_sigma_db < 0:
            raise ValueError("sigma must be >= 0")
        if self.d0_m <= 0:
            raise ValueError("d0_m must be > 0")

    def noise_dbm(self, bandwidth_hz: int) -> float:
        return self.noise_floor_dbm + 10 * math.log10(bandwidth_hz / 125_000)


def received_power(tx_power_dbm: float, link: LinkModel, distance_m: float, shadowing_db: float = 0.0) -> float:
    """Log-distance path loss with a frozen shadowing term."""
    if distance_m <= 0:
        raise ValueError("distance must be > 0")
    return tx_power_dbm - link.pl0_db - 10 * link.exponent * math.log10(distance_m / link.d0_m) - shadowing_db


DEFAULT_SENSITIVITY = {7: -123.0, 8: -126.0, 9: -129.0, 10: -132.0, 11: -134.5, 12: -137.0}
DEFAULT_SNR_FLOOR = {7: -7.5, 8: -10.0, 9: -12.5, 10: -15.0, 11: -17.5, 12: -20.0}


@dataclass
class SensitivityTable:
    rssi_125k: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_SENSITIVITY))
    snr_floor: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_SNR_FLOOR))

    def __post_init__(self) -> None:
        self.rssi_125k = {int(k): float(v) for k, v in self.rssi_125k.items()}
        self.snr_floor = {int(k): float(v) for k, v in self.snr_floor.items()}
        sfs = sorted(self.rssi_125k)
        for a, b in zip(sfs, sfs[1:]):
            if not self.rssi_125k[b] < self.rssi_125k[a]:
                raise ValueError("sensitivity must improve with SF")

    def rssi(self, sf: int, bandwidth_hz: int = 125_000) -> float:
        return self.rssi_125k[sf] + 10 * math.log10(bandwidth_hz / 125_000)

    def snr(self, sf: int) -> float:
        return self.snr_floor[sf]


def default_inter_sf() -> dict[tuple[int, int], float]:
    """Rejection thresholds interpolated linearly over the SF gap, 5 dB (adjacent) to 19.5 dB."""
    table = {}
    for t in range(7, 13):
        for i in range(7, 13):
            if t != i:
                table[(t, i)] = 5.0 + 14.5 * (abs(t - i) - 1) / 4
    return table


@dataclass
class RejectionMatrix:
    capture_db: float = 6.0
    inter_sf: dict[tuple[int, int], float] = field(default_factory=default_inter_sf)
    payload_survival: float = 0.9
    partial_overlap_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.capture_db <= 0:
            raise ValueError("co-SF capture threshold must be > 0")
        if not 0 <= self.payload_survival <= 1:
            raise ValueError("payload_survival must be a probability")

    def threshold(self, target_sf: int, interferer_sf: int) -> float:
        return self.inter_sf[(target_sf, interferer_sf)]

    def to_dict(self) -> dict:
        return {
            "capture_db": self.capture_db,
            "inter_sf": {f"{t}-{i}": v for (t, i), v in sorted(self.inter_sf.items())},
            "payload_survival": self.payload_survival,
            "partial_overlap_scale": self.partial_overlap_scale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RejectionMatrix":
        data = dict(data)
        if "inter_sf" in data:
            table = default_inter_sf()
            for key, v in data["inter_sf"].items():
                t, i = (int(x) for x in str(key).split("-"))
                table[(t, i)] = float(v)
            data["inter_sf"] = table
        return cls(**data)


def spectral_overlap(f1_hz: float, bw1_hz: float, f2_hz: float, bw2_hz: float) -> float:
    """Fraction of the first channel's band covered by the second one."""
    if bw1_hz <= 0 or bw2_hz <= 0:
        raise ValueError("bandwidths must be > 0")
    lo = max(f1_hz - bw1_hz / 2, f2_hz - bw2_hz / 2)
    hi = min(f1_hz + bw1_hz / 2, f2_hz + bw2_hz / 2)
    return max(0.0, hi - lo) / bw1_hz


@dataclass
class Interferer:
    """One stretch of foreign energy overlapping a target reception.

    Several entries may share an ``emitter``; their power is not summed.
    """

    emitter: str
    sf: int
    frequency_hz: int
    bandwidth_hz: int
    rssi_dbm: float
    start: Timestamp
    end: Timestamp


@dataclass
class ReceptionOutcome:
    decoded: bool
    rssi_dbm: float
    snr_db: float
    reason: LossReason | None = None

    @property
    def verdict(self) -> str:
        return "decoded" if self.decoded else "lost"


def _mw(dbm: float) -> float:
    return 10 ** (dbm / 10)


def _dbm(mw: float) -> float:
    return 10 * math.log10(mw) if mw > 0 else -math.inf


def resolve_reception(
    target: PhyFrame,
    rssi_dbm: float,
    interferers: Sequence[Interferer],
    sens: SensitivityTable,
    rej: RejectionMatrix,
    rng: random.Random,
    noise_dbm: float = -117.0,
) -> ReceptionOutcome:
    """Decide whether ``target`` survives the given interference at one receiver.

    Rules apply in order: sensitivity, co-SF SINR floor, header collision,
    payload collision (probabilistic), capture, inter-SF rejection.
    """
    u = rng.random()
    sf = target.sf
    hdr_end = target.start + header_end(target.params)

    # Per-emitter effective power and which frame regions it touches.
    co: dict[str, list] = {}
    inter: dict[int, dict[str, float]] = {}
    for it in interferers:
        if it.end <= target.start or it.start >= target.end:
            continue
        frac = spectral_overlap(target.frequency_hz, target.bandwidth_hz, it.frequency_hz, it.bandwidth_hz)
        frac *= rej.partial_overlap_scale
        if frac <= 0:
            continue
        eff = _mw(it.rssi_dbm) * min(frac, 1.0)
        if it.sf == sf:
            entry = co.setdefault(it.emitter, [0.0, False, False])
            entry[0] = max(entry[0], eff)
            if it.start < hdr_end:
                entry[1] = True
            if it.end > hdr_end:
                entry[2] = True
        else:
            per_sf = inter.setdefault(it.sf, {})
            per_sf[it.emitter] = max(per_sf.get(it.emitter, 0.0), eff)

    noise_mw = _mw(noise_dbm)
    co_mw = sum(e[0] for e in co.values())
    snr = rssi_dbm - _dbm(noise_mw + co_mw)

    if rssi_dbm < sens.rssi(sf, target.bandwidth_hz):
        return ReceptionOutcome(False, rssi_dbm, snr, LossReason.BELOW_SENSITIVITY)

    if snr < sens.snr(sf):
        if co:
            dominant = max(co.values(), key=lambda e: e[0])
            reason = LossReason.HEADER_COLLISION if dominant[1] else LossReason.PAYLOAD_COLLISION
        else:
            reason = LossReason.BELOW_SENSITIVITY
        return ReceptionOutcome(False, rssi_dbm, snr, reason)

    payload_hits = 0
    for power_mw, hits_header, hits_payload in co.values():
        if _dbm(power_mw) <= rssi_dbm - rej.capture_db:
            continue  # captured: interferer weaker by at least the threshold
        if hits_header:
            return ReceptionOutcome(False, rssi_dbm, snr, LossReason.HEADER_COLLISION)
        if hits_payload:
            payload_hits += 1
    if payload_hits and u >= rej.payload_survival**payload_hits:
        return ReceptionOutcome(False, rssi_dbm, snr, LossReason.PAYLOAD_COLLISION)

    for isf, emitters in inter.items():
        if _dbm(sum(emitters.values())) - rssi_dbm >= rej.threshold(sf, isf):
            return ReceptionOutcome(False, rssi_dbm, snr, LossReason.INTER_SF_SWAMPED)

    return ReceptionOutcome(True, rssi_dbm, snr)


def merge_intervals(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]
