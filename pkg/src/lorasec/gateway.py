"""Gateway front end: finite demodulator paths, uplink forwarding, downlink TX."""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import (
    ChannelPlan,
    DutyCycleTracker,
    Timestamp,
    TxParams,
    airtime,
    data_rate,
    symbol_time,
)
from .radio import FrameKind, MacFields, PhyFrame, ReceptionOutcome

UPLINK_KINDS = (FrameKind.UPLINK_DATA, FrameKind.JOIN_REQUEST)
# Frames a gateway demodulator will try to lock onto (non-inverted IQ).
DETECTABLE_KINDS = UPLINK_KINDS + (FrameKind.PLAIN_LORA, FrameKind.PREAMBLE_ONLY)


@dataclass
class GatewayConfig:
    id: str
    position: tuple[float, float]
    channels: list[int] = field(default_factory=lambda: list(range(8)))
    demod_paths: int = 8
    enabled: bool = True
    clock_offset_us: int = 0
    tx_power_dbm: int = 14
    extra_loss_db: float = 0.0
    preamble_hang_symbols: int = 3
    min_preamble_symbols: int = 4
    half_duplex: bool = True

    def __post_init__(self) -> None:
        if self.demod_paths < 1:
            raise ValueError("demod_paths must be >= 1")
        self.position = (float(self.position[0]), float(self.position[1]))


@dataclass
class ServerMessage:
    frame: PhyFrame
    gateway_id: str
    rssi_dbm: float
    snr_db: float
    rx_time: Timestamp  # gateway clock
    true_time: Timestamp


class Gateway:
    def __init__(self, config: GatewayConfig, plan: ChannelPlan) -> None:
        self.config = config
        self.plan = plan
        self.enabled = config.enabled
        self.disabled_at: Timestamp | None = None
        self.paths: dict[int, Timestamp] = {}  # frame id -> busy until
        self.duty = DutyCycleTracker(plan)
        self.tx_intervals: list[tuple[Timestamp, Timestamp]] = []
        self.frequencies = {plan.uplink[c].frequency_hz: c for c in config.channels}

    @property
    def id(self) -> str:
        return self.config.id

    def listens(self, frame: PhyFrame) -> bool:
        ch = self.frequencies.get(frame.frequency_hz)
        if ch is None:
            return False
        return frame.bandwidth_hz == data_rate(self.plan.uplink[ch].dr_max).bandwidth_hz

    def hold_time(self, frame: PhyFrame) -> Timestamp:
        if frame.kind is FrameKind.PREAMBLE_ONLY:
            return frame.air + self.config.preamble_hang_symbols * symbol_time(frame.sf, frame.bandwidth_hz)
        return frame.air

    def _expire(self, t: Timestamp) -> None:
        for fid in [f for f, until in self.paths.items() if until <= t]:
            del self.paths[fid]

    def transmitting(self, start: Timestamp, end: Timestamp) -> bool:
        return any(a < end and start < b for a, b in self.tx_intervals)

    def on_preamble(self, frame: PhyFrame, rssi_dbm: float, sensitivity_dbm: float, t: Timestamp, external_busy: int = 0) -> str | None:
        """Try to give ``frame`` a demodulator path.

        Returns None when the gateway does not even see the frame, ``"path"``
        when a path was allocated, or ``"demod-busy"`` when all paths are taken.
        ``external_busy`` counts paths held by flood preambles tracked elsewhere.
        """
        if not self.enabled or frame.kind not in DETECTABLE_KINDS or not self.listens(frame):
            return None
        if frame.params.preamble_symbols < self.config.min_preamble_symbols or rssi_dbm < sensitivity_dbm:
            return None
        if self.config.half_duplex and self.transmitting(frame.start, frame.end):
            return "demod-busy"
        self._expire(t)
        if len(self.paths) + external_busy >= self.config.demod_paths:
            return "demod-busy"
        self.paths[frame.id] = t + self.hold_time(frame)
        return "path"

    def release(self, frame_id: int) -> None:
        self.paths.pop(frame_id, None)

    def holds(self, frame_id: int) -> bool:
        return frame_id in self.paths

    def forward_uplink(self, outcome: ReceptionOutcome, frame: PhyFrame, t: Timestamp) -> ServerMessage | None:
        if not self.enabled or not outcome.decoded or frame.kind not in UPLINK_KINDS:
            return None
        return ServerMessage(frame, self.id, outcome.rssi_dbm, outcome.snr_db, t + self.config.clock_offset_us, t)

    def transmit_downlink(
        self,
        frame_id: int,
        kind: FrameKind,
        frequency_hz: int,
        dr: int,
        phy_len: int,
        t: Timestamp,
        mac: MacFields,
    ) -> tuple[PhyFrame | None, str | None]:
        """Book a downlink starting exactly at ``t``; returns (frame, None) or (None, reason)."""
        if not self.enabled:
            return None, "gateway-disabled"
        rate = data_rate(dr)
        params = TxParams(
            sf=rate.sf,
            bandwidth_hz=rate.bandwidth_hz,
            code_rate=5,
            preamble_symbols=8,
            crc_on=False,
            payload_len=phy_len,
            power_dbm=self.config.tx_power_dbm,
        )
        air = airtime(params)
        if self.duty.earliest(frequency_hz, t) > t:
            return None, "duty-cycle"
        if self.transmitting(t, t + air):
            return None, "tx-busy"
        self.duty.reserve(frequency_hz, t, air)
        # downlinks are booked at most a few seconds ahead, so older intervals can never overlap a query
        self.tx_intervals = [iv for iv in self.tx_intervals if iv[1] > t - 10_000_000]
        self.tx_intervals.append((t, t + air))
        frame = PhyFrame(
            id=frame_id,
            emitter=self.id,
            frequency_hz=frequency_hz,
            params=params,
            start=t,
            air=air,
            kind=kind,
            content_id=f"{mac.dev_id}:dl:{mac.fcnt}",
            mac=mac,
        )
        return frame, None

    def disable(self, t: Timestamp) -> None:
        self.enabled = False
        self.disabled_at = t
        self.paths.clear()
