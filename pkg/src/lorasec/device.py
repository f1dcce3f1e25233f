"""Lighting-controller end device: class-A MAC with switchable firmware defects."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Callable

from .core import (
    DEFAULT_JOIN_CHANNELS,
    JOIN_REQUEST_LEN,
    LORAWAN_OVERHEAD,
    ChannelPlan,
    DutyCycleTracker,
    Timestamp,
    TxParams,
    airtime,
    dr_to_sf,
    data_rate,
    max_payload,
    next_channel,
    off_time,
    seconds,
    sf_to_dr,
    symbol_time,
)
from .radio import FrameKind, MacFields, PhyFrame

BOOT, STATUS, COUNTERS, TEST = "boot", "status", "counters", "test"
CONFIRMED_TYPES = {BOOT: True, STATUS: True, COUNTERS: False}
MESSAGE_TYPES = (BOOT, STATUS, COUNTERS, TEST)

RX1_DELAY = seconds(1)
RX2_DELAY = seconds(2)
JOIN_RX1_DELAY = seconds(5)
JOIN_RX2_DELAY = seconds(6)
RX_TIMEOUT_SYMBOLS = 8


@dataclass
class DeviceProfile:
    name: str = "lamp"
    status_period_min: int = 15
    counters_period_min: int = 60
    boot_len: int = 11
    status_len: int = 16
    counters_len: int = 12

    def __post_init__(self) -> None:
        if self.status_period_min <= 0 or self.counters_period_min <= 0:
            raise ValueError("message periods must be positive")
        for n in (self.boot_len, self.status_len, self.counters_len):
            if not 0 <= n <= 51:
                raise ValueError("payload lengths must fit DR0 (51 B)")

    def period(self, msg_type: str) -> Timestamp:
        minutes = self.status_period_min if msg_type == STATUS else self.counters_period_min
        return seconds(60 * minutes)

    def length(self, msg_type: str) -> int:
        return {BOOT: self.boot_len, STATUS: self.status_len, COUNTERS: self.counters_len}[msg_type]


@dataclass
class DefectFlags:
    ignore_ack_and_adr: bool = False
    reset_dr0_after_join: bool = False
    join_backoff_violation: bool = False
    counters_trigger_lost_on_powerdown: bool = False
    # ACKs ignored while ADR still applied (the fleet-wide variant seen in the logs).
    ignore_ack: bool = False

    @property
    def drops_acks(self) -> bool:
        return self.ignore_ack or self.ignore_ack_and_adr

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class WindowSchedule:
    rx1_at: Timestamp
    rx1_frequency_hz: int
    rx1_dr: int
    rx2_at: Timestamp
    rx2_frequency_hz: int
    rx2_dr: int
    close_at: Timestamp
    join: bool = False
    prefer_rx2: bool = False

    def expects(self, frequency_hz: int, sf: int, start: Timestamp) -> str | None:
        if start == self.rx1_at and frequency_hz == self.rx1_frequency_hz and sf == dr_to_sf(self.rx1_dr):
            return "rx1"
        if start == self.rx2_at and frequency_hz == self.rx2_frequency_hz and sf == dr_to_sf(self.rx2_dr):
            return "rx2"
        return None


@dataclass
class Pending:
    msg_type: str
    app_len: int
    confirmed: bool
    fcnt: int
    created: Timestamp
    attempts: int = 0
    first_emission: Timestamp | None = None


@dataclass
class DeviceEvent:
    """Something worth logging that happened inside a device."""

    kind: str
    data: dict = field(default_factory=dict)


class EndDevice:
    def __init__(
        self,
        dev_id: str,
        plan: ChannelPlan,
        rng: random.Random,
        profile: DeviceProfile | None = None,
        defects: DefectFlags | None = None,
        activation: str = "otaa",
        join_dr: int = 5,
        tx_power_dbm: int = 14,
        enabled_channels: list[int] | None = None,
        join_channels: tuple[int, ...] = DEFAULT_JOIN_CHANNELS,
        rx2_preference: bool = False,
        max_retries: int = 8,
        retry_delay_s: tuple[float, float] = (1.0, 3.0),
        dr_backoff_every: int = 0,
        join_dr_backoff_every: int = 0,
        abp_counter_persistence: bool = True,
        adr_enabled: bool = True,
        preamble_symbols: int = 8,
        send_boot: bool = True,
        join_backoff: bool = True,
    ) -> None:
        if activation not in ("otaa", "abp"):
            raise ValueError("activation must be 'otaa' or 'abp'")
        if tx_power_dbm > 16:
            raise ValueError("compliant devices transmit at most 16 dBm")
        self.id = dev_id
        self.plan = plan
        self.rng = rng
        self.profile = profile or DeviceProfile()
        self.defects = defects or DefectFlags()
        self.activation = activation
        self.join_dr = join_dr
        self.tx_power_dbm = tx_power_dbm
        self.enabled = list(range(8)) if enabled_channels is None else list(enabled_channels)
        self.join_channels = tuple(join_channels)
        self.rx2_preference = rx2_preference
        self.max_retries = max_retries
        self.retry_delay = (seconds(retry_delay_s[0]), seconds(retry_delay_s[1]))
        self.dr_backoff_every = dr_backoff_every
        self.join_dr_backoff_every = join_dr_backoff_every
        self.abp_counter_persistence = abp_counter_persistence
        self.adr_enabled = adr_enabled
        self.preamble_symbols = preamble_symbols
        self.send_boot = send_boot
        self.join_backoff = join_backoff
        self.powered_at: Timestamp = 0
        self.join_allowed_at: Timestamp = 0

        self.duty = DutyCycleTracker(plan)
        self.powered = False
        self.join_state = "idle"
        self.devaddr: str | None = f"abp-{dev_id}" if activation == "abp" else None
        self.fcnt_up = 0
        self.fcnt_down = -1
        self.dr = join_dr
        self.last_channel: int | None = None
        self.queue: deque[Pending] = deque()
        self.pending: Pending | None = None
        self.windows: WindowSchedule | None = None
        self.busy = False
        self.join_attempts = 0
        self.join_burst_sent = False
        self.retry_at: Timestamp | None = None
        self.used_devnonces: set[int] = set()
        self.retransmissions = 0
        self.dr_changes: list[tuple[Timestamp, int, int]] = []

    # -- power ------------------------------------------------------------

    def power_on(self, t: Timestamp) -> list[DeviceEvent]:
        """Start the device; OTAA devices begin joining, ABP devices queue the boot message."""
        if self.powered:
            raise RuntimeError(f"{self.id} already powered")
        self.powered = True
        self.powered_at = t
        self.join_allowed_at = t
        self.busy = False
        self.windows = None
        self.retry_at = None
        self.pending = None
        self.queue.clear()
        events = [DeviceEvent("power-on")]
        if self.activation == "otaa":
            self.join_state = "joining"
            self.join_attempts = 0
            self.join_burst_sent = False
            self.devaddr = None
            self.dr = self.join_dr
            self.fcnt_up = 0
            self.fcnt_down = -1
        else:
            self.join_state = "joined"
            if not self.abp_counter_persistence:
                self.fcnt_up = 0
                self.fcnt_down = -1
            if self.send_boot:
                self.enqueue(BOOT, t)
        return events

    def power_off(self, t: Timestamp) -> list[DeviceEvent]:
        events = [DeviceEvent("power-off")]
        if self.pending is not None:
            events.append(DeviceEvent("abandoned", {"msg": self.pending.msg_type, "fcnt": self.pending.fcnt, "cause": "power-off"}))
        for p in self.queue:
            events.append(DeviceEvent("dropped", {"msg": p.msg_type, "cause": "power-off"}))
        self.powered = False
        self.pending = None
        self.queue.clear()
        self.windows = None
        self.retry_at = None
        self.busy = False
        if self.activation == "otaa":
            self.join_state = "idle"
        return events

    # -- traffic generation ----------------------------------------------

    def enqueue(self, msg_type: str, t: Timestamp, app_len: int | None = None, confirmed: bool | None = None) -> bool:
        """Queue a message; returns False when the device is off."""
        if not self.powered:
            return False
        if app_len is None:
            app_len = self.profile.length(msg_type)
        if confirmed is None:
            confirmed = CONFIRMED_TYPES[msg_type]
        self.queue.append(Pending(msg_type, app_len, confirmed, fcnt=-1, created=t))
        return True

    def _tx_params(self, dr: int, phy_len: int) -> TxParams:
        rate = data_rate(dr)
        return TxParams(
            sf=rate.sf,
            bandwidth_hz=rate.bandwidth_hz,
            code_rate=5,
            preamble_symbols=self.preamble_symbols,
            payload_len=phy_len,
            power_dbm=self.tx_power_dbm,
        )

    def _pick_channel(self, candidates: list[int], t: Timestamp, enforce: bool = True) -> tuple[int | None, Timestamp]:
        """Channel clear at ``t`` or, failing that, the earliest time one clears."""
        if not enforce:
            return next_channel(self.rng, self.plan, candidates, self.last_channel), t
        clear = [c for c in candidates if self.duty.earliest(self.plan.uplink[c].frequency_hz, t) <= t]
        if clear:
            return next_channel(self.rng, self.plan, clear, self.last_channel), t
        return None, min(self.duty.earliest(self.plan.uplink[c].frequency_hz, t) for c in candidates)

    def next_action(self, t: Timestamp, new_frame_id: Callable[[], int]) -> PhyFrame | Timestamp | None:
        """Frame to send now, a time to retry at, or None when there is nothing to do."""
        if not self.powered or self.busy:
            return None
        if self.retry_at is not None and t < self.retry_at:
            return self.retry_at
        if self.join_state == "joining":
            return self._join_action(t, new_frame_id)
        if self.join_state != "joined":
            return None
        if self.pending is None:
            if not self.queue:
                return None
            self.pending = self.queue.popleft()
            self.pending.fcnt = self.fcnt_up
            self.fcnt_up += 1
        return self.build_uplink(t, new_frame_id)

    def _join_action(self, t: Timestamp, new_frame_id: Callable[[], int]) -> PhyFrame | Timestamp:
        burst = self.defects.join_backoff_violation and self.join_burst_sent
        candidates = [c for c in self.join_channels if self.plan.uplink[c].allows(self.dr)]
        if not burst and self.join_backoff and t < self.join_allowed_at:
            return self.join_allowed_at
        ch, when = self._pick_channel(candidates, t, enforce=not burst)
        if ch is None:
            return when
        return self._emit_join(t, ch, new_frame_id)

    def join_duty(self, t: Timestamp) -> float:
        """Aggregated join duty cycle: 1% in the first hour, 0.1% up to 11 h, then 0.01%."""
        elapsed = t - self.powered_at
        if elapsed < seconds(3600):
            return 0.01
        if elapsed < seconds(11 * 3600):
            return 0.001
        return 0.0001

    def _emit_join(self, t: Timestamp, ch: int, new_frame_id: Callable[[], int]) -> PhyFrame:
        devnonce = self.rng.randrange(1 << 16)
        while devnonce in self.used_devnonces:
            devnonce = self.rng.randrange(1 << 16)
        self.used_devnonces.add(devnonce)
        params = self._tx_params(self.dr, JOIN_REQUEST_LEN)
        air = airtime(params)
        freq = self.plan.uplink[ch].frequency_hz
        burst = self.defects.join_backoff_violation and self.join_burst_sent
        start = self.duty.reserve(freq, t, air, enforce=not burst)
        if self.join_backoff:
            self.join_allowed_at = max(self.join_allowed_at, start + air + off_time(air, self.join_duty(start)))
        self.last_channel = ch
        self.join_attempts += 1
        self.busy = True
        self.retry_at = None
        return PhyFrame(
            id=new_frame_id(),
            emitter=self.id,
            frequency_hz=freq,
            params=params,
            start=start,
            air=air,
            kind=FrameKind.JOIN_REQUEST,
            app_len=0,
            content_id=f"{self.id}:join:{devnonce}",
            mac=MacFields(dev_id=self.id, devnonce=devnonce, valid_keys=True, msg_type="join", first_emission=start),
        )

    def build_uplink(self, t: Timestamp, new_frame_id: Callable[[], int]) -> PhyFrame | Timestamp:
        """Emit (or re-emit) the pending message on a fresh channel at the current DR."""
        p = self.pending
        assert p is not None
        if p.app_len > max_payload(self.dr):
            raise ValueError(f"{p.msg_type} payload of {p.app_len} B exceeds DR{self.dr} limit")
        candidates = self.plan.channels_for(self.dr, self.enabled)
        if not candidates:
            raise ValueError(f"{self.id}: no enabled channel supports DR{self.dr}")
        ch, when = self._pick_channel(candidates, t)
        if ch is None:
            return when
        params = self._tx_params(self.dr, p.app_len + LORAWAN_OVERHEAD)
        air = airtime(params)
        freq = self.plan.uplink[ch].frequency_hz
        start = self.duty.reserve(freq, t, air)
        self.last_channel = ch
        if p.first_emission is None:
            p.first_emission = start
        elif p.confirmed:
            self.retransmissions += 1
        p.attempts += 1
        self.busy = True
        self.retry_at = None
        return PhyFrame(
            id=new_frame_id(),
            emitter=self.id,
            frequency_hz=freq,
            params=params,
            start=start,
            air=air,
            kind=FrameKind.UPLINK_DATA,
            confirmed=p.confirmed,
            app_len=p.app_len,
            content_id=f"{self.id}:{p.fcnt}",
            mac=MacFields(
                dev_id=self.id,
                devaddr=self.devaddr,
                fcnt=p.fcnt,
                msg_type=p.msg_type,
                adr_bit=self.adr_enabled,
                attempt=p.attempts - 1,
                first_emission=p.first_emission,
            ),
        )

    # -- receive windows -------------------------------------------------

    def rx_window_listen(self, frame: PhyFrame) -> WindowSchedule:
        """Receive windows opened after ``frame`` finished transmitting."""
        join = frame.kind is FrameKind.JOIN_REQUEST
        d1, d2 = (JOIN_RX1_DELAY, JOIN_RX2_DELAY) if join else (RX1_DELAY, RX2_DELAY)
        up_dr = sf_to_dr(frame.sf, frame.bandwidth_hz)
        rx2_ts = symbol_time(dr_to_sf(self.plan.rx2_dr), 125_000)
        w = WindowSchedule(
            rx1_at=frame.end + d1,
            rx1_frequency_hz=frame.frequency_hz,
            rx1_dr=self.plan.rx1_dr(up_dr),
            rx2_at=frame.end + d2,
            rx2_frequency_hz=self.plan.rx2_frequency_hz,
            rx2_dr=self.plan.rx2_dr,
            close_at=frame.end + d2 + RX_TIMEOUT_SYMBOLS * rx2_ts,
            join=join,
            prefer_rx2=self.rx2_preference,
        )
        self.windows = w
        return w

    def on_downlink(self, frame: PhyFrame, t: Timestamp) -> list[DeviceEvent]:
        """Apply a successfully demodulated downlink."""
        events: list[DeviceEvent] = []
        mac = frame.mac
        if frame.kind is FrameKind.JOIN_ACCEPT:
            if self.join_state != "joining" or mac.dev_id != self.id:
                return events
            self.join_state = "joined"
            self.devaddr = mac.devaddr
            self.fcnt_up = 0
            self.fcnt_down = -1
            old = self.dr
            if self.defects.reset_dr0_after_join:
                self.dr = 0
            events.append(DeviceEvent("joined", {"join_dr": old, "data_dr": self.dr}))
            if self.send_boot:
                self.enqueue(BOOT, t)
            self.windows = None
            self.busy = False
            return events
        if mac.devaddr != self.devaddr or mac.fcnt is None or mac.fcnt <= self.fcnt_down:
            return events
        self.fcnt_down = mac.fcnt
        if mac.ack and self.pending is not None and self.pending.confirmed:
            if self.defects.drops_acks:
                events.append(DeviceEvent("ack-ignored", {"fcnt": self.pending.fcnt}))
            else:
                first = self.pending.first_emission
                events.append(
                    DeviceEvent(
                        "ack",
                        {"msg": self.pending.msg_type, "fcnt": self.pending.fcnt, "rtt_us": t - first, "attempts": self.pending.attempts},
                    )
                )
                self.pending = None
        if mac.adr_dr is not None:
            if self.defects.ignore_ack_and_adr:
                events.append(DeviceEvent("adr-ignored", {"dr": mac.adr_dr}))
            elif mac.adr_dr != self.dr:
                self.dr_changes.append((t, self.dr, mac.adr_dr))
                events.append(DeviceEvent("adr-applied", {"from": self.dr, "to": mac.adr_dr}))
                self.dr = mac.adr_dr
        return events

    def retransmission_tick(self, t: Timestamp) -> tuple[Timestamp | None, list[DeviceEvent]]:
        """Called when the receive windows have closed; returns when to act next."""
        events: list[DeviceEvent] = []
        self.windows = None
        self.busy = False
        if not self.powered:
            return None, events
        if self.join_state == "joining":
            self.join_burst_sent = False
            if self.join_dr_backoff_every and self.join_attempts % self.join_dr_backoff_every == 0:
                self.dr = max(0, self.dr - 1)
            self.retry_at = t + self._uniform(*self.retry_delay)
            return self.retry_at, events
        p = self.pending
        if p is None:
            return t, events
        if not p.confirmed or self.defects.drops_acks:
            events.append(DeviceEvent("sent", {"msg": p.msg_type, "fcnt": p.fcnt, "confirmed": p.confirmed}))
            self.pending = None
            return t, events
        if p.attempts > self.max_retries:
            events.append(DeviceEvent("abandoned", {"msg": p.msg_type, "fcnt": p.fcnt, "cause": "retries"}))
            self.pending = None
            return t, events
        if self.dr_backoff_every and p.attempts % self.dr_backoff_every == 0 and self.dr > 0:
            self.dr -= 1
        self.retry_at = t + self._uniform(*self.retry_delay)
        return self.retry_at, events

    def join_burst_time(self, frame: PhyFrame) -> Timestamp | None:
        """With the back-off defect, a second join goes out well before the windows open."""
        if not self.defects.join_backoff_violation or self.join_burst_sent:
            return None
        return max(frame.start + self._uniform(seconds(0.5), seconds(1.0)), frame.end + 1)

    def start_join_burst(self, t: Timestamp, new_frame_id: Callable[[], int]) -> PhyFrame | None:
        if not self.powered or self.join_state != "joining":
            return None
        self.join_burst_sent = True
        self.busy = False
        frame = self._join_action(t, new_frame_id)
        return frame if isinstance(frame, PhyFrame) else None

    def _uniform(self, lo: int, hi: int) -> int:
        return lo + self.rng.randrange(hi - lo + 1)
