"""Network server: deduplication, replay checks, ADR, joins, downlink routing, overload policy."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .core import JOIN_ACCEPT_LEN, ChannelPlan, Timestamp, dr_to_sf, seconds, sf_to_dr
from .device import JOIN_RX1_DELAY, JOIN_RX2_DELAY, RX1_DELAY, RX2_DELAY
from .gateway import Gateway, ServerMessage
from .radio import FrameKind, MacFields, PhyFrame, SensitivityTable

DOWNLINK_BASE_LEN = 12  # MHDR + FHDR + MIC
LINK_ADR_REQ_LEN = 5

ADR_MODES = ("default", "limited", "fixed", "fixed_plus")


@dataclass
class AdrPolicy:
    mode: str = "default"
    trigger_count: int = 12
    dr_min: int = 0
    dr_max: int = 5
    margin_db: float = 10.0
    history: int = 20

    def __post_init__(self) -> None:
        if self.mode not in ADR_MODES:
            raise ValueError(f"unknown ADR mode {self.mode!r}")
        if self.trigger_count < 1:
            raise ValueError("trigger_count must be >= 1")
        if not 0 <= self.dr_min <= self.dr_max <= 5:
            raise ValueError("need 0 <= dr_min <= dr_max <= 5")

    @classmethod
    def preset(cls, mode: str) -> "AdrPolicy":
        if mode == "default":
            return cls("default", 12, 0, 5)
        if mode == "limited":
            return cls("limited", 6, 3, 5)
        if mode == "fixed":
            return cls("fixed", 6, 5, 5)
        if mode == "fixed_plus":
            return cls("fixed_plus", 1, 5, 5)
        raise ValueError(f"unknown ADR mode {mode!r}")


@dataclass
class OverloadPolicy:
    enabled: bool = False
    threshold_per_s: float = 0.5
    window_s: float = 10.0

    def __post_init__(self) -> None:
        if self.threshold_per_s <= 0:
            raise ValueError("threshold must be > 0")


@dataclass
class DeviceSession:
    dev_id: str
    activation: str = "otaa"
    app_key_valid: bool = True
    devaddr: str | None = None
    devnonces: set[int] = field(default_factory=set)
    fcnt_up: int = -1
    fcnt_down: int = 0
    snr_history: deque = field(default_factory=lambda: deque(maxlen=20))
    dr: int = 0
    uplinks_since_adr: int = 0
    pending_adr: int | None = None
    early_adr_offered: bool = False
    counter_persistence: bool = True
    rx2_preference: bool = False
    joins: int = 0


@dataclass
class ServerEvent:
    t: Timestamp
    kind: str
    dev: str = ""
    gw: str = ""
    sf: int | None = None
    rssi: float | None = None
    snr: float | None = None
    length: int | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class Ingested:
    frame: PhyFrame
    gateways: list[str]
    best: ServerMessage
    messages: list[ServerMessage]


class NetworkServer:
    def __init__(
        self,
        plan: ChannelPlan,
        gateways: dict[str, Gateway],
        sens: SensitivityTable | None = None,
        adr: AdrPolicy | None = None,
        overload: OverloadPolicy | None = None,
        dedup_window_us: int = 200_000,
    ) -> None:
        self.plan = plan
        self.gateways = gateways
        self.sens = sens or SensitivityTable()
        self.adr = adr or AdrPolicy()
        self.overload = overload or OverloadPolicy()
        self.dedup_window_us = dedup_window_us
        self.sessions: dict[str, DeviceSession] = {}
        self.by_addr: dict[str, DeviceSession] = {}
        self.buffer: dict[int, list[ServerMessage]] = {}
        self.processed: set[int] = set()
        self.join_times: dict[str, deque] = {}
        self.events: list[ServerEvent] = []
        self._addr_seq = 0

    # -- registry ---------------------------------------------------------

    def register_otaa(self, dev_id: str, rx2_preference: bool = False, app_key_valid: bool = True) -> DeviceSession:
        s = DeviceSession(dev_id, "otaa", app_key_valid, rx2_preference=rx2_preference)
        s.snr_history = deque(maxlen=self.adr.history)
        self.sessions[dev_id] = s
        return s

    def register_abp(self, dev_id: str, devaddr: str, counter_persistence: bool = True, dr: int = 5, rx2_preference: bool = False) -> DeviceSession:
        s = DeviceSession(dev_id, "abp", True, devaddr, counter_persistence=counter_persistence, dr=dr, rx2_preference=rx2_preference)
        s.snr_history = deque(maxlen=self.adr.history)
        self.sessions[dev_id] = s
        self.by_addr[devaddr] = s
        return s

    def _log(self, ev: ServerEvent) -> ServerEvent:
        self.events.append(ev)
        return ev

    # -- uplink path ------------------------------------------------------

    def receive(self, msg: ServerMessage) -> bool:
        """Buffer one gateway copy; True when it is the first copy of its frame."""
        fid = msg.frame.id
        if fid in self.processed:
            return False
        copies = self.buffer.setdefault(fid, [])
        copies.append(msg)
        return len(copies) == 1

    def ingest_uplink(self, msgs: list[ServerMessage]) -> Ingested:
        if not msgs or len({m.frame.id for m in msgs}) != 1:
            raise ValueError("ingest_uplink needs copies of exactly one frame")
        ordered = sorted(msgs, key=lambda m: (-m.snr_db, m.gateway_id))
        gws = sorted({m.gateway_id for m in msgs})
        return Ingested(msgs[0].frame, gws, ordered[0], ordered)

    def process(self, frame_id: int, t: Timestamp, new_frame_id: Callable[[], int]) -> tuple[list[PhyFrame], list[ServerEvent], list[str]]:
        """Handle the deduplicated frame; returns (downlinks, events, gateways to disable)."""
        msgs = self.buffer.pop(frame_id, [])
        self.processed.add(frame_id)
        start = len(self.events)
        if not msgs:
            return [], [], []
        ing = self.ingest_uplink(msgs)
        frame = ing.frame
        downlinks: list[PhyFrame] = []
        disable: list[str] = []
        if frame.kind is FrameKind.JOIN_REQUEST:
            verdict, session = self.handle_join(ing, t)
            if verdict == "accept":
                dl = self._send_join_accept(ing, session, t, new_frame_id)
                if dl is not None:
                    downlinks.append(dl)
                disable = self.overload_check(ing.gateways, t)
        else:
            downlinks += self._data_uplink(ing, t, new_frame_id)
        return downlinks, self.events[start:], disable

    def _data_uplink(self, ing: Ingested, t: Timestamp, new_frame_id: Callable[[], int]) -> list[PhyFrame]:
        frame = ing.frame
        mac = frame.mac
        best = ing.best
        session = self.by_addr.get(mac.devaddr or "")
        if session is None:
            self._log(ServerEvent(t, "UNKNOWN_DEVICE", mac.dev_id or "", best.gateway_id, frame.sf, best.rssi_dbm, best.snr_db, frame.params.payload_len))
            return []
        fcnt = mac.fcnt if mac.fcnt is not None else -1
        retx = False
        if fcnt <= session.fcnt_up:
            if fcnt == session.fcnt_up and frame.confirmed:
                retx = True
            elif session.counter_persistence:
                self._log(ServerEvent(t, "REPLAY_REJECTED", session.dev_id, best.gateway_id, frame.sf, best.rssi_dbm, best.snr_db, frame.params.payload_len, {"fcnt": fcnt, "last": session.fcnt_up}))
                return []
        session.fcnt_up = fcnt
        kind = "DATA_UP_CNF" if frame.confirmed else "DATA_UP"
        uplink_dr = sf_to_dr(frame.sf, frame.bandwidth_hz)
        self._log(
            ServerEvent(
                t, kind, session.dev_id, best.gateway_id, frame.sf, best.rssi_dbm, best.snr_db, frame.params.payload_len,
                {"fcnt": fcnt, "msg": mac.msg_type or "", "gws": len(ing.gateways), "gw_set": "+".join(ing.gateways),
                 "retx": int(retx), "frame": frame.id, "first_tx": mac.first_emission, "rx_gw_time": best.rx_time},
            )
        )
        adr_cmd = None
        if not retx:
            session.dr = uplink_dr
            if mac.adr_bit:
                session.snr_history.append(best.snr_db)
                session.uplinks_since_adr += 1
                if session.pending_adr is not None and session.pending_adr == uplink_dr:
                    session.pending_adr = None
                if session.uplinks_since_adr >= self.adr.trigger_count:
                    session.uplinks_since_adr = 0
                    target = self.adr_decide(session, self.adr)
                    if target is not None:
                        session.pending_adr = target
                        self._log(ServerEvent(t, "ADR", session.dev_id, extra={"from": uplink_dr, "to": target}))
                elif (self.adr.mode == "fixed" and frame.confirmed and not session.early_adr_offered
                      and session.pending_adr is None and uplink_dr != self.adr.dr_max):
                    # a fixed target needs no link history: offer it once on the first ACK that
                    # goes out anyway, then leave retries to the regular trigger
                    session.early_adr_offered = True
                    session.pending_adr = self.adr.dr_max
                    self._log(ServerEvent(t, "ADR", session.dev_id, extra={"from": uplink_dr, "to": self.adr.dr_max}))
        if mac.adr_bit and session.pending_adr is not None:
            adr_cmd = session.pending_adr
        if not frame.confirmed and adr_cmd is None:
            return []
        dl_mac = MacFields(
            dev_id=session.dev_id,
            devaddr=session.devaddr,
            ack=frame.confirmed,
            adr_dr=adr_cmd,
            uplink_id=frame.id,
        )
        phy_len = DOWNLINK_BASE_LEN + (LINK_ADR_REQ_LEN if adr_cmd is not None else 0)
        dl = self.schedule_downlink(frame, ing, session, dl_mac, phy_len, t, new_frame_id, join=False)
        if dl is not None and adr_cmd is not None:
            session.pending_adr = None
        return [dl] if dl is not None else []

    # -- ADR --------------------------------------------------------------

    def adr_decide(self, session: DeviceSession, policy: AdrPolicy) -> int | None:
        """Target DR for the device, or None when no change is needed."""
        if not session.snr_history:
            return None
        current = session.dr
        if policy.mode in ("fixed", "fixed_plus"):
            target = policy.dr_max
        elif current < policy.dr_min:
            target = policy.dr_min
        else:
            best_snr = max(session.snr_history)
            target = 0
            for dr in range(0, 6):
                if best_snr >= self.sens.snr(dr_to_sf(dr)) + policy.margin_db:
                    target = dr
        target = min(max(target, policy.dr_min), policy.dr_max)
        return None if target == current else target

    # -- joins ------------------------------------------------------------

    def handle_join(self, ing: Ingested, t: Timestamp) -> tuple[str, DeviceSession | None]:
        frame = ing.frame
        mac = frame.mac
        best = ing.best
        base = dict(dev=mac.dev_id or "", gw=best.gateway_id, sf=frame.sf, rssi=best.rssi_dbm, snr=best.snr_db, length=frame.params.payload_len)
        session = self.sessions.get(mac.dev_id or "")
        if session is None or session.activation != "otaa" or not mac.valid_keys or not session.app_key_valid:
            self._log(ServerEvent(t, "JOIN_IGNORED", extra={"cause": "credentials", "devnonce": mac.devnonce}, **base))
            return "ignore", None
        if mac.devnonce in session.devnonces:
            self._log(ServerEvent(t, "JOIN_IGNORED", extra={"cause": "devnonce-replay", "devnonce": mac.devnonce}, **base))
            return "ignore", None
        session.devnonces.add(mac.devnonce)
        self._log(ServerEvent(t, "JOIN_REQUEST", extra={"devnonce": mac.devnonce, "gws": len(ing.gateways), "rx_gw_time": best.rx_time}, **base))
        if session.devaddr is not None:
            self.by_addr.pop(session.devaddr, None)
        self._addr_seq += 1
        session.devaddr = f"{self._addr_seq:08X}"
        self.by_addr[session.devaddr] = session
        session.fcnt_up = -1
        session.fcnt_down = 0
        session.snr_history.clear()
        session.uplinks_since_adr = 0
        session.pending_adr = None
        session.early_adr_offered = False
        session.dr = sf_to_dr(frame.sf, frame.bandwidth_hz)
        session.joins += 1
        return "accept", session

    def _send_join_accept(self, ing: Ingested, session: DeviceSession, t: Timestamp, new_frame_id: Callable[[], int]) -> PhyFrame | None:
        mac = MacFields(dev_id=session.dev_id, devaddr=session.devaddr, uplink_id=ing.frame.id)
        return self.schedule_downlink(ing.frame, ing, session, mac, JOIN_ACCEPT_LEN, t, new_frame_id, join=True)

    # -- downlinks --------------------------------------------------------

    def schedule_downlink(
        self,
        uplink: PhyFrame,
        ing: Ingested,
        session: DeviceSession,
        mac: MacFields,
        phy_len: int,
        t: Timestamp,
        new_frame_id: Callable[[], int],
        join: bool,
    ) -> PhyFrame | None:
        """Best-SNR gateway able to transmit in RX1, falling back to RX2; at most one transmission per window."""
        d1, d2 = (JOIN_RX1_DELAY, JOIN_RX2_DELAY) if join else (RX1_DELAY, RX2_DELAY)
        kind = FrameKind.JOIN_ACCEPT if join else FrameKind.DOWNLINK_DATA
        up_dr = sf_to_dr(uplink.sf, uplink.bandwidth_hz)
        windows = []
        if not session.rx2_preference:
            windows.append(("rx1", uplink.end + d1, uplink.frequency_hz, self.plan.rx1_dr(up_dr)))
        windows.append(("rx2", uplink.end + d2, self.plan.rx2_frequency_hz, self.plan.rx2_dr))
        failures = []
        for name, at, freq, dr in windows:
            for msg in ing.messages:
                gw = self.gateways[msg.gateway_id]
                if not gw.enabled:
                    failures.append(f"{gw.id}:{name}:gateway-disabled")
                    continue
                if not join:
                    mac.fcnt = session.fcnt_down
                mac.target_window = name
                dl, reason = gw.transmit_downlink(new_frame_id(), kind, freq, dr, phy_len, at, mac)
                if dl is not None:
                    if not join:
                        session.fcnt_down += 1
                    self._log(
                        ServerEvent(t, "JOIN_ACCEPT" if join else "DATA_DOWN", session.dev_id, gw.id, dl.sf, length=phy_len,
                                    extra={"window": name, "ack": int(mac.ack), "adr": mac.adr_dr, "frame": dl.id, "uplink": uplink.id})
                    )
                    return dl
                failures.append(f"{gw.id}:{name}:{reason}")
        self._log(ServerEvent(t, "DL_FAIL", session.dev_id, extra={"uplink": uplink.id, "attempts": ";".join(failures)}))
        return None

    # -- overload ---------------------------------------------------------

    def overload_check(self, gateway_ids: list[str], t: Timestamp) -> list[str]:
        """Gateways whose valid-join rate exceeds the policy threshold."""
        if not self.overload.enabled:
            return []
        window = seconds(self.overload.window_s)
        out = []
        for gid in gateway_ids:
            q = self.join_times.setdefault(gid, deque())
            q.append(t)
            while q and q[0] <= t - window:
                q.popleft()
            gw = self.gateways[gid]
            if gw.enabled and len(q) / self.overload.window_s > self.overload.threshold_per_s:
                out.append(gid)
                self._log(ServerEvent(t, "GW_DISABLED", gw=gid, extra={"joins_in_window": len(q)}))
        return out
