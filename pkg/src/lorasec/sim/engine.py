"""Discrete-event engine: one heap of timed events, one deterministic event log."""

from __future__ import annotations

import heapq
import math
import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Iterator

from ..attacker import DiscreteEmitter, PeriodicEmitter, build_emitters
from ..core import Timestamp, TxParams, airtime, seconds, symbol_time
from ..device import COUNTERS, STATUS, TEST, DeviceEvent, EndDevice
from ..gateway import DETECTABLE_KINDS, UPLINK_KINDS, Gateway
from ..netserver import NetworkServer, ServerEvent
from ..radio import FrameKind, Interferer, LossReason, MacFields, PhyFrame, ReceptionOutcome, resolve_reception
from .scenario import BackgroundSource, DeviceSpec, Scenario

# event kinds
POWER_ON, POWER_OFF, TIMER, KICK, TX_START, TX_END, WINDOW_CLOSE, JOIN_BURST, SERVER, ATTACK, BACKGROUND, ATTACK_EDGE = range(12)

DOWNLINK_KINDS = (FrameKind.DOWNLINK_DATA, FrameKind.JOIN_ACCEPT)
ABP_REPLAY_SESSION_FCNT = 1000
FOREIGN = "foreign"  # background traffic from other networks


def _fmt(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.2f}"
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


@dataclass
class Record:
    t: Timestamp
    seq: int
    tag: str
    fields: dict[str, str]

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.fields.get(key, default)

    def num(self, key: str) -> float | None:
        v = self.fields.get(key)
        return None if v in (None, "-") else float(v)


class EventLog:
    """Line-oriented log: ``<t_us> <seq> <tag> key=value ...``."""

    def __init__(self) -> None:
        self.lines: list[str] = []
        self._last_t = 0

    def add(self, t: Timestamp, tag: str, **fields: Any) -> None:
        if t < self._last_t:
            raise RuntimeError(f"log out of order: {t} after {self._last_t}")
        self._last_t = t
        body = " ".join(f"{k}={_fmt(v)}" for k, v in fields.items())
        self.lines.append(f"{t} {len(self.lines)} {tag} {body}".rstrip())

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def records(self) -> Iterator[Record]:
        return parse_log(self.lines)

    def __len__(self) -> int:
        return len(self.lines)


def parse_log(lines: Any) -> Iterator[Record]:
    if isinstance(lines, str):
        lines = lines.splitlines()
    for line in lines:
        if not line.strip():
            continue
        parts = line.split(" ")
        fields = dict(p.split("=", 1) for p in parts[3:])
        yield Record(int(parts[0]), int(parts[1]), parts[2], fields)


class _Background:
    def __init__(self, src: BackgroundSource, rng: random.Random) -> None:
        self.src = src
        self.rng = rng
        self.params = TxParams(sf=src.sf, payload_len=src.payload_len, power_dbm=src.power_dbm)
        self.count = 0

    def gap(self) -> Timestamp:
        return max(1, int(self.rng.expovariate(self.src.rate_per_min / 60.0) * 1_000_000))


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.sc = scenario
        self.seed = scenario.seed
        self.end_time = seconds(scenario.duration_s)
        self.plan = scenario.plan
        self.sens = scenario.sensitivity
        self.rej = scenario.rejection
        self.link = scenario.link
        self.log = EventLog()
        self.queue: list[tuple[int, int, int, Any]] = []
        self._seq = 0
        self._frame_seq = 0
        self.now: Timestamp = 0

        self.positions: dict[str, tuple[float, float]] = {}
        self.tx_power: dict[str, float] = {}
        self.gateways = {g.id: Gateway(g, self.plan) for g in scenario.gateways}
        for g in scenario.gateways:
            self.positions[g.id] = g.position
        self.server = NetworkServer(self.plan, self.gateways, self.sens, scenario.adr, scenario.overload,
                                    int(scenario.dedup_window_ms * 1000))
        self.specs: dict[str, DeviceSpec] = {}
        self.devices: dict[str, EndDevice] = {}
        for spec in scenario.devices:
            self._add_device(spec)

        self.analytic: list[PeriodicEmitter] = []
        self.discrete: list[DiscreteEmitter] = []
        for atk in scenario.attacks:
            periodic, discrete = build_emitters(atk, self.plan, self._rng(f"attack:{atk.id}"))
            self.analytic += periodic
            self.discrete += discrete
            for em in periodic + discrete:
                self.positions[em.id] = atk.position
            self._register_attack_sessions(atk, discrete)
        self.background = [_Background(b, self._rng(f"bg:{b.id}")) for b in scenario.background]
        for b in scenario.background:
            self.positions[b.id] = b.position

        self.recent: dict[int, list[PhyFrame]] = defaultdict(list)  # frames on air recently, by frequency
        self.longest_air = 0
        self.widest_bw = 0
        self.rx_pending: dict[int, list[tuple[str, float, str | None]]] = {}
        self.win_token: dict[str, int] = defaultdict(int)
        self.dl_lock: dict[str, Timestamp] = {}
        self.power_token: dict[str, int] = defaultdict(int)
        self.kick_at: dict[str, Timestamp] = {}
        self._shadow: dict[tuple[str, str], float] = {}
        self._rx_rng: dict[str, random.Random] = {}
        self._fade_rng: dict[str, random.Random] = {}

    # -- setup ------------------------------------------------------------

    def _rng(self, name: str) -> random.Random:
        return random.Random(f"{self.seed}:{name}")

    def _add_device(self, spec: DeviceSpec) -> None:
        profile = self.sc.profiles[spec.profile]
        dev = EndDevice(
            spec.id,
            self.plan,
            self._rng(f"dev:{spec.id}"),
            profile=profile,
            defects=spec.defects,
            activation=spec.activation,
            join_dr=spec.join_dr if spec.activation == "otaa" else spec.abp_dr,
            tx_power_dbm=spec.tx_power_dbm,
            enabled_channels=spec.channels,
            rx2_preference=spec.rx2_preference,
            max_retries=spec.max_retries,
            dr_backoff_every=spec.dr_backoff_every,
            join_dr_backoff_every=spec.join_dr_backoff_every,
            abp_counter_persistence=self.sc.counter_persistence,
            adr_enabled=spec.adr,
            send_boot=spec.send_boot and spec.traffic == "lamp",
        )
        self.specs[spec.id] = spec
        self.devices[spec.id] = dev
        self.positions[spec.id] = spec.position
        self.tx_power[spec.id] = spec.tx_power_dbm
        if spec.activation == "otaa":
            self.server.register_otaa(spec.id, rx2_preference=spec.rx2_preference)
        else:
            self.server.register_abp(spec.id, f"abp-{spec.id}", self.sc.counter_persistence, spec.abp_dr, spec.rx2_preference)

    def _register_attack_sessions(self, atk: Any, emitters: list[DiscreteEmitter]) -> None:
        for em in emitters:
            ident = em.identity
            if ident is None or not ident.registered or ident.dev_id in self.server.sessions:
                continue
            if atk.kind == "join-flood" and atk.mode == "otaa-valid":
                self.server.register_otaa(ident.dev_id)
            else:
                session = self.server.register_abp(ident.dev_id, ident.devaddr, self.sc.counter_persistence, dr=0)
                if ident.replay_fcnt is not None:
                    session.fcnt_up = ABP_REPLAY_SESSION_FCNT

    def _new_frame_id(self) -> int:
        self._frame_seq += 1
        return self._frame_seq

    def push(self, t: Timestamp, kind: int, arg: Any = None) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (t, self._seq, kind, arg))

    # -- radio helpers ----------------------------------------------------

    def _shadowing(self, a: str, b: str) -> float:
        key = (a, b) if a <= b else (b, a)
        if key not in self._shadow:
            sigma = self.link.shadowing_sigma_db
            self._shadow[key] = self._rng(f"shadow:{key[0]}|{key[1]}").gauss(0.0, sigma) if sigma > 0 else 0.0
        return self._shadow[key]

    def power_at(self, emitter: str, tx_dbm: float, receiver: str) -> float:
        pa = self.positions[emitter]
        pb = self.positions[receiver]
        d = max(1.0, math.hypot(pa[0] - pb[0], pa[1] - pb[1]))
        loss = self.link.pl0_db + 10 * self.link.exponent * math.log10(d / self.link.d0_m)
        loss += self._shadowing(emitter, receiver)
        for end in (emitter, receiver):
            gw = self.gateways.get(end)
            if gw is not None:
                loss += gw.config.extra_loss_db
        return tx_dbm - loss

    def _fading(self, receiver: str) -> float:
        sigma = self.link.fading_sigma_db
        if sigma <= 0:
            return 0.0
        rng = self._fade_rng.get(receiver)
        if rng is None:
            rng = self._fade_rng[receiver] = self._rng(f"fade:{receiver}")
        return rng.gauss(0.0, sigma)

    def _resolve_rng(self, receiver: str) -> random.Random:
        rng = self._rx_rng.get(receiver)
        if rng is None:
            rng = self._rx_rng[receiver] = self._rng(f"rx:{receiver}")
        return rng

    def interferers(self, frame: PhyFrame, receiver: str) -> list[Interferer]:
        out = []
        reach = frame.bandwidth_hz
        for freq, frames in self.recent.items():
            if abs(freq - frame.frequency_hz) >= (reach + self.widest_bw) / 2:
                continue
            for g in frames:
                if g.id == frame.id or g.emitter == receiver or g.end <= frame.start or g.start >= frame.end:
                    continue
                if abs(g.frequency_hz - frame.frequency_hz) >= (reach + g.bandwidth_hz) / 2:
                    continue
                rssi = self.power_at(g.emitter, g.params.power_dbm, receiver)
                out.append(Interferer(g.emitter, g.sf, g.frequency_hz, g.bandwidth_hz, rssi, g.start, g.end))
        for em in self.analytic:
            if abs(em.frequency_hz - frame.frequency_hz) >= (reach + em.bandwidth_hz) / 2:
                continue
            spans = em.on_air(frame.start, frame.end)
            if not spans:
                continue
            rssi = self.power_at(em.id, em.params.power_dbm, receiver)
            out += [Interferer(em.id, em.sf, em.frequency_hz, em.bandwidth_hz, rssi, a, b) for a, b in spans]
        return out

    def flood_paths(self, gw: Gateway, t: Timestamp) -> int:
        """Demodulator paths held at ``t`` by periodic emitters the gateway locks onto."""
        busy = 0
        for em in self.analytic:
            if em.frequency_hz not in gw.frequencies or em.params.preamble_symbols < gw.config.min_preamble_symbols:
                continue
            if em.kind not in DETECTABLE_KINDS:
                continue
            if self.power_at(em.id, em.params.power_dbm, gw.id) < self.sens.rssi(em.sf, em.bandwidth_hz):
                continue
            hold = em.air
            if em.kind is FrameKind.PREAMBLE_ONLY:
                hold += gw.config.preamble_hang_symbols * symbol_time(em.sf, em.bandwidth_hz)
            busy += em.emissions(t - hold + 1, t + 1)
        return busy

    # -- run --------------------------------------------------------------

    def run(self) -> EventLog:
        sc = self.sc
        self.log.add(0, "scenario", ev="start", name=sc.name, seed=sc.seed, duration_us=self.end_time,
                     devices=len(sc.devices), gateways=len(sc.gateways), attacks=len(sc.attacks))
        for spec in sc.devices:
            self.push(seconds(spec.power_on_s), POWER_ON, spec.id)
            if spec.power_off_s is not None:
                self.push(seconds(spec.power_off_s), POWER_OFF, spec.id)
        for atk in sc.attacks:
            self.push(atk.start, ATTACK_EDGE, (atk, "start"))
            if atk.end is not None:
                self.push(atk.end, ATTACK_EDGE, (atk, "stop"))
        for k, em in enumerate(self.discrete):
            self.push(em.first_time(), ATTACK, k)
        for k, bg in enumerate(self.background):
            self.push(bg.gap(), BACKGROUND, k)

        handlers = {
            POWER_ON: self._on_power_on,
            POWER_OFF: self._on_power_off,
            TIMER: self._on_timer,
            KICK: self._on_kick,
            TX_START: self._on_tx_start,
            TX_END: self._on_tx_end,
            WINDOW_CLOSE: self._on_window_close,
            JOIN_BURST: self._on_join_burst,
            SERVER: self._on_server,
            ATTACK: self._on_attack,
            BACKGROUND: self._on_background,
            ATTACK_EDGE: self._on_attack_edge,
        }
        while self.queue:
            t, _, kind, arg = heapq.heappop(self.queue)
            if t > self.end_time:
                break
            self.now = t
            handlers[kind](t, arg)
        self._finish()
        return self.log

    def _finish(self) -> None:
        t = max(self.now, self.end_time)
        self.now = t
        for em in self.analytic:
            n = em.emissions(0, self.end_time)
            band = self._band(em.frequency_hz)
            self.log.add(t, "airtime", src=em.id, band=band, air_us=n * em.air, frames=n)
        for gid, gw in self.gateways.items():
            if not gw.enabled:
                self.log.add(t, "gateway", id=gid, state="disabled", since=gw.disabled_at)
        self.log.add(t, "scenario", ev="end", frames=self._frame_seq)

    def _band(self, frequency_hz: int) -> str:
        try:
            return self.plan.sub_band_of(frequency_hz).id
        except ValueError:
            return "none"

    # -- device lifecycle ---------------------------------------------------

    def _dev_events(self, t: Timestamp, dev_id: str, events: list[DeviceEvent]) -> None:
        for ev in events:
            self.log.add(t, "dev", id=dev_id, ev=ev.kind, **ev.data)

    def _on_power_on(self, t: Timestamp, dev_id: str) -> None:
        dev = self.devices[dev_id]
        spec = self.specs[dev_id]
        self.power_token[dev_id] += 1
        self.win_token[dev_id] += 1
        self._dev_events(t, dev_id, dev.power_on(t))
        token = self.power_token[dev_id]
        if spec.traffic == "lamp":
            for msg in (STATUS, COUNTERS):
                first = timer_phase(spec, dev.profile, msg)
                self.push(t + first, TIMER, (dev_id, msg, token, 0))
        else:
            self.push(t + seconds(spec.test_start_s), TIMER, (dev_id, TEST, token, 0))
        self._kick(dev_id, t)

    def _on_power_off(self, t: Timestamp, dev_id: str) -> None:
        self.power_token[dev_id] += 1
        self.win_token[dev_id] += 1
        self.kick_at.pop(dev_id, None)
        self._dev_events(t, dev_id, self.devices[dev_id].power_off(t))

    def _on_timer(self, t: Timestamp, arg: tuple) -> None:
        dev_id, msg, token, k = arg
        if token != self.power_token[dev_id]:
            return
        dev = self.devices[dev_id]
        spec = self.specs[dev_id]
        if msg == TEST:
            dev.enqueue(TEST, t, spec.test_len, spec.test_confirmed)
            if k + 1 < spec.test_count:
                self.push(t + seconds(spec.test_interval_s), TIMER, (dev_id, msg, token, k + 1))
        else:
            dev.enqueue(msg, t)
            self.push(t + dev.profile.period(msg), TIMER, (dev_id, msg, token, k + 1))
        self._kick(dev_id, t)

    def _kick(self, dev_id: str, t: Timestamp) -> None:
        if self.kick_at.get(dev_id) == t:
            return
        self.kick_at[dev_id] = t
        self.push(t, KICK, dev_id)

    def _on_kick(self, t: Timestamp, dev_id: str) -> None:
        if self.kick_at.get(dev_id) == t:
            del self.kick_at[dev_id]
        dev = self.devices[dev_id]
        try:
            res = dev.next_action(t, self._new_frame_id)
        except ValueError as exc:
            self.log.add(t, "dev", id=dev_id, ev="error", cause=str(exc).replace(" ", "_"))
            dev.pending = None
            return
        if isinstance(res, PhyFrame):
            self._start_frame(t, res)
        elif res is not None:
            self._kick(dev_id, res)

    def _on_window_close(self, t: Timestamp, arg: tuple) -> None:
        dev_id, token = arg
        if token != self.win_token[dev_id]:
            return
        if self.dl_lock.get(dev_id, 0) > t:
            self.push(self.dl_lock[dev_id], WINDOW_CLOSE, arg)
            return
        nxt, events = self.devices[dev_id].retransmission_tick(t)
        self._dev_events(t, dev_id, events)
        if nxt is not None:
            self._kick(dev_id, nxt)

    def _on_join_burst(self, t: Timestamp, arg: tuple) -> None:
        dev_id, token = arg
        if token != self.win_token[dev_id]:
            return
        frame = self.devices[dev_id].start_join_burst(t, self._new_frame_id)
        if frame is not None:
            self.win_token[dev_id] += 1
            self._start_frame(t, frame)

    # -- attackers and background -------------------------------------------

    def _on_attack_edge(self, t: Timestamp, arg: tuple) -> None:
        atk, edge = arg
        self.log.add(t, "attack", id=atk.id, kind=atk.kind, ev=edge, mode=atk.mode)

    def _on_attack(self, t: Timestamp, k: int) -> None:
        em = self.discrete[k]
        frame, nxt = em.next_emission(t, self._new_frame_id)
        self._start_frame(t, frame)
        if nxt is not None and nxt <= self.end_time:
            self.push(nxt, ATTACK, k)

    def _on_background(self, t: Timestamp, k: int) -> None:
        bg = self.background[k]
        src = bg.src
        ch = src.channels[bg.rng.randrange(len(src.channels))]
        frame = PhyFrame(
            id=self._new_frame_id(), emitter=src.id, frequency_hz=self.plan.uplink[ch].frequency_hz,
            params=bg.params, start=t, air=airtime(bg.params), kind=FrameKind.PLAIN_LORA,
            content_id=f"{src.id}:{bg.count}", mac=MacFields(dev_id=src.id, msg_type=FOREIGN),
        )
        bg.count += 1
        self._start_frame(t, frame)
        self.push(t + bg.gap(), BACKGROUND, k)

    # -- frames -------------------------------------------------------------

    def _start_frame(self, t: Timestamp, frame: PhyFrame) -> None:
        if frame.start > t:
            self.push(frame.start, TX_START, frame)
        else:
            self._on_tx_start(t, frame)

    def _on_tx_start(self, t: Timestamp, frame: PhyFrame) -> None:
        if frame.kind in DOWNLINK_KINDS:
            gw = self.gateways[frame.emitter]
            if not gw.enabled:
                self.log.add(t, "emit", id=frame.id, src=frame.emitter, kind=frame.kind, cancelled=True, cause="gateway-off")
                return
            dev = self.devices.get(frame.mac.dev_id or "")
            if dev is not None and dev.windows is not None and dev.windows.expects(frame.frequency_hz, frame.sf, t):
                self.dl_lock[dev.id] = frame.end  # preamble locked: keep the receiver open until the frame ends
        mac = frame.mac
        self.log.add(
            t, "emit", id=frame.id, src=frame.emitter, kind=frame.kind, f=frame.frequency_hz, sf=frame.sf,
            bw=frame.bandwidth_hz, len=frame.params.payload_len, air=frame.air, band=self._band(frame.frequency_hz),
            dev=mac.dev_id, fcnt=mac.fcnt, msg=mac.msg_type, conf=frame.confirmed, att=mac.attempt,
            win=mac.target_window, ack=mac.ack, adr=mac.adr_dr,
        )
        self.longest_air = max(self.longest_air, frame.air)
        self.widest_bw = max(self.widest_bw, frame.bandwidth_hz)
        bucket = self.recent[frame.frequency_hz]
        bucket.append(frame)
        if len(bucket) > 32:
            # anything still relevant overlaps a frame that started at most longest_air ago
            horizon = t - self.longest_air
            bucket[:] = [f for f in bucket if f.end > horizon]
        if frame.kind in DETECTABLE_KINDS:
            state = []
            for gid, gw in self.gateways.items():
                if not gw.enabled or not gw.listens(frame):
                    continue
                rssi = self.power_at(frame.emitter, frame.params.power_dbm, gid) + self._fading(gid)
                sens = self.sens.rssi(frame.sf, frame.bandwidth_hz)
                status = gw.on_preamble(frame, rssi, sens, t, self.flood_paths(gw, t))
                state.append((gid, rssi, status))
            self.rx_pending[frame.id] = state
        self.push(frame.end, TX_END, frame)

    def _on_tx_end(self, t: Timestamp, frame: PhyFrame) -> None:
        if frame.kind in DOWNLINK_KINDS:
            self._downlink_end(t, frame)
            return
        pending = self.rx_pending.pop(frame.id, [])
        if frame.mac.msg_type == FOREIGN:
            # nobody consumes the verdict: only the demodulator path it held matters
            for gid, _, _ in pending:
                self.gateways[gid].release(frame.id)
            return
        for gid, rssi, status in pending:
            gw = self.gateways[gid]
            noise = self.link.noise_dbm(frame.bandwidth_hz)
            if status is None:
                if frame.params.preamble_symbols >= gw.config.min_preamble_symbols:
                    self._rx(t, frame, gid, ReceptionOutcome(False, rssi, rssi - noise, LossReason.BELOW_SENSITIVITY))
                continue
            if status == "demod-busy":
                self._rx(t, frame, gid, ReceptionOutcome(False, rssi, rssi - noise, LossReason.DEMOD_BUSY))
                continue
            held = gw.holds(frame.id)
            if frame.kind is not FrameKind.PREAMBLE_ONLY:
                gw.release(frame.id)
            if not gw.enabled or (not held and frame.kind is not FrameKind.PREAMBLE_ONLY):
                self._rx(t, frame, gid, ReceptionOutcome(False, rssi, rssi - noise, LossReason.GATEWAY_OFF))
                continue
            if gw.config.half_duplex and gw.transmitting(frame.start, frame.end):
                self._rx(t, frame, gid, ReceptionOutcome(False, rssi, rssi - noise, LossReason.HALF_DUPLEX))
                continue
            outcome = resolve_reception(frame, rssi, self.interferers(frame, gid), self.sens, self.rej,
                                        self._resolve_rng(gid), noise)
            self._rx(t, frame, gid, outcome)
            msg = gw.forward_uplink(outcome, frame, t)
            if msg is not None and self.server.receive(msg):
                self.push(t + self.server.dedup_window_us, SERVER, frame.id)
        dev = self.devices.get(frame.emitter)
        if dev is not None and frame.kind in UPLINK_KINDS:
            w = dev.rx_window_listen(frame)
            self.win_token[dev.id] += 1
            token = self.win_token[dev.id]
            self.push(w.close_at, WINDOW_CLOSE, (dev.id, token))
            if frame.kind is FrameKind.JOIN_REQUEST:
                burst = dev.join_burst_time(frame)
                if burst is not None:
                    self.push(burst, JOIN_BURST, (dev.id, token))

    def _rx(self, t: Timestamp, frame: PhyFrame, receiver: str, out: ReceptionOutcome) -> None:
        self.log.add(t, "rx", id=frame.id, rcv=receiver, ok=out.decoded, reason=out.reason,
                     rssi=round(out.rssi_dbm, 2), snr=round(out.snr_db, 2))

    def _downlink_end(self, t: Timestamp, frame: PhyFrame) -> None:
        dev = self.devices.get(frame.mac.dev_id or "")
        if dev is None:
            return  # addressed to an attacker identity: nobody listens
        noise = self.link.noise_dbm(frame.bandwidth_hz)
        rssi = self.power_at(frame.emitter, frame.params.power_dbm, dev.id) + self._fading(dev.id)
        w = dev.windows
        if not dev.powered or w is None or w.expects(frame.frequency_hz, frame.sf, frame.start) is None:
            self._rx(t, frame, dev.id, ReceptionOutcome(False, rssi, rssi - noise, LossReason.OFF_CHANNEL))
            return
        outcome = resolve_reception(frame, rssi, self.interferers(frame, dev.id), self.sens, self.rej,
                                    self._resolve_rng(dev.id), noise)
        self._rx(t, frame, dev.id, outcome)
        if not outcome.decoded:
            return
        self._dev_events(t, dev.id, dev.on_downlink(frame, t))
        self.win_token[dev.id] += 1
        nxt, events = dev.retransmission_tick(t)
        self._dev_events(t, dev.id, events)
        if nxt is not None:
            self._kick(dev.id, nxt)

    # -- server -------------------------------------------------------------

    def _on_server(self, t: Timestamp, frame_id: int) -> None:
        downlinks, events, disable = self.server.process(frame_id, t, self._new_frame_id)
        for ev in events:
            self._server_event(ev)
        for gid in disable:
            self.gateways[gid].disable(t)
        for dl in downlinks:
            self.push(dl.start, TX_START, dl)

    def _server_event(self, ev: ServerEvent) -> None:
        extra = {k: (str(v).replace(" ", "_") if isinstance(v, str) else v) for k, v in ev.extra.items()}
        self.log.add(ev.t, "srv", type=ev.kind, dev=ev.dev or None, gw=ev.gw or None, sf=ev.sf,
                     rssi=None if ev.rssi is None else round(ev.rssi, 2),
                     snr=None if ev.snr is None else round(ev.snr, 2), len=ev.length, **extra)


def timer_phase(spec: DeviceSpec, profile: Any, msg: str) -> Timestamp:
    """Delay from power-on to the first firing of a periodic message timer."""
    period = profile.period(msg)
    phase = spec.status_phase_s if msg == STATUS else spec.counters_phase_s
    if msg == COUNTERS and spec.defects.counters_trigger_lost_on_powerdown:
        return period  # stored trigger lost: restart a full period after power-up
    return period if phase is None else seconds(phase)


def run(scenario: Scenario) -> EventLog:
    return Simulation(scenario).run()


__all__ = ["EventLog", "Record", "Simulation", "parse_log", "run", "timer_phase"]
