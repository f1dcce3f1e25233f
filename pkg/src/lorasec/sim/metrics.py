"""Metrics derived from an event log: coverage, boot spread, GW2+, RTT."""

from __future__ import annotations

import csv
import io
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from ..core import Duration, seconds
from ..device import BOOT, COUNTERS, STATUS, TEST
from .engine import EventLog, Record, parse_log, timer_phase
from .scenario import Scenario

MSG_TYPES = (BOOT, STATUS, COUNTERS, TEST)
DATA_UP = ("DATA_UP", "DATA_UP_CNF")


def _records(log: EventLog | str | Iterable[str]) -> list[Record]:
    if isinstance(log, EventLog):
        return list(log.records())
    return list(parse_log(log))


def expected_counts(scenario: Scenario) -> dict[tuple[str, str], int]:
    """Messages each device should generate, from profiles and power windows alone."""
    end = seconds(scenario.duration_s)
    out: dict[tuple[str, str], int] = {}
    for spec in scenario.devices:
        on = seconds(spec.power_on_s)
        off = end if spec.power_off_s is None else min(end, seconds(spec.power_off_s))
        if off <= on:
            continue
        profile = scenario.profiles[spec.profile]
        if spec.traffic == "test":
            first = on + seconds(spec.test_start_s)
            step = seconds(spec.test_interval_s)
            out[(spec.id, TEST)] = sum(1 for k in range(spec.test_count) if first + k * step < off)
            continue
        if spec.send_boot:
            out[(spec.id, BOOT)] = 1
        for msg in (STATUS, COUNTERS):
            first = on + timer_phase(spec, profile, msg)
            period = profile.period(msg)
            out[(spec.id, msg)] = 0 if first >= off else (off - 1 - first) // period + 1
    return out


@dataclass
class Delivered:
    dev: str
    msg: str
    first_t: int
    gateways: int
    confirmed: bool


def delivered_messages(records: list[Record], fleet: set[str] | None = None) -> dict[tuple, Delivered]:
    """Distinct application messages accepted by the server, keyed per device message."""
    out: dict[tuple, Delivered] = {}
    for r in records:
        if r.tag != "srv" or r.get("type") not in DATA_UP:
            continue
        dev = r.get("dev")
        if fleet is not None and dev not in fleet:
            continue
        key = (dev, r.get("msg"), r.get("fcnt"), r.get("first_tx"))
        gws = int(r.get("gws", "1"))
        if key in out:
            out[key].gateways = max(out[key].gateways, gws)
        else:
            out[key] = Delivered(dev, r.get("msg"), r.t, gws, r.get("type") == "DATA_UP_CNF")
    return out


RTT_LOSS = None  # marker for a confirmed message that was never acknowledged


def rtt_series(log: EventLog | str | Iterable[str], device: str) -> list[Duration | None]:
    """Per confirmed message, in order: RTT in microseconds or ``RTT_LOSS``."""
    out: list[Duration | None] = []
    for r in _records(log):
        if r.tag != "dev" or r.get("id") != device:
            continue
        ev = r.get("ev")
        if ev == "ack":
            out.append(int(r.get("rtt_us")))
        elif ev == "abandoned" and r.get("msg") != COUNTERS:
            out.append(RTT_LOSS)
    return out


@dataclass
class MetricsReport:
    rows: list[tuple[str, float]] = field(default_factory=list)
    rtt: dict[str, list[Duration | None]] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        for k, v in self.rows:
            if k == key:
                return v
        raise KeyError(key)

    def as_dict(self) -> dict[str, float]:
        return dict(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.rows:
            w.writerow([k, _num(v)])
        return buf.getvalue()

    def summary(self) -> str:
        width = max((len(k) for k, _ in self.rows), default=6)
        return "\n".join(f"{k:<{width}}  {_num(v)}" for k, v in self.rows)


def _num(v: float) -> str:
    return f"{v:.4f}".rstrip("0").rstrip(".") if isinstance(v, float) else str(v)


def coverage_report(log: EventLog | str | Iterable[str], scenario: Scenario) -> MetricsReport:
    records = _records(log)
    fleet = {d.id for d in scenario.devices}
    expected = expected_counts(scenario)
    delivered = delivered_messages(records, fleet)

    received: dict[tuple[str, str], int] = defaultdict(int)
    for d in delivered.values():
        received[(d.dev, d.msg)] += 1

    rows: list[tuple[str, float]] = []
    for msg in MSG_TYPES:
        exp_total = sum(v for (dev, m), v in expected.items() if m == msg)
        if exp_total == 0 and not any(m == msg for (_, m) in received):
            continue
        got = sum(min(received[(dev, m)], v) for (dev, m), v in expected.items() if m == msg)
        heard = sum(1 for dev in sorted(fleet) if received.get((dev, msg), 0) > 0)
        rows.append((f"{msg}.devices", heard))
        rows.append((f"{msg}.expected", exp_total))
        rows.append((f"{msg}.received", got))
        rows.append((f"{msg}.coverage_pct", 100.0 * got / exp_total if exp_total else 0.0))

    first_boot: dict[str, int] = {}
    for d in delivered.values():
        if d.msg == BOOT and (d.dev not in first_boot or d.first_t < first_boot[d.dev]):
            first_boot[d.dev] = d.first_t
    spread = (max(first_boot.values()) - min(first_boot.values())) / 1e6 if len(first_boot) > 1 else 0.0
    rows.append(("boot.spread_s", spread))

    per_dev_min: dict[str, int] = {}
    for d in delivered.values():
        per_dev_min[d.dev] = min(per_dev_min.get(d.dev, d.gateways), d.gateways)
    rows.append(("gw2.devices", sum(1 for v in per_dev_min.values() if v >= 2)))
    multi = sum(1 for d in delivered.values() if d.gateways >= 2)
    rows.append(("gw2.message_pct", 100.0 * multi / len(delivered) if delivered else 0.0))

    rtt: dict[str, list[Duration | None]] = {}
    acks = losses = 0
    samples: list[int] = []
    emitted = retx = adr_changes = 0
    sfs_after_join: dict[str, set[str]] = defaultdict(set)
    joined: set[str] = set()
    for r in records:
        if r.tag == "dev" and r.get("id") in fleet:
            dev, ev = r.get("id"), r.get("ev")
            if ev == "ack":
                acks += 1
                samples.append(int(r.get("rtt_us")))
                rtt.setdefault(dev, []).append(int(r.get("rtt_us")))
            elif ev == "abandoned" and r.get("msg") != COUNTERS:
                losses += 1
                rtt.setdefault(dev, []).append(RTT_LOSS)
            elif ev == "adr-applied":
                adr_changes += 1
            elif ev in ("joined", "power-on"):
                joined.add(dev)
                sfs_after_join[dev] = set()
        elif r.tag == "emit" and r.get("src") in fleet and r.get("kind") == "uplink-data":
            emitted += 1
            if r.get("att") not in ("0", None):
                retx += 1
            if r.get("src") in joined:
                sfs_after_join[r.get("src")].add(r.get("sf"))
    conf_expected = sum(
        v for (dev, m), v in expected.items()
        if m in (BOOT, STATUS) or (m == TEST and _spec(scenario, dev).test_confirmed)
    )
    rows.append(("confirmed.acked", acks))
    rows.append(("confirmed.delivery_pct", 100.0 * acks / conf_expected if conf_expected else 0.0))
    rows.append(("rtt.mean_s", statistics.fmean(samples) / 1e6 if samples else 0.0))
    rows.append(("rtt.losses", losses))
    rows.append(("uplinks.emitted", emitted))
    rows.append(("uplinks.retransmissions", retx))
    rows.append(("adr.dr_changes", adr_changes))
    rows.append(("adr.devices_multi_sf_after_join", sum(1 for v in sfs_after_join.values() if len(v) > 1)))
    return MetricsReport(rows, rtt)


def _spec(scenario: Scenario, dev: str):
    for d in scenario.devices:
        if d.id == dev:
            return d
    raise KeyError(dev)


def airtime_fractions(log: EventLog | str | Iterable[str], duration_s: float) -> dict[tuple[str, str], float]:
    """Fraction of the run each emitter spent transmitting, per sub-band."""
    air: dict[tuple[str, str], int] = defaultdict(int)
    for r in _records(log):
        if r.tag == "emit" and r.get("cancelled") is None:
            air[(r.get("src"), r.get("band"))] += int(r.get("air"))
        elif r.tag == "airtime":
            air[(r.get("src"), r.get("band"))] += int(r.get("air_us"))
    total = seconds(duration_s)
    return {k: v / total for k, v in sorted(air.items())}


def aggregate(reports: list[MetricsReport]) -> list[tuple[str, float, float, float]]:
    """Mean, min and max of every metric across replicates."""
    if not reports:
        return []
    keys = [k for k, _ in reports[0].rows]
    out = []
    for k in keys:
        vals = [r.as_dict().get(k, 0.0) for r in reports]
        out.append((k, statistics.fmean(vals), min(vals), max(vals)))
    return out


def aggregate_csv(rows: list[tuple[str, float, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "mean", "min", "max"])
    for k, mean, lo, hi in rows:
        w.writerow([k, _num(float(mean)), _num(float(lo)), _num(float(hi))])
    return buf.getvalue()


def read_aggregate_csv(text: str) -> dict[str, float]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "metric" not in reader.fieldnames or "mean" not in reader.fieldnames:
        raise ValueError("aggregate CSV needs 'metric' and 'mean' columns")
    return {row["metric"]: float(row["mean"]) for row in reader}
