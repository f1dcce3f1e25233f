"""Named scenarios for the bench, on-site and long-term experiments.

Distances are configuration data: bench tests use metre-scale separations, the
city deployment a synthesized kilometre-scale layout around six gateways.
Weekday/weekend variability is not modelled.
"""

from __future__ import annotations

import copy
import random
from typing import Callable

from ..attacker import AttackConfig
from ..device import DefectFlags, DeviceProfile
from ..gateway import GatewayConfig
from ..netserver import AdrPolicy, OverloadPolicy
from ..radio import LinkModel
from .scenario import BackgroundSource, DeviceSpec, Scenario

DEFAULT_CHANNELS = [0, 1, 2]

# -- bench and on-site tests ---------------------------------------------------


def _test_node(dev_id: str, position: tuple[float, float], **kw) -> DeviceSpec:
    base = dict(activation="abp", traffic="test", test_count=30, test_interval_s=60.0, test_len=16,
                test_confirmed=True, abp_dr=5, adr=False)
    base.update(kw)
    return DeviceSpec(dev_id, position, **base)


def direct_jam() -> Scenario:
    """Eight co-located jammers, one per uplink channel, against 1/16/51-byte unconfirmed uplinks."""
    nodes = [
        _test_node(f"node-{n}b", (0.0, 0.0), test_len=n, test_confirmed=False, test_start_s=30.0 + 20.0 * k)
        for k, n in enumerate((1, 16, 51))
    ]
    return Scenario(
        name="direct-jam",
        duration_s=1900.0,
        description="Co-located 0-byte SF7 jammers at 20 dBm, one frame per ms on all eight channels.",
        gateways=[GatewayConfig("gw-main", (400.0, 0.0))],
        devices=nodes,
        attacks=[AttackConfig("direct-jam", (2.0, 0.0), id="jam")],
    )


def _onsite_indirect(name: str, node_distance_m: float, attacker_offset_m: float, rx2: bool,
                     fading_db: float = 0.0, description: str = "") -> Scenario:
    node = _test_node("node", (node_distance_m, 0.0), channels=DEFAULT_CHANNELS, rx2_preference=rx2)
    return Scenario(
        name=name,
        duration_s=2400.0,
        description=description,
        link=LinkModel(fading_sigma_db=fading_db),
        gateways=[GatewayConfig("gw-gratsch", (0.0, 0.0)), GatewayConfig("gw-labers", (node_distance_m + 2500.0, 900.0))],
        devices=[node],
        attacks=[AttackConfig("indirect-interference", (node_distance_m + attacker_offset_m, 0.0), id="intf")],
    )


def onsite_indirect() -> Scenario:
    return _onsite_indirect("onsite-indirect", 1300.0, 2.0, False,
                            description="Interferers next to the node; downlinks arrive near -110 dBm.")


def onsite_indirect_rx2() -> Scenario:
    sc = _onsite_indirect("onsite-indirect-rx2", 1300.0, 2.0, True,
                          description="As onsite-indirect, downlinks forced into RX2.")
    return sc


def indirect_10m() -> Scenario:
    return _onsite_indirect("indirect-10m", 90.0, 10.0, False, fading_db=4.0,
                            description="Interferers 10 m from the node, node closer to the main gateway.")


def invitro_indirect_grid() -> dict[str, Scenario]:
    """Interferer SF/CR/payload tuning grid on the bench (2 m separations)."""
    out = {}
    for sf in (7, 12):
        for cr in (5, 8):
            for payload in (1, 16):
                name = f"invitro-indirect-sf{sf}-cr{cr}-{payload}b"
                node = _test_node("node", (2.0, 0.0), channels=DEFAULT_CHANNELS, test_len=1, test_count=10)
                out[name] = Scenario(
                    name=name,
                    duration_s=900.0,
                    description="Bench tuning run of the indirect interferer.",
                    gateways=[GatewayConfig("gw-bench", (0.0, 0.0), extra_loss_db=60.0)],
                    devices=[node],
                    attacks=[AttackConfig("indirect-interference", (4.0, 0.0), id="intf", sf=sf, code_rate=cr,
                                          payload_len=payload)],
                )
    return out


def channel_exhaust() -> Scenario:
    return Scenario(
        name="channel-exhaust",
        duration_s=2000.0,
        description="Registered attacker sessions send 16-byte telegrams, about 100 per minute overall.",
        gateways=[GatewayConfig("gw-main", (400.0, 0.0))],
        devices=[_test_node("node", (0.0, 0.0), test_confirmed=False)],
        attacks=[AttackConfig("channel-exhaust", (2.0, 0.0), id="exh")],
    )


# Hang time tuned so the flood holds all eight paths for roughly a fifth of the time.
FLOOD_HANG_SYMBOLS = 4


def gw_exhaust() -> Scenario:
    """Preamble flood, one emitter per channel, against a node on DR3."""
    return Scenario(
        name="gw-exhaust",
        duration_s=2000.0,
        description="Preamble-only frames on all eight channels hold the gateway's demodulators.",
        gateways=[GatewayConfig("gw-main", (400.0, 0.0), preamble_hang_symbols=FLOOD_HANG_SYMBOLS)],
        devices=[_test_node("node", (0.0, 0.0), test_confirmed=False, abp_dr=3)],
        attacks=[AttackConfig("preamble-flood", (2.0, 0.0), id="flood")],
    )


def join_flood(mode: str) -> Scenario:
    overload = OverloadPolicy(enabled=mode == "otaa-valid")
    node = DeviceSpec("node", (1.0, 0.0), activation="otaa", traffic="test", test_count=30, test_interval_s=60.0,
                      test_len=16, test_confirmed=True, channels=DEFAULT_CHANNELS, adr=False, test_start_s=60.0)
    return Scenario(
        name=f"join-flood-{mode}",
        duration_s=2000.0,
        description="Three emitters beside the node flood the join channels.",
        gateways=[GatewayConfig("gw-main", (800.0, 0.0))],
        devices=[node],
        attacks=[AttackConfig("join-flood", (2.0, 0.0), id="jf", mode=mode, start_s=30.0)],
        overload=overload,
    )


def redundancy(gateways: int) -> Scenario:
    """Jammer beside gateway A; a second gateway on the far side of the node when ``gateways`` is 2."""
    gws = [GatewayConfig("gw-a", (0.0, 0.0))]
    if gateways >= 2:
        gws.append(GatewayConfig("gw-b", (1400.0, 0.0)))
    return Scenario(
        name=f"redundancy-{gateways}gw",
        duration_s=1900.0,
        description="Direct jamming next to one gateway.",
        gateways=gws,
        devices=[_test_node("node", (1000.0, 0.0), test_confirmed=False)],
        attacks=[AttackConfig("direct-jam", (5.0, 0.0), id="jam")],
    )


# -- long-term city deployment ----------------------------------------------------

CITY_GATEWAYS = [
    GatewayConfig("gw-gratsch", (200.0, 2600.0)),
    GatewayConfig("gw-marling", (-2700.0, -600.0)),
    GatewayConfig("gw-labers", (2800.0, 900.0)),
    GatewayConfig("gw-untermais", (300.0, -500.0), extra_loss_db=22.0),  # mounted too low
    GatewayConfig("gw-sinich", (1800.0, -3200.0)),
    GatewayConfig("gw-lana", (-3200.0, 3400.0)),
]
ATTACKER_SITE = (-300.0, 1500.0)  # between Gratsch, Marling and Labers

STATUS_PERIODS = (15, 20, 30, 60)
FLEET = 81
DAILY_DEFECTIVE = 25
NIGHT_S = 10 * 3600.0
LAYOUT_SEED = 20231101


def city_profiles() -> dict[str, DeviceProfile]:
    out = {}
    for p in STATUS_PERIODS:
        out[f"lamp-{p}"] = DeviceProfile(f"lamp-{p}", status_period_min=p, counters_period_min=60)
        out[f"lamp-{p}-daily"] = DeviceProfile(f"lamp-{p}-daily", status_period_min=p, counters_period_min=1440)
    return out


def city_fleet(defects: DefectFlags | None = None) -> list[DeviceSpec]:
    """81 lamps; positions, periods and timer phases are fixed layout data."""
    rng = random.Random(LAYOUT_SEED)
    fleet_defects = defects or DefectFlags(ignore_ack=True, reset_dr0_after_join=True, join_backoff_violation=True)
    out = []
    for k in range(FLEET):
        period = STATUS_PERIODS[k % len(STATUS_PERIODS)]
        daily = k % 3 == 0 and k // 3 < DAILY_DEFECTIVE
        flags = copy.deepcopy(fleet_defects)
        if daily:
            flags.counters_trigger_lost_on_powerdown = True
        x = rng.uniform(-1500.0, 1500.0)
        y = rng.uniform(-1500.0, 1500.0)
        out.append(
            DeviceSpec(
                f"lamp-{k:02d}",
                (round(x, 1), round(y, 1)),
                profile=f"lamp-{period}-daily" if daily else f"lamp-{period}",
                defects=flags,
                power_on_s=round(rng.uniform(0.0, 150.0), 3),
                power_off_s=NIGHT_S,
                join_dr=5,
                status_phase_s=round(rng.uniform(0.0, 60.0 * period), 3),
                counters_phase_s=round(rng.uniform(0.0, 3600.0), 3),
            )
        )
    return out


def city_background() -> list[BackgroundSource]:
    """Foreign networks sharing the band, mostly on SF12."""
    rng = random.Random(LAYOUT_SEED + 1)
    out = []
    for k, (sf, rate) in enumerate([(12, 40.0), (12, 40.0), (12, 40.0), (10, 10.0), (9, 20.0), (8, 10.0), (7, 10.0)]):
        pos = (round(rng.uniform(-1800.0, 1800.0), 1), round(rng.uniform(-1800.0, 1800.0), 1))
        out.append(BackgroundSource(f"bg-{k}", pos, rate_per_min=rate, sf=sf, payload_len=24))
    return out


ADR_VARIANTS = {
    "default": AdrPolicy.preset("default"),
    "adr6": AdrPolicy.preset("limited"),
    "fixed-sf7": AdrPolicy.preset("fixed"),
    "fixed-adr1": AdrPolicy.preset("fixed_plus"),
}


def longterm(variant: str, attacked: bool) -> Scenario:
    attacks = []
    if attacked:
        attacks.append(AttackConfig("direct-jam", ATTACKER_SITE, id="jam", preamble_symbols=0))
    return Scenario(
        name=f"longterm-{variant}-{'attacked' if attacked else 'clean'}",
        duration_s=NIGHT_S,
        description="One night of the 81-lamp deployment with six gateways.",
        link=LinkModel(shadowing_sigma_db=4.0, fading_sigma_db=2.0),
        profiles=city_profiles(),
        gateways=copy.deepcopy(CITY_GATEWAYS),
        devices=city_fleet(),
        attacks=attacks,
        background=city_background(),
        adr=copy.deepcopy(ADR_VARIANTS[variant]),
    )


# -- catalogue --------------------------------------------------------------------


def _catalogue() -> dict[str, Callable[[], Scenario]]:
    cat: dict[str, Callable[[], Scenario]] = {
        "direct-jam": direct_jam,
        "onsite-indirect": onsite_indirect,
        "onsite-indirect-rx2": onsite_indirect_rx2,
        "indirect-10m": indirect_10m,
        "channel-exhaust": channel_exhaust,
        "gw-exhaust": gw_exhaust,
        "redundancy-1gw": lambda: redundancy(1),
        "redundancy-2gw": lambda: redundancy(2),
    }
    for name, sc in invitro_indirect_grid().items():
        cat[name] = lambda sc=sc: copy.deepcopy(sc)
    for mode in ("otaa-valid", "otaa-invalid", "abp-valid", "abp-invalid"):
        cat[f"join-flood-{mode}"] = lambda mode=mode: join_flood(mode)
    for variant in ADR_VARIANTS:
        for attacked in (False, True):
            cat[f"longterm-{variant}-{'attacked' if attacked else 'clean'}"] = (
                lambda variant=variant, attacked=attacked: longterm(variant, attacked)
            )
    return cat


def scenario_presets() -> dict[str, Scenario]:
    """Every named preset, freshly built."""
    return {name: build() for name, build in _catalogue().items()}


def preset(name: str) -> Scenario:
    cat = _catalogue()
    if name not in cat:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(cat))}")
    return cat[name]()


def preset_names() -> list[str]:
    return sorted(_catalogue())


def without_attacks(scenario: Scenario) -> Scenario:
    """Same scenario with every attacker removed (the clean baseline)."""
    out = copy.deepcopy(scenario)
    out.attacks = []
    out.name = f"{scenario.name}-baseline"
    return out
