import textwrap

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorasec.sim import DeviceSpec, Scenario, ScenarioError, dump_scenario, load_scenario
from lorasec.sim.presets import preset, preset_names, without_attacks

MINIMAL = textwrap.dedent("""\
    name: tiny
    duration_s: 600
    gateways:
      - id: gw
        position: [0, 0]
    devices:
      - id: lamp
        position: [100, 0]
        activation: abp
""")


def diagnostics(text):
    with pytest.raises(ScenarioError) as info:
        load_scenario(text)
    return info.value.diagnostics


def test_minimal_loads():
    sc = load_scenario(MINIMAL)
    assert sc.name == "tiny" and sc.devices[0].position == (100.0, 0.0)
    assert sc.check() == []


@pytest.mark.parametrize("name", preset_names())
def test_presets_round_trip(name):
    sc = preset(name)
    assert sc.check() == []
    again = load_scenario(dump_scenario(sc))
    assert again.to_dict() == sc.to_dict()


def test_unknown_field_reports_line():
    text = MINIMAL.replace("activation: abp", "activation: abp\n    colour: red")
    assert diagnostics(text) == ["line 10: devices[0].colour: unknown field"]


def test_bad_duty_cycle_reports_line():
    text = MINIMAL + textwrap.dedent("""\
        plan:
          uplink:
            - {frequency_hz: 868100000, dr_min: 0, dr_max: 5, sub_band: g1}
          sub_bands:
            - {id: g1, duty_cycle: 0.01, low_hz: 868000000, high_hz: 868600000}
            - id: g3
              duty_cycle: 1.5
              low_hz: 869400000
              high_hz: 869650000
    """)
    assert diagnostics(text) == ["line 16: plan.sub_bands[1].duty_cycle: must be in (0, 1], got 1.5"]


def test_every_problem_listed():
    text = textwrap.dedent("""\
        duration_s: -5
        devices:
          - id: a
          - id: b
            position: [0, 0]
            profile: nope
    """)
    diag = diagnostics(text)
    assert "line 1: name: required field missing" in diag
    assert "line 1: duration_s: must be > 0" in diag
    assert "line 3: devices[0].position: required field missing" in diag


def test_cross_field_checks():
    text = MINIMAL.replace("activation: abp", "activation: abp\n    profile: street")
    assert diagnostics(text) == ["devices[0].profile: unknown profile 'street'"]
    text = MINIMAL.replace("activation: abp", "activation: abp\n    channels: [0, 12]")
    assert diagnostics(text) == ["devices[0].channels: unknown channel 12"]
    text = MINIMAL.replace("activation: abp", "activation: abp\n    tx_power_dbm: 18")
    assert diagnostics(text) == ["devices[0].tx_power_dbm: compliant devices transmit at most 16 dBm"]


def test_attack_errors_surface():
    text = MINIMAL + "attacks:\n  - kind: direct-jam\n    position: [1, 0]\n    power_dbm: 30\n"
    assert diagnostics(text) == ["line 11: attacks[0]: attack power 30 dBm exceeds 20.0 dBm"]


def test_parse_error_location():
    diag = diagnostics("name: x\ngateways: [\n")
    assert diag[0].startswith("line 3, column 1: parse error")


def test_top_level_must_be_mapping():
    assert diagnostics("- a\n- b\n") == ["scenario: top level must be a mapping"]


def test_without_attacks_and_seed():
    sc = preset("direct-jam")
    base = without_attacks(sc)
    assert base.attacks == [] and sc.attacks and base.name == "direct-jam-baseline"
    assert sc.with_seed(9).seed == 9 and sc.seed == 1


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("moon-bounce")


@settings(max_examples=40, deadline=None)
@given(
    x=st.floats(-5000, 5000, allow_nan=False),
    y=st.floats(-5000, 5000, allow_nan=False),
    on=st.floats(0, 100, allow_nan=False),
    dr=st.integers(0, 5),
    power=st.integers(0, 16),
    channels=st.one_of(st.none(), st.lists(st.integers(0, 8), min_size=1, max_size=4)),
    traffic=st.sampled_from(["lamp", "test"]),
)
def test_device_round_trip(x, y, on, dr, power, channels, traffic):
    sc = Scenario("rt", devices=[DeviceSpec("d", (x, y), power_on_s=on, abp_dr=dr, tx_power_dbm=power,
                                            channels=channels, traffic=traffic, activation="abp")])
    again = load_scenario(dump_scenario(sc))
    assert again.to_dict() == sc.to_dict()
