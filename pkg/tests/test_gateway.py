import pytest

from lorasec.core import TxParams, airtime, default_plan, symbol_time
from lorasec.gateway import Gateway, GatewayConfig
from lorasec.radio import FrameKind, MacFields, PhyFrame, ReceptionOutcome

F = 868_100_000


def gw(**kw):
    return Gateway(GatewayConfig("gw", (0, 0), **kw), default_plan())


def frame(fid, start=0, kind=FrameKind.UPLINK_DATA, freq=F, sf=7, preamble=8, bw=125_000):
    p = TxParams(sf=sf, bandwidth_hz=bw, payload_len=20, preamble_symbols=preamble,
                 preamble_only=kind is FrameKind.PREAMBLE_ONLY)
    return PhyFrame(fid, "node", freq, p, start, airtime(p), kind)


def test_paths_exhaust():
    g = gw(demod_paths=2)
    assert g.on_preamble(frame(1), -100, -123, 0) == "path"
    assert g.on_preamble(frame(2), -100, -123, 0) == "path"
    assert g.on_preamble(frame(3), -100, -123, 0) == "demod-busy"
    g.release(1)
    assert g.on_preamble(frame(4), -100, -123, 0) == "path"


def test_external_busy_counts():
    g = gw(demod_paths=2)
    assert g.on_preamble(frame(1), -100, -123, 0, external_busy=2) == "demod-busy"


def test_paths_expire():
    g = gw(demod_paths=1)
    f = frame(1)
    g.on_preamble(f, -100, -123, 0)
    assert g.on_preamble(frame(2, start=f.end), -100, -123, f.end) == "path"


def test_preamble_hang_time():
    g = gw(preamble_hang_symbols=4)
    f = frame(1, kind=FrameKind.PREAMBLE_ONLY)
    assert g.hold_time(f) == f.air + 4 * symbol_time(7, 125_000)
    assert g.hold_time(frame(2)) == frame(2).air


def test_not_seen():
    g = gw()
    assert g.on_preamble(frame(1), -130, -123, 0) is None
    assert g.on_preamble(frame(2, preamble=3), -100, -123, 0) is None
    assert g.on_preamble(frame(3, freq=869_525_000), -100, -123, 0) is None
    # DR6 channel is 250 kHz; a 125 kHz frame on the same frequency only uses the DR0-5 channel
    assert g.on_preamble(frame(4, freq=868_300_000, bw=250_000), -100, -123, 0) is None
    g.disable(5)
    assert g.on_preamble(frame(5), -100, -123, 10) is None


def test_listens_on_dr6_channel():
    g = gw(channels=[8])
    assert g.listens(frame(1, freq=868_300_000, bw=250_000))
    assert not g.listens(frame(2, freq=868_300_000))


def test_forward_only_decoded_uplinks():
    g = gw(clock_offset_us=250)
    ok = ReceptionOutcome(True, -100.0, 5.0)
    msg = g.forward_uplink(ok, frame(1), 1000)
    assert msg.rx_time == 1250 and msg.true_time == 1000
    assert g.forward_uplink(ReceptionOutcome(False, -100.0, -20.0), frame(2), 0) is None
    assert g.forward_uplink(ok, frame(3, kind=FrameKind.PLAIN_LORA), 0) is None


def test_downlink_duty_and_half_duplex():
    g = gw()
    mac = MacFields(dev_id="d", fcnt=0)
    f, why = g.transmit_downlink(1, FrameKind.DOWNLINK_DATA, F, 5, 13, 0, mac)
    assert why is None and f.start == 0 and not f.params.crc_on
    assert g.transmitting(f.start, f.end)
    # same sub-band is locked for 99x the airtime
    _, why = g.transmit_downlink(2, FrameKind.DOWNLINK_DATA, 868_500_000, 5, 13, f.end + 1, mac)
    assert why == "duty-cycle"
    # RX2 lives in a different sub-band
    f2, why = g.transmit_downlink(3, FrameKind.DOWNLINK_DATA, 869_525_000, 0, 13, f.end + 1, mac)
    assert why is None
    _, why = g.transmit_downlink(4, FrameKind.DOWNLINK_DATA, 867_100_000, 5, 13, f2.start + 10, mac)
    assert why == "tx-busy"
    # uplinks arriving during the transmission are not received
    assert g.on_preamble(frame(9, start=f2.start), -100, -123, f2.start) == "demod-busy"


def test_disabled_gateway_cannot_transmit():
    g = gw()
    g.disable(0)
    assert g.transmit_downlink(1, FrameKind.DOWNLINK_DATA, F, 5, 13, 0, MacFields()) == (None, "gateway-disabled")
    assert g.disabled_at == 0


def test_config_validation():
    with pytest.raises(ValueError):
        GatewayConfig("g", (0, 0), demod_paths=0)
