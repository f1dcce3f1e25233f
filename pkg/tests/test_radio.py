import math
import random

import pytest

from lorasec.core import TxParams, airtime, header_end
from lorasec.radio import (
    FrameKind,
    Interferer,
    LinkModel,
    LossReason,
    PhyFrame,
    RejectionMatrix,
    SensitivityTable,
    default_inter_sf,
    merge_intervals,
    received_power,
    resolve_reception,
    spectral_overlap,
)

F = 868_100_000


def frame(sf=7, length=20, start=0, freq=F, kind=FrameKind.UPLINK_DATA):
    p = TxParams(sf=sf, payload_len=length)
    return PhyFrame(1, "node", freq, p, start, airtime(p), kind)


def resolve(target, rssi, interferers, seed=0):
    return resolve_reception(target, rssi, interferers, SensitivityTable(), RejectionMatrix(), random.Random(seed))


def test_path_loss():
    link = LinkModel()
    assert received_power(14, link, 1.0) == pytest.approx(-26.0)
    assert received_power(14, link, 10.0) == pytest.approx(-53.0)
    assert received_power(14, link, 10.0, shadowing_db=3.0) == pytest.approx(-56.0)
    with pytest.raises(ValueError):
        received_power(14, link, 0.0)
    assert link.noise_dbm(250_000) == pytest.approx(-117.0 + 10 * math.log10(2))


def test_clean_frame_decodes():
    out = resolve(frame(), -100.0, [])
    assert out.decoded and out.reason is None and out.verdict == "decoded"


def test_below_sensitivity():
    out = resolve(frame(sf=7), -124.0, [])
    assert not out.decoded and out.reason is LossReason.BELOW_SENSITIVITY
    assert resolve(frame(sf=12), -124.0, []).decoded


def test_strong_header_overlap_always_lost():
    t = frame()
    hit = Interferer("jam", 7, F, 125_000, -100.0, 0, 1000)
    for seed in range(50):
        out = resolve(t, -100.0, [hit], seed)
        assert out.reason is LossReason.HEADER_COLLISION


def test_weaker_by_capture_threshold_never_lost():
    t = frame()
    weak = Interferer("jam", 7, F, 125_000, -106.0, 0, t.end)
    assert all(resolve(t, -100.0, [weak], seed).decoded for seed in range(200))


def test_payload_only_overlap_survives_probabilistically():
    t = frame()
    tail = Interferer("jam", 7, F, 125_000, -104.0, t.start + header_end(t.params) + 1, t.end + 5000)
    ok = sum(resolve(t, -100.0, [tail], seed).decoded for seed in range(2000))
    assert 0.86 < ok / 2000 < 0.94


def test_two_payload_hits_compound():
    t = frame()
    h = t.start + header_end(t.params) + 1
    its = [Interferer(e, 7, F, 125_000, -104.0, h, t.end) for e in ("a", "b")]
    ok = sum(resolve(t, -100.0, its, seed).decoded for seed in range(4000))
    assert 0.78 < ok / 4000 < 0.84


def test_same_emitter_not_summed():
    t = frame()
    # two weak stretches from one emitter stay below the capture threshold
    its = [Interferer("jam", 7, F, 125_000, -106.5, 0, 500), Interferer("jam", 7, F, 125_000, -106.5, 400, t.end)]
    assert resolve(t, -100.0, its).decoded


def test_other_channel_ignored():
    t = frame()
    far = Interferer("jam", 7, 868_300_000, 125_000, -60.0, 0, t.end)
    assert resolve(t, -100.0, [far]).decoded


def test_inter_sf_rejection_threshold():
    t = frame(sf=7)
    rej = default_inter_sf()
    assert rej[(7, 8)] == 5.0 and rej[(7, 12)] == 19.5
    below = Interferer("x", 12, F, 125_000, -100.0 + 19.0, 0, t.end)
    above = Interferer("x", 12, F, 125_000, -100.0 + 19.5, 0, t.end)
    assert resolve(t, -100.0, [below]).decoded
    assert resolve(t, -100.0, [above]).reason is LossReason.INTER_SF_SWAMPED


def test_inter_sf_power_aggregates_over_emitters():
    t = frame(sf=7)
    one = [Interferer("a", 8, F, 125_000, -96.0, 0, t.end)]
    two = one + [Interferer("b", 8, F, 125_000, -96.0, 0, t.end)]
    assert resolve(t, -100.0, one).decoded
    assert resolve(t, -100.0, two).reason is LossReason.INTER_SF_SWAMPED


def test_co_sf_noise_floor():
    t = frame(sf=7)
    # a weak-but-captured interferer can still pull SINR below the demodulation floor
    out = resolve(t, -122.0, [Interferer("j", 7, F, 125_000, -128.0, 0, t.end)])
    assert out.decoded
    out = resolve(t, -122.0, [Interferer("j", 7, F, 125_000, -113.0, t.end - 10, t.end + 10)])
    assert not out.decoded


def test_spectral_overlap():
    assert spectral_overlap(F, 125_000, F, 125_000) == 1.0
    assert spectral_overlap(F, 125_000, F + 62_500, 125_000) == 0.5
    assert spectral_overlap(F, 125_000, F + 200_000, 125_000) == 0.0
    assert spectral_overlap(F, 125_000, F, 250_000) == 1.0
    with pytest.raises(ValueError):
        spectral_overlap(F, 0, F, 125_000)


def test_rejection_matrix_round_trip():
    rej = RejectionMatrix(capture_db=4.0)
    rej.inter_sf[(7, 9)] = 8.0
    back = RejectionMatrix.from_dict(rej.to_dict())
    assert back == rej


def test_sensitivity_must_improve():
    with pytest.raises(ValueError):
        SensitivityTable(rssi_125k={7: -130.0, 8: -120.0})


def test_frame_consistency_checks():
    p = TxParams(sf=7, payload_len=20)
    with pytest.raises(ValueError):
        PhyFrame(1, "n", F, p, 0, airtime(p) + 1, FrameKind.UPLINK_DATA)
    with pytest.raises(ValueError):
        PhyFrame(1, "n", F, p, 0, airtime(p), FrameKind.PREAMBLE_ONLY)


def test_merge_intervals():
    assert merge_intervals([(5, 7), (0, 2), (1, 3), (7, 9)]) == [(0, 3), (5, 9)]
    assert merge_intervals([]) == []
