"""Reference LoRa time-on-air, written separately from the package code.

Works in exact rationals and counts payload symbol blocks by search rather
than by a ceiling expression.
"""

from fractions import Fraction


def symbols_in_payload(sf, payload_len, code_rate, explicit_header, crc_on, ldro):
    bits = 8 * payload_len - 4 * sf + 28 + (16 if crc_on else 0) - (0 if explicit_header else 20)
    per_block = 4 * (sf - (2 if ldro else 0))
    blocks = 0
    while blocks * per_block < bits:
        blocks += 1
    return 8 + blocks * code_rate


def time_on_air_us(sf, bandwidth_hz, code_rate, preamble, explicit_header, crc_on, payload_len, ldro=None):
    if ldro is None:
        ldro = sf >= 11 and bandwidth_hz == 125_000
    t_sym = Fraction(2**sf, bandwidth_hz) * 1_000_000
    n = Fraction(preamble) + Fraction(17, 4)
    n += symbols_in_payload(sf, payload_len, code_rate, explicit_header, crc_on, ldro)
    total = n * t_sym
    assert total.denominator == 1, total
    return int(total)
