
from photonic_bss.signals import FIG3_BPSK_BITS, FIG3_OOK_BITS, BitPattern, gen_modulated


def two_sources(n_periods=64, carrier=1e9, baud=400e6, rate=8e9):
    s1 = gen_modulated(BitPattern(FIG3_BPSK_BITS, baud, "BPSK"), carrier, rate, n_periods)
    s2 = gen_modulated(BitPattern(FIG3_OOK_BITS, baud, "OOK"), carrier, rate, n_periods)
    return [s1.normalized(), s2.normalized()]
