"""Coded-modulation links: hard-decision BER, then packet error rate of the LDPC code.

Run: python demos/03_coded_links.py   (about a minute)
"""
import numpy as np

from hybrid_jscc.transport import SCHEME_N, SCHEME_S, measure_per, qam_demodulate_llr, qam_modulate

rng = np.random.default_rng(0)
bits = rng.integers(0, 2, 400_000, dtype=np.uint8)
for order in (4, 16):
    x = qam_modulate(bits, order)
    for snr_db in (2.0, 10.0):
        sigma2 = 10 ** (-snr_db / 10)
        y = x + rng.normal(scale=np.sqrt(sigma2 / 2), size=(x.size, 2)) @ np.array([1, 1j])
        ber = np.mean((qam_demodulate_llr(y, order, sigma2) < 0) != bits)
        print(f"{order:2d}-QAM uncoded at {snr_db:4.1f} dB: BER {ber:.2e}")

# Rate-1/2 LDPC (n = 1536) with belief propagation.  4-QAM serves the weak
# first hop, 16-QAM the strong relay hops.
print()
for scheme, snrs in ((SCHEME_S, (0.0, 1.0, 2.0)), (SCHEME_N, (6.0, 7.0, 8.0, 10.0))):
    for snr_db in snrs:
        per = measure_per(scheme, snr_db, 300, seed=1)
        print(f"{scheme.order:2d}-QAM rate {scheme.rate} at {snr_db:4.1f} dB: PER {per:.4f}")
