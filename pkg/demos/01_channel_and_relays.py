"""AWGN hops, power normalization and what amplify-and-forward relays do to SNR.

Run: python demos/01_channel_and_relays.py
"""
import math

import torch

from hybrid_jscc.baselines import effective_snr_af
from hybrid_jscc.channel import (average_power, awgn_apply, awgn_capacity, make_generator,
                                 normalize_power, snr_db_to_sigma2)
from hybrid_jscc.deepjscc import af_gain

# A transmitter scales every block of k complex symbols to unit average power.
raw = torch.randn(4, 2 * 256) * 7.0
x = normalize_power(raw)
print("power per block after normalization:", average_power(x).tolist())

# SNR is 1 / sigma^2 per complex symbol.
for snr_db in (2.0, 10.0):
    s2 = snr_db_to_sigma2(snr_db)
    y = awgn_apply(torch.zeros(200_000, dtype=torch.complex128), s2, make_generator(0))
    print(f"{snr_db:4.1f} dB: sigma^2 = {s2:.4f}, measured {torch.mean(y.abs() ** 2):.4f}, "
          f"capacity {awgn_capacity(snr_db):.3f} bit/use")

# Each AF relay rescales its received signal back to unit power, so noise
# accumulates along the chain.  The closed form says by how much.
snrs = [2.0] + [10.0] * 4
print("\nhops  effective SNR (dB)  Monte Carlo (dB)")
for n in range(1, len(snrs) + 1):
    sigma2s = [snr_db_to_sigma2(s) for s in snrs[:n]]
    g = make_generator(1, n)
    x = torch.exp(2j * math.pi * torch.rand(200_000, generator=g, dtype=torch.float64))
    y, gain = awgn_apply(x, sigma2s[0], g), 1.0
    for prev, s2 in zip(sigma2s, sigma2s[1:]):
        gain *= af_gain(prev)
        y = awgn_apply(y * af_gain(prev), s2, g)
    measured = 1 / torch.mean(torch.abs(y / gain - x) ** 2).item()
    print(f"{n:4d}  {10 * math.log10(effective_snr_af(sigma2s)):18.3f}  "
          f"{10 * math.log10(measured):16.3f}")
