"""Hybrid analog/digital image transmission over multi-hop relay networks.

The first hop carries learned analog (DeepJSCC) symbols; the first relay
compresses its reconstruction with a hyperprior codec and the remaining
hops forward the bits digitally.  Fully analog (AF/PF), naive
quantization and fully digital schemes are included for comparison.
"""
from .channel import (LinkSpec, NoiseSpec, awgn_apply, awgn_capacity, hop_chain, make_generator,
                      normalize_power, pack_complex, snr_db_to_sigma2, unpack_complex)
from .compressor import CodecConfig, HyperpriorCodec
from .deepjscc import AnalogChain, JsccConfig, analog_multihop_run
from .hybrid import HybridJSC, jsc_run

__all__ = [
    "AnalogChain", "CodecConfig", "HybridJSC", "HyperpriorCodec", "JsccConfig", "LinkSpec",
    "NoiseSpec", "analog_multihop_run", "awgn_apply", "awgn_capacity", "hop_chain", "jsc_run",
    "make_generator", "normalize_power", "pack_complex", "snr_db_to_sigma2", "unpack_complex",
]
