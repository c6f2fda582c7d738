"""The hybrid scheme: analog first hop, learned compression, digital core.

The source sends DeepJSCC symbols to the first relay, which reconstructs
the image, compresses it with the hyperprior codec and forwards the bits
losslessly over the remaining hops.  The destination decompresses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import nn

from . import entropy_coding as ec
from .channel import LinkSpec, awgn_apply, make_generator
from .compressor import CodecConfig, HyperpriorCodec, jsc_loss
from .deepjscc import AnalogChain, JsccConfig, JsccDecoder, JsccEncoder
from .transport import LinkReport, bits_to_bytes, bytes_to_bits, forward_bits, link_scheme


class HybridJSC(nn.Module):
    """``f_s``/``f_d`` for the first hop plus the codec used at the first relay and destination."""

    def __init__(self, jscc_cfg: JsccConfig, codec_cfg: CodecConfig):
        super().__init__()
        if (jscc_cfg.c_in, jscc_cfg.height, jscc_cfg.width) != (
                codec_cfg.c_in, codec_cfg.height, codec_cfg.width):
            raise ValueError("analog codec and compressor must agree on image dimensions")
        self.jscc_cfg, self.codec_cfg = jscc_cfg, codec_cfg
        self.encoder = JsccEncoder(jscc_cfg)
        self.decoder = JsccDecoder(jscc_cfg)
        self.codec = HyperpriorCodec(codec_cfg)

    def init_from(self, chain: AnalogChain):
        """Start ``f_s``/``f_d`` from a trained single-hop analog model."""
        self.encoder.load_state_dict(chain.encoder.state_dict())
        self.decoder.load_state_dict(chain.decoder.state_dict())
        return self

    def first_hop(self, images, sigma2: float, generator=None):
        """``S -> R_1``: returns the reconstruction at the first relay."""
        return self.decoder(awgn_apply(self.encoder(images), sigma2, generator))

    def forward(self, images, sigma2: float, generator=None, mode: str = "noise"):
        s_tilde = self.first_hop(images, sigma2, generator)
        out = self.codec(s_tilde, mode, generator)
        out["s_tilde"] = s_tilde
        return out

    def loss(self, images, sigma2: float, lam: float, generator=None):
        out = self(images, sigma2, generator)
        return jsc_loss(images, out["recon"], out["bpp"], lam), out


@dataclass
class JscResult:
    """Outcome of sending a batch through the hybrid chain."""

    images: torch.Tensor
    payload_bits: list[int] = field(default_factory=list)
    bits_z: list[int] = field(default_factory=list)
    bits_v: list[int] = field(default_factory=list)
    channel_uses: list[float] = field(default_factory=list)
    reports: list[list[LinkReport]] = field(default_factory=list)
    failures: int = 0


def fallback_image(shape, dtype=torch.float32) -> torch.Tensor:
    """Mid-gray image shown when a corrupted bitstream cannot be decoded."""
    return torch.full(shape, 0.5, dtype=dtype)


@torch.no_grad()
def jsc_run(images: torch.Tensor, hops: Sequence[LinkSpec], model: HybridJSC,
            seed: int = 0) -> JscResult:
    """Send ``images`` over ``hops``; the first hop is analog, the rest digital.

    One hop returns the first relay's reconstruction.  Otherwise every image
    is compressed once at the first relay and its container bytes are
    forwarded over each core hop; ``payload_bits`` counts ``b_v`` and
    ``b_z`` only.
    """
    if not hops:
        raise ValueError("empty hop chain")
    if hops[0].mode != "analog":
        raise ValueError("the first hop of the hybrid scheme is analog")
    s_tilde = model.first_hop(images, hops[0].sigma2, make_generator(seed))
    if len(hops) == 1:
        return JscResult(s_tilde)
    core = list(hops[1:])
    for h in core:
        link_scheme(h)
    outs, result = [], JscResult(s_tilde)
    for i, stream in enumerate(model.codec.compress(s_tilde)):
        bits = bytes_to_bits(stream.to_bytes())
        bits_out, reports = forward_bits(bits, core, seed=seed * 65537 + i)
        result.payload_bits.append(stream.payload_bits)
        result.bits_z.append(8 * len(stream.b_z))
        result.bits_v.append(8 * len(stream.b_v))
        result.channel_uses.append(stream.payload_bits / link_scheme(core[-1]).spectral_efficiency)
        result.reports.append(reports)
        try:
            outs.append(model.codec.decompress(bits_to_bytes(bits_out))[0])
        except (ec.DecodeError, ec.BitstreamError, ValueError, RuntimeError, OverflowError):
            result.failures += 1
            outs.append(fallback_image(images.shape[1:], images.dtype))
    result.images = torch.stack(outs)
    return result
