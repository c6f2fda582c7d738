"""Learned analog codec and the fully analog multi-hop protocols.

The encoder maps a ``C x H x W`` image through two stride-2 stages to a
``c_out x H/4 x W/4`` feature map that is packed into ``k = c_out*H*W/32``
unit-power complex symbols.  Relays either amplify (AF) or run a small
residual network on the received symbols (PF).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .channel import (LinkSpec, awgn_apply, make_generator, normalize_power,
                      unpack_complex)
from .layers import Analysis, ResidualBlock, Synthesis


@dataclass(frozen=True)
class JsccConfig:
    c_in: int = 3
    height: int = 32
    width: int = 32
    c_feat: int = 256
    c_out: int = 24
    n_res: int = 2

    def __post_init__(self):
        if self.height % 4 or self.width % 4:
            raise ValueError("H and W must be divisible by 4")
        if (self.c_out * self.height * self.width) % 32:
            raise ValueError("c_out * H * W / 16 must be even to pack complex symbols")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // 4, self.width // 4

    @property
    def k(self) -> int:
        h, w = self.grid
        return self.c_out * h * w // 2

    def to_dict(self) -> dict:
        return asdict(self)


def symbols_to_grid(y: torch.Tensor, channels: int, grid: tuple[int, int]) -> torch.Tensor:
    """Complex ``(B, k)`` symbols back to a real ``(B, channels, h, w)`` feature map."""
    raw = unpack_complex(y)
    if raw.shape[-1] != channels * grid[0] * grid[1]:
        raise ValueError(f"{y.shape[-1]} symbols do not fill a {channels}x{grid[0]}x{grid[1]} grid")
    return raw.reshape(raw.shape[0], channels, *grid)


class JsccEncoder(nn.Module):
    def __init__(self, cfg: JsccConfig):
        super().__init__()
        self.cfg = cfg
        self.net = Analysis(cfg.c_in, cfg.c_feat, cfg.c_out, n_down=2, n_res=cfg.n_res)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if images.shape[1:] != (cfg.c_in, cfg.height, cfg.width):
            raise ValueError(f"expected images of shape (B, {cfg.c_in}, {cfg.height}, {cfg.width}),"
                             f" got {tuple(images.shape)}")
        return normalize_power(self.net(images), cfg.k)


class JsccDecoder(nn.Module):
    """Maps received symbols (``c_in`` channels on the H/4 grid) to an image in [0, 1]."""

    def __init__(self, cfg: JsccConfig, c_in: int | None = None):
        super().__init__()
        self.cfg = cfg
        self.c_in = cfg.c_out if c_in is None else c_in
        self.net = Synthesis(self.c_in, cfg.c_feat, cfg.c_in, n_up=2, n_res=cfg.n_res)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.net(symbols_to_grid(y, self.c_in, self.cfg.grid))


def jscc_encode(images: torch.Tensor, encoder: JsccEncoder) -> torch.Tensor:
    return encoder(images)


def jscc_decode(y: torch.Tensor, decoder: JsccDecoder) -> torch.Tensor:
    return decoder(y)


def af_gain(sigma2: float) -> float:
    return math.sqrt(1.0 / (1.0 + sigma2))


def af_scale(y: torch.Tensor, sigma2: float) -> torch.Tensor:
    """Amplify-and-forward: scale by ``sqrt(1/(1+sigma2))`` so the output has unit power on average."""
    return y * af_gain(sigma2)


class Redimension(nn.Module):
    """1x1 convolution on the H/4 grid changing ``k`` to ``k'`` at the first relay."""

    def __init__(self, c_in: int, c_out: int, grid: tuple[int, int]):
        super().__init__()
        self.c_in, self.c_out, self.grid = c_in, c_out, grid
        self.conv = nn.Conv2d(c_in, c_out, 1)

    def forward(self, y):
        return normalize_power(self.conv(symbols_to_grid(y, self.c_in, self.grid)))


class PFRelay(nn.Module):
    """Process-and-forward relay: residual network on the received feature grid."""

    mode = "PF"

    def __init__(self, c_in: int, c_out: int, grid: tuple[int, int], c_feat: int = 256,
                 n_res: int = 2):
        super().__init__()
        self.c_in, self.c_out, self.grid = c_in, c_out, grid
        self.net = nn.Sequential(
            nn.Conv2d(c_in, c_feat, 3, padding=1), nn.PReLU(c_feat),
            *[ResidualBlock(c_feat) for _ in range(n_res)],
            nn.Conv2d(c_feat, c_out, 3, padding=1),
        )

    @property
    def k_out(self) -> int:
        return self.c_out * self.grid[0] * self.grid[1] // 2

    def forward(self, y):
        return normalize_power(self.net(symbols_to_grid(y, self.c_in, self.grid)))


def pf_relay_apply(y: torch.Tensor, relay: nn.Module) -> torch.Tensor:
    if getattr(relay, "mode", None) != "PF":
        raise TypeError("pf_relay_apply needs a PF relay network")
    return relay(y)


class AnalogChain(nn.Module):
    """Encoder, relays and decoder of a fully analog ``n_hops`` chain.

    ``c_core`` sets the channel count (hence ``k'``) used on hops 2..n; when
    it differs from ``cfg.c_out`` the first relay redimensions with a 1x1
    convolution, otherwise it amplifies.  PF chains have one unshared relay
    network per relay from R_2 on.  AF destinations divide by the product of
    relay gains, which makes an AF chain equivalent to one hop at the
    effective SNR of the chain.
    """

    def __init__(self, cfg: JsccConfig, scheme: str = "AF", n_hops: int = 1,
                 c_core: int | None = None):
        super().__init__()
        scheme = scheme.upper()
        if scheme not in ("AF", "PF"):
            raise ValueError(f"unknown analog scheme {scheme!r}")
        self.cfg, self.scheme, self.n_hops = cfg, scheme, int(n_hops)
        self.c_core = cfg.c_out if c_core is None else int(c_core)
        self.encoder = JsccEncoder(cfg)
        dec_in = self.c_core if self.n_hops > 1 else cfg.c_out
        self.decoder = JsccDecoder(cfg, c_in=dec_in)
        self.redim = (Redimension(cfg.c_out, self.c_core, cfg.grid)
                      if self.n_hops > 1 and self.c_core != cfg.c_out else None)
        n_pf = max(self.n_hops - 2, 0) if scheme == "PF" else 0
        self.relays = nn.ModuleList(
            PFRelay(self.c_core, self.c_core, cfg.grid, cfg.c_feat, cfg.n_res) for _ in range(n_pf))

    @property
    def k(self) -> int:
        return self.cfg.k

    @property
    def k_core(self) -> int:
        h, w = self.cfg.grid
        return self.c_core * h * w // 2

    def transmit(self, images: torch.Tensor, sigma2s: Sequence[float],
                 generator: torch.Generator | None = None):
        """Run the chain; returns ``(y_d, transmitted)`` where ``y_d`` is gain-compensated for AF."""
        if len(sigma2s) != self.n_hops:
            raise ValueError(f"model built for {self.n_hops} hops, got {len(sigma2s)} noise levels")
        x = self.encoder(images)
        sent = [x]
        y = awgn_apply(x, sigma2s[0], generator)
        gain = 1.0
        for i in range(1, self.n_hops):
            prev = sigma2s[i - 1]
            if i == 1 and self.redim is not None:
                x = self.redim(y)
                gain = 1.0
            elif self.scheme == "PF" and i >= 2:
                x = self.relays[i - 2](y)
                gain = 1.0
            else:
                a = af_gain(prev)
                x = y * a
                gain *= a
            sent.append(x)
            y = awgn_apply(x, sigma2s[i], generator)
        return y / gain, sent

    def forward(self, images, sigma2s, generator=None):
        y, _ = self.transmit(images, sigma2s, generator)
        return self.decoder(y)

    def with_hops(self, n_hops: int) -> "AnalogChain":
        """The same AF model wired for another chain length (weights shared)."""
        if self.scheme != "AF":
            raise ValueError("only AF models can change chain length")
        if self.redim is not None and n_hops == 1:
            raise ValueError("a redimensioning AF model cannot run a single hop")
        clone = AnalogChain.__new__(AnalogChain)
        nn.Module.__init__(clone)
        clone.cfg, clone.scheme, clone.n_hops, clone.c_core = self.cfg, "AF", int(n_hops), self.c_core
        clone.encoder, clone.decoder, clone.redim = self.encoder, self.decoder, self.redim
        clone.relays = nn.ModuleList()
        return clone


def loss_af(images: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every pixel of the batch."""
    if images.shape != recon.shape:
        raise ValueError(f"shape mismatch {tuple(images.shape)} vs {tuple(recon.shape)}")
    return F.mse_loss(recon, images)


@torch.no_grad()
def analog_multihop_run(images: torch.Tensor, hops: Sequence[LinkSpec], model: AnalogChain,
                        seed: int = 0, scheme: str | None = None) -> torch.Tensor:
    """Send ``images`` over an all-analog chain with a trained :class:`AnalogChain`.

    AF models accept any chain length (the amplification has no parameters
    beyond the first relay); PF models only the length they were trained for.
    """
    if any(h.mode != "analog" for h in hops):
        raise ValueError("analog_multihop_run needs an all-analog chain")
    if scheme is not None and scheme.upper() != model.scheme:
        raise ValueError(f"model is {model.scheme}, asked for {scheme}")
    sigma2s = [h.sigma2 for h in hops]
    if model.scheme == "AF" and len(hops) != model.n_hops:
        model = model.with_hops(len(hops))
    return model(images, sigma2s, make_generator(seed))

