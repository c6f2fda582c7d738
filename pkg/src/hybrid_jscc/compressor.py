"""Hyperprior image compressor used at the first relay and the destination.

``g_a`` maps an image to the latent ``z`` (``C_z x H/4 x W/4``), ``h_a`` maps
``z`` to the hyper-latent ``v`` (``C_v x H/16 x W/16``).  ``v`` is coded with
a learned per-channel factorized prior; ``h_s`` turns the quantized ``v``
into the mean and scale of a Gaussian for every element of ``z``.  ``g_s``
reconstructs the image from the quantized ``z``.

During training quantization is replaced by additive ``U(-1/2, 1/2)`` noise
and the rate is the negative log-likelihood of the noisy latents.  At
deployment the latents are rounded and range coded.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import entropy_coding as ec
from .layers import Analysis, Synthesis

SIGMA_MIN = 1e-6
LIKELIHOOD_MIN = 2.0 ** -16


# -- quantization and likelihoods ----------------------------------------------------

def quantize(t: torch.Tensor, mode: str = "round", generator: torch.Generator | None = None):
    """``"noise"`` adds i.i.d. ``U(-1/2, 1/2)``; ``"round"`` rounds half to even."""
    if mode == "round":
        return torch.round(t)
    if mode == "noise":
        u = torch.rand(t.shape, generator=generator, dtype=t.dtype, device=t.device)
        # shrink so |u| < 1/2 strictly
        return t + (u - 0.5) * (1.0 - 2.0 ** -20)
    raise ValueError(f"unknown quantization mode {mode!r}")


def _lower_bound(x: torch.Tensor, bound: float) -> torch.Tensor:
    return x.clamp_min(bound) if bound > 0 else x


def gaussian_uniform_likelihood(z: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor,
                                p_min: float = LIKELIHOOD_MIN) -> torch.Tensor:
    """Mass of ``N(mu, sigma^2)`` on ``[z - 1/2, z + 1/2]``, floored at ``p_min``."""
    sigma = sigma.clamp_min(SIGMA_MIN)
    v = torch.abs(z - mu)
    # both terms in the lower tail of the normal CDF for accuracy
    upper = torch.special.ndtr((0.5 - v) / sigma)
    lower = torch.special.ndtr((-0.5 - v) / sigma)
    return _lower_bound(upper - lower, p_min)


class FactorizedPrior(nn.Module):
    """Per-channel learned univariate density convolved with ``U(-1/2, 1/2)``.

    The cumulative is ``sigmoid(f_K(...f_1(x)))`` with ``f_i(x) = g(H_i x + b_i)``,
    ``H_i = softplus(raw_i) > 0`` and ``g(x) = x + tanh(a_i) * tanh(x)``, which
    is monotone because ``tanh(a_i) > -1``.
    """

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 10.0,
                 tail_mass: float = 2.0 ** -20, max_range: int = 1024):
        super().__init__()
        self.channels = channels
        self.tail_mass = tail_mass
        self.max_range = max_range
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(nn.Parameter(torch.rand(channels, dims[i + 1], 1) - 0.5))
            if i < len(dims) - 2:
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))
        # coding tables, filled by update_tables()
        self.register_buffer("_cdf", torch.zeros(channels, 3, dtype=torch.int64))
        self.register_buffer("_offset", torch.zeros(channels, dtype=torch.int64))
        self.register_buffer("_length", torch.zeros(channels, dtype=torch.int64))
        self._tables: list[ec.CdfTable] | None = None

    def logits_cumulative(self, x: torch.Tensor) -> torch.Tensor:
        """``x`` of shape ``(C, 1, N)``; returns logits of the CDF, same shape."""
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            x = torch.matmul(F.softplus(m), x) + b
            if i < len(self.factors):
                x = x + torch.tanh(self.factors[i]) * torch.tanh(x)
        return x

    def _per_channel(self, v: torch.Tensor) -> torch.Tensor:
        # (B, C, h, w) -> (C, 1, B*h*w)
        return v.transpose(0, 1).reshape(self.channels, 1, -1)

    def likelihood(self, v: torch.Tensor, p_min: float = LIKELIHOOD_MIN) -> torch.Tensor:
        flat = self._per_channel(v)
        upper = self.logits_cumulative(flat + 0.5)
        lower = self.logits_cumulative(flat - 0.5)
        # evaluate the difference in whichever tail of the sigmoid is more accurate
        sign = -torch.sign(upper + lower).detach()
        sign = torch.where(sign == 0, torch.ones_like(sign), sign)
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        moved = v.transpose(0, 1)
        p = p.reshape(moved.shape).transpose(0, 1)
        return _lower_bound(p, p_min)

    def cdf(self, x: torch.Tensor) -> torch.Tensor:
        """CDF of the noisy density at points ``x`` of shape ``(C, N)``."""
        return torch.sigmoid(self.logits_cumulative(x.unsqueeze(1))).squeeze(1)

    def update_tables(self):
        """Build and store the coding tables; call once after training."""
        self._set_tables(self.compute_tables())

    @torch.no_grad()
    def compute_tables(self) -> list[ec.CdfTable]:
        """Per-channel tables over the integer range holding all but ``tail_mass`` of the mass."""
        grid = torch.arange(-self.max_range, self.max_range + 1, dtype=torch.float64)
        dev_dtype = self.matrices[0].dtype
        x = grid.to(dev_dtype).expand(self.channels, -1)
        upper = self.logits_cumulative((x + 0.5).unsqueeze(1)).squeeze(1).double()
        lower = self.logits_cumulative((x - 0.5).unsqueeze(1)).squeeze(1).double()
        sign = -torch.sign(upper + lower)
        sign[sign == 0] = 1
        pmf = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower)).numpy()
        below = torch.sigmoid(lower[:, 0]).numpy()          # mass under -max_range - 1/2
        tables = []
        half_tail = self.tail_mass / 2
        for c in range(self.channels):
            cum = below[c] + np.cumsum(pmf[c])
            lo = int(np.searchsorted(cum, half_tail))
            hi = int(np.searchsorted(cum, 1.0 - half_tail))
            hi = min(max(hi, lo), pmf.shape[1] - 1)
            mass = pmf[c, lo:hi + 1]
            escape = max(1.0 - float(mass.sum()), 0.0)
            tables.append(ec.table_from_pmf(mass, lo - self.max_range, escape))
        return tables

    def _set_tables(self, tables: list[ec.CdfTable]):
        width = max(len(t.cdf) for t in tables)
        cdf = torch.zeros(self.channels, width, dtype=torch.int64)
        for c, t in enumerate(tables):
            cdf[c, :len(t.cdf)] = torch.tensor(t.cdf)
        self._cdf = cdf
        self._offset = torch.tensor([t.offset for t in tables], dtype=torch.int64)
        self._length = torch.tensor([t.length for t in tables], dtype=torch.int64)
        self._tables = tables

    def tables(self) -> list[ec.CdfTable]:
        if self._tables is None:
            if int(self._length.sum()) == 0:
                raise RuntimeError("coding tables not built; call update_tables() after training")
            self._tables = [
                ec.CdfTable(tuple(int(x) for x in self._cdf[c, :int(self._length[c]) + 2]),
                            int(self._offset[c]))
                for c in range(self.channels)
            ]
        return self._tables

    def _load_from_state_dict(self, state_dict, prefix, *args, **kwargs):
        # buffers may change size after update_tables()
        for name in ("_cdf", "_offset", "_length"):
            key = prefix + name
            if key in state_dict:
                setattr(self, name, torch.empty_like(state_dict[key]))
        self._tables = None
        super()._load_from_state_dict(state_dict, prefix, *args, **kwargs)


def factorized_likelihood(v: torch.Tensor, prior: FactorizedPrior,
                          p_min: float = LIKELIHOOD_MIN) -> torch.Tensor:
    return prior.likelihood(v, p_min)


def build_cdf_factorized(prior: FactorizedPrior, channel: int) -> ec.CdfTable:
    """Coding table of one channel of ``prior`` (computed fresh, not the stored one)."""
    if not 0 <= channel < prior.channels:
        raise IndexError(f"channel {channel} out of range for {prior.channels} channels")
    return prior.compute_tables()[channel]


def rate_bpp(p_z: torch.Tensor, p_v: torch.Tensor, height: int, width: int):
    """Bits per pixel ``(I, I_z, I_v)`` from element likelihoods.

    Batched likelihoods (4-D) are averaged over the batch.
    """
    for p in (p_z, p_v):
        if torch.any(p <= 0):
            raise ValueError("likelihoods must be positive")
    n_z = p_z.shape[0] if p_z.dim() == 4 else 1
    n_v = p_v.shape[0] if p_v.dim() == 4 else 1
    i_z = -torch.log2(p_z).sum() / (n_z * height * width)
    i_v = -torch.log2(p_v).sum() / (n_v * height * width)
    return i_z + i_v, i_z, i_v


def jsc_loss(images: torch.Tensor, recon: torch.Tensor, bpp: torch.Tensor, lam: float):
    """``lam * MSE + bpp`` with the MSE taken per element on the [0, 1] pixel scale."""
    if images.shape != recon.shape:
        raise ValueError(f"shape mismatch {tuple(images.shape)} vs {tuple(recon.shape)}")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return lam * F.mse_loss(recon, images) + bpp


# -- the model -----------------------------------------------------------------------

@dataclass(frozen=True)
class CodecConfig:
    c_in: int = 3
    height: int = 32
    width: int = 32
    c_feat: int = 256
    c_z: int = 256
    c_v: int = 192
    c_hyper: int = 192
    n_res: int = 2

    def __post_init__(self):
        if self.height % 16 or self.width % 16:
            raise ValueError("H and W must be divisible by 16")

    def to_dict(self) -> dict:
        return asdict(self)


class HyperpriorCodec(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.g_a = Analysis(cfg.c_in, cfg.c_feat, cfg.c_z, n_down=2, n_res=cfg.n_res)
        self.h_a = Analysis(cfg.c_z, cfg.c_hyper, cfg.c_v, n_down=2, n_res=0)
        self.h_s = Synthesis(cfg.c_v, cfg.c_hyper, 2 * cfg.c_z, n_up=2, n_res=0, head=None)
        self.g_s = Synthesis(cfg.c_z, cfg.c_feat, cfg.c_in, n_up=2, n_res=cfg.n_res)
        self.prior = FactorizedPrior(cfg.c_v)

    def _check(self, images):
        cfg = self.cfg
        if images.dim() != 4 or images.shape[1:] != (cfg.c_in, cfg.height, cfg.width):
            raise ValueError(f"expected (B, {cfg.c_in}, {cfg.height}, {cfg.width}) images,"
                             f" got {tuple(images.shape)}")

    def analysis(self, images):
        self._check(images)
        return self.g_a(images)

    def hyper_analysis(self, z):
        if z.dim() != 4 or z.shape[1] != self.cfg.c_z:
            raise ValueError(f"expected {self.cfg.c_z} latent channels, got {tuple(z.shape)}")
        return self.h_a(z)

    def hyper_synthesis(self, v_q):
        out = self.h_s(v_q)
        mu, raw = out.chunk(2, dim=1)
        return mu, F.softplus(raw).clamp_min(SIGMA_MIN)

    def forward(self, images, mode: str = "noise", generator=None):
        z = self.analysis(images)
        v = self.hyper_analysis(z)
        v_q = quantize(v, mode, generator)
        mu, sigma = self.hyper_synthesis(v_q)
        z_q = quantize(z, mode, generator)
        p_z = gaussian_uniform_likelihood(z_q, mu, sigma)
        p_v = self.prior.likelihood(v_q)
        bpp, bpp_z, bpp_v = rate_bpp(p_z, p_v, self.cfg.height, self.cfg.width)
        recon = self.g_s(z_q)
        return {"recon": recon, "z": z, "v": v, "p_z": p_z, "p_v": p_v,
                "bpp": bpp, "bpp_z": bpp_z, "bpp_v": bpp_v}

    def update(self):
        self.prior.update_tables()

    # -- deployment --------------------------------------------------------------

    @torch.no_grad()
    def compress(self, images: torch.Tensor) -> list[ec.Bitstream]:
        """Range code each image; ``v`` first with the factorized tables, then ``z``."""
        cfg = self.cfg
        z = self.analysis(images)
        v = self.hyper_analysis(z)
        tables_v = self.prior.tables()
        out = []
        for i in range(images.shape[0]):
            v_hat = torch.round(v[i:i + 1])
            z_hat = torch.round(z[i:i + 1])
            sym_v = v_hat[0].to(torch.int64)
            per_elem_v = [tables_v[c] for c in range(cfg.c_v) for _ in range(sym_v[0].numel())]
            b_v = ec.range_encode(sym_v.reshape(-1).tolist(), per_elem_v)
            mu, sigma = self.hyper_synthesis(v_hat)
            centers, tables_z = ec.build_cdf_gaussian(mu.double().numpy(), sigma.double().numpy())
            sym_z = z_hat.to(torch.int64).reshape(-1).numpy() - centers
            b_z = ec.range_encode(sym_z.tolist(), tables_z)
            out.append(ec.Bitstream(cfg.height, cfg.width, cfg.c_z, cfg.c_v, b_v, b_z))
        return out

    @torch.no_grad()
    def decode_latents(self, stream: ec.Bitstream | bytes):
        cfg = self.cfg
        if not isinstance(stream, ec.Bitstream):
            stream = ec.unpack_bitstream(stream)
        dims = (stream.height, stream.width, stream.c_z, stream.c_v)
        if dims != (cfg.height, cfg.width, cfg.c_z, cfg.c_v):
            raise ec.BitstreamError(f"bitstream dims {dims} do not match the model")
        hv, wv = cfg.height // 16, cfg.width // 16
        tables_v = self.prior.tables()
        per_elem_v = [tables_v[c] for c in range(cfg.c_v) for _ in range(hv * wv)]
        sym_v = ec.range_decode(stream.b_v, per_elem_v)
        dtype = next(self.parameters()).dtype
        v_hat = torch.tensor(sym_v, dtype=dtype).reshape(1, cfg.c_v, hv, wv)
        mu, sigma = self.hyper_synthesis(v_hat)
        centers, tables_z = ec.build_cdf_gaussian(mu.double().numpy(), sigma.double().numpy())
        sym_z = np.asarray(ec.range_decode(stream.b_z, tables_z), dtype=np.int64) + centers
        z_hat = torch.tensor(sym_z, dtype=dtype).reshape(1, cfg.c_z, cfg.height // 4, cfg.width // 4)
        return z_hat, v_hat

    @torch.no_grad()
    def decompress(self, stream: ec.Bitstream | bytes) -> torch.Tensor:
        z_hat, _ = self.decode_latents(stream)
        return self.g_s(z_hat)

    @torch.no_grad()
    def model_bits(self, images: torch.Tensor) -> torch.Tensor:
        """Per-image code length estimate ``-sum log2 p`` of the rounded latents."""
        z = self.analysis(images)
        v = self.hyper_analysis(z)
        bits = []
        for i in range(images.shape[0]):
            v_hat = torch.round(v[i:i + 1])
            mu, sigma = self.hyper_synthesis(v_hat)
            p_z = gaussian_uniform_likelihood(torch.round(z[i:i + 1]), mu, sigma)
            p_v = self.prior.likelihood(v_hat)
            bits.append(-(torch.log2(p_z).sum() + torch.log2(p_v).sum()))
        return torch.stack(bits)


def analysis(images, codec: HyperpriorCodec):
    return codec.analysis(images)


def hyper_analysis(z, codec: HyperpriorCodec):
    return codec.hyper_analysis(z)


def hyper_synthesis(v_q, codec: HyperpriorCodec):
    return codec.hyper_synthesis(v_q)


def compress(images, codec: HyperpriorCodec) -> list[ec.Bitstream]:
    return codec.compress(images)


def decompress(stream, codec: HyperpriorCodec) -> torch.Tensor:
    return codec.decompress(stream)


class HyperpriorImageCodec:
    """Adapter exposing a :class:`HyperpriorCodec` as a bytes-in/bytes-out image codec."""

    def __init__(self, codec: HyperpriorCodec):
        self.codec = codec.eval()

    def encode(self, image: torch.Tensor) -> bytes:
        return self.codec.compress(image.unsqueeze(0) if image.dim() == 3 else image)[0].to_bytes()

    def decode(self, data: bytes) -> torch.Tensor:
        return self.codec.decompress(data)[0]
