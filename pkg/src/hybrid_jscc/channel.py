"""Complex symbols, power normalization and AWGN channels.

Conventions used throughout the package:

* A channel codeword is a complex tensor whose last dimension holds the
  ``k`` channel uses.  Leading dimensions are batch dimensions.
* Real network outputs are packed into complex symbols pairwise: entry
  ``2j`` is the real part and entry ``2j + 1`` the imaginary part of
  symbol ``j``.
* ``SNR = 1 / sigma2`` where ``sigma2`` is the noise variance per complex
  dimension (``sigma2 / 2`` per real component).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch


class DegenerateInputError(ValueError):
    """Raised when a zero vector is asked to be power normalized."""


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    sigma2: float

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "NoiseSpec":
        return cls(float(snr_db), snr_db_to_sigma2(snr_db))

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


def snr_db_to_sigma2(snr_db: float) -> float:
    return 10.0 ** (-float(snr_db) / 10.0)


def sigma2_to_snr_db(sigma2: float) -> float:
    return -10.0 * math.log10(sigma2)


def awgn_capacity(snr_db: float) -> float:
    """Shannon capacity of the complex AWGN channel in bits per channel use."""
    if snr_db == -math.inf:
        return 0.0
    return math.log2(1.0 + 10.0 ** (float(snr_db) / 10.0))


def pack_complex(raw: torch.Tensor) -> torch.Tensor:
    """Pack interleaved (real, imag) pairs along the last dim into complex symbols."""
    n = raw.shape[-1]
    if n == 0 or n % 2:
        raise ValueError(f"need a positive even number of real entries, got {n}")
    pairs = raw.reshape(*raw.shape[:-1], n // 2, 2)
    if pairs.dtype not in (torch.float32, torch.float64):
        pairs = pairs.to(torch.get_default_dtype())
    return torch.view_as_complex(pairs.contiguous())


def unpack_complex(symbols: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`pack_complex`."""
    real = torch.view_as_real(symbols)
    return real.reshape(*symbols.shape[:-1], symbols.shape[-1] * 2)


def average_power(x: torch.Tensor) -> torch.Tensor:
    """Per-vector average power ``(1/k) ||x||^2`` over the last dimension."""
    return (x.real**2 + x.imag**2).mean(dim=-1)


def normalize_power(raw: torch.Tensor, k: int | None = None) -> torch.Tensor:
    """Map ``2k`` real entries per vector to ``k`` unit-power complex symbols.

    ``raw`` may have any leading batch shape; everything after the batch
    dimension is flattened, so a ``(B, C, H, W)`` feature map is accepted
    directly.  Normalization is per vector and exact: every output satisfies
    ``(1/k) ||x||^2 == 1``.  Differentiable.
    """
    if raw.dim() > 2:
        raw = raw.flatten(start_dim=1)
    if k is not None and raw.shape[-1] != 2 * k:
        raise ValueError(f"expected {2 * k} real entries, got {raw.shape[-1]}")
    x = pack_complex(raw)
    power = average_power(x)
    if torch.any(power == 0):
        raise DegenerateInputError("cannot normalize an all-zero vector")
    return x / torch.sqrt(power).unsqueeze(-1)


def make_generator(seed: int, *keys: int) -> torch.Generator:
    """A torch generator for the sub-stream ``keys`` of ``seed``.

    Streams are split with :class:`numpy.random.SeedSequence` spawn keys, so
    ``make_generator(seed, epoch, image)`` is reproducible and independent of
    every other ``(epoch, image)`` pair.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    gen = torch.Generator()
    gen.manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))
    return gen


def complex_noise(shape: Sequence[int], sigma2: float, generator: torch.Generator | None = None,
                  dtype: torch.dtype = torch.complex64) -> torch.Tensor:
    """Circularly-symmetric complex Gaussian noise with variance ``sigma2``."""
    real_dtype = torch.float64 if dtype == torch.complex128 else torch.float32
    w = torch.randn(*shape, 2, generator=generator, dtype=real_dtype)
    return torch.view_as_complex(w * math.sqrt(sigma2 / 2.0))


def awgn_apply(x: torch.Tensor, sigma2: float | NoiseSpec,
               generator: torch.Generator | int | None = None) -> torch.Tensor:
    """``y = x + w`` with ``w ~ CN(0, sigma2 I)``.

    ``generator`` may be a seed, in which case the draw is deterministic.
    """
    if isinstance(sigma2, NoiseSpec):
        sigma2 = sigma2.sigma2
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if sigma2 == 0:
        return x.clone()
    if isinstance(generator, int):
        generator = make_generator(generator)
    return x + complex_noise(x.shape, sigma2, generator, dtype=x.dtype)


LINK_MODES = ("analog", "coded", "ideal")


@dataclass(frozen=True)
class LinkSpec:
    """One hop of the chain.

    ``mode`` is ``"analog"`` (continuous symbols), ``"coded"`` (LDPC + QAM
    with ``scheme``) or ``"ideal"`` (error-free bit pipe charged at the
    scheme's spectral efficiency).  ``k`` is the channel-use budget of the
    hop when it is fixed by the architecture.
    """

    snr_db: float
    mode: str = "analog"
    k: int | None = None
    scheme: object | None = None

    def __post_init__(self):
        if self.mode not in LINK_MODES:
            raise ValueError(f"unknown link mode {self.mode!r}")

    @property
    def sigma2(self) -> float:
        return snr_db_to_sigma2(self.snr_db)


HopChain = tuple  # tuple[LinkSpec, ...]


def hop_chain(n_hops: int, snr_s_db: float, snr_n_db: float, core_mode: str = "analog",
              first_mode: str = "analog", k: int | None = None, k_core: int | None = None,
              first_scheme=None, core_scheme=None) -> HopChain:
    """S -> R_1 at ``snr_s_db`` followed by ``n_hops - 1`` core hops at ``snr_n_db``."""
    if n_hops < 1:
        raise ValueError("a chain needs at least one hop")
    first = LinkSpec(snr_s_db, first_mode, k, first_scheme)
    core = LinkSpec(snr_n_db, core_mode, k_core if k_core is not None else k, core_scheme)
    return (first,) + (core,) * (n_hops - 1)
