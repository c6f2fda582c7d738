"""Comparison schemes: naive quantization at the first relay, the fully
digital pipeline and the closed-form SNR of an amplify-and-forward chain."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch

from .channel import LinkSpec, awgn_apply, make_generator, pack_complex, unpack_complex
from .deepjscc import AnalogChain
from .hybrid import fallback_image
from .transport import SCHEME_S, bits_to_bytes, bytes_to_bits, forward_bits, link_scheme


# -- scalar quantization -------------------------------------------------------------

@dataclass(frozen=True)
class ScalarQuantizer:
    """Nearest-level quantizer with ``2^m`` sorted reconstruction levels."""

    levels: tuple

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        n = lv.size
        if n < 2 or n & (n - 1):
            raise ValueError("need a power-of-two number of levels, at least 2")
        if np.any(np.diff(lv) <= 0):
            raise ValueError("levels must be strictly increasing")

    @property
    def m(self) -> int:
        return len(self.levels).bit_length() - 1

    @property
    def codebook(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=np.float64)

    @property
    def thresholds(self) -> np.ndarray:
        lv = self.codebook
        return (lv[1:] + lv[:-1]) / 2.0

    def quantize(self, x) -> np.ndarray:
        """Indices of the nearest level."""
        return np.searchsorted(self.thresholds, np.asarray(x, dtype=np.float64)).astype(np.int64)

    def dequantize(self, idx) -> np.ndarray:
        return self.codebook[np.asarray(idx)]

    def __call__(self, x) -> np.ndarray:
        return self.dequantize(self.quantize(x))

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps({"levels": list(map(float, self.levels))}))

    @classmethod
    def load(cls, path) -> "ScalarQuantizer":
        return cls(tuple(json.loads(Path(path).read_text())["levels"]))


def uniform_quantizer(lo: float, hi: float, m: int) -> ScalarQuantizer:
    """Midrise uniform quantizer with ``2^m`` cells covering ``[lo, hi]``."""
    n = 2 ** m
    step = (hi - lo) / n
    return ScalarQuantizer(tuple(lo + step * (np.arange(n) + 0.5)))


def quantizer_mse(q: ScalarQuantizer, samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    return float(np.mean((x - q(x)) ** 2))


@dataclass(frozen=True)
class LloydResult:
    quantizer: ScalarQuantizer
    distortion: tuple
    iterations: int


def lloyd_design(samples, m: int, tol: float = 1e-9, max_iter: int = 5000,
                 return_history: bool = False):
    """Lloyd iteration for a ``2^m``-level MSE scalar quantizer.

    Cells are contiguous ranges of the sorted samples, so each iteration
    costs ``O(2^m log N)`` using prefix sums.  Stops once the relative drop
    in distortion is at most ``tol``.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n_levels = 2 ** int(m)
    if m < 1:
        raise ValueError("m must be at least 1")
    if np.unique(x).size < n_levels:
        raise ValueError(f"need at least {n_levels} distinct samples for {m}-bit design")
    s1 = np.concatenate([[0.0], np.cumsum(x)])
    s2 = np.concatenate([[0.0], np.cumsum(x * x)])
    levels = np.quantile(x, (np.arange(n_levels) + 0.5) / n_levels)
    levels = np.maximum.accumulate(levels)

    def cells(lv):
        edges = np.searchsorted(x, (lv[1:] + lv[:-1]) / 2.0)
        return np.concatenate([[0], edges, [x.size]])

    def distortion(lv, b):
        cnt = np.diff(b)
        a1, a2 = np.diff(s1[b]), np.diff(s2[b])
        return float((a2 - 2 * lv * a1 + cnt * lv * lv).sum() / x.size)

    history = []
    it = 0
    for it in range(1, max_iter + 1):
        b = cells(levels)
        cnt = np.diff(b)
        sums = np.diff(s1[b])
        new = np.where(cnt > 0, sums / np.maximum(cnt, 1), levels)
        # keep levels strictly increasing when cells are empty or samples tie
        for i in range(1, n_levels):
            if new[i] <= new[i - 1]:
                new[i] = np.nextafter(new[i - 1], np.inf)
        levels = new
        history.append(distortion(levels, cells(levels)))
        if len(history) > 1 and history[-2] - history[-1] <= tol * max(history[-2], 1e-300):
            break
    result = LloydResult(ScalarQuantizer(tuple(levels)), tuple(history), it)
    return result if return_history else result.quantizer


# -- naive quantization at the first relay ------------------------------------------

def _float_bits(real: np.ndarray) -> np.ndarray:
    raw = np.ascontiguousarray(real, dtype=">f4").view(np.uint8)
    return np.unpackbits(raw)


def _bits_float(bits: np.ndarray) -> np.ndarray:
    return np.packbits(bits).view(">f4").astype(np.float32)


def _index_bits(idx: np.ndarray, m: int) -> np.ndarray:
    shifts = np.arange(m - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def _bits_index(bits: np.ndarray, m: int) -> np.ndarray:
    weights = 1 << np.arange(m - 1, -1, -1)
    return bits.reshape(-1, m).astype(np.int64) @ weights


@torch.no_grad()
def naive_quant_run(images: torch.Tensor, hops: Sequence[LinkSpec], m: int, model: AnalogChain,
                    seed: int = 0, quantizer: ScalarQuantizer | None = None,
                    unit: str = "real"):
    """Quantize the first relay's received symbols and forward the indices.

    ``m = 32`` forwards the float32 components bit-exactly, giving the
    quantization-free bound.  Other ``m`` need a designed ``quantizer``.
    ``unit="real"`` spends ``m`` bits on each real component (``2 k m``
    bits per image); ``unit="complex"`` spends ``m`` bits per complex
    symbol, ``m/2`` per component.  Returns ``(images, bits_used)``.
    """
    if hops[0].mode != "analog":
        raise ValueError("the first hop must be analog")
    if unit not in ("real", "complex"):
        raise ValueError(f"unit must be 'real' or 'complex', got {unit!r}")
    per_comp = m if unit == "real" else m // 2
    if unit == "complex" and m % 2:
        raise ValueError("m must be even when counting bits per complex symbol")
    if m != 32 and (quantizer is None or quantizer.m != per_comp):
        raise ValueError(f"need a {per_comp}-bit quantizer for m={m}")
    y = awgn_apply(model.encoder(images), hops[0].sigma2, make_generator(seed))
    real = unpack_complex(y).cpu().numpy().astype(np.float32)
    core = list(hops[1:])
    out = []
    for i, row in enumerate(real):
        if m == 32:
            bits = _float_bits(row)
        else:
            bits = _index_bits(quantizer.quantize(row), per_comp)
        bits, _ = forward_bits(bits, core, seed=seed * 65537 + i)
        if m == 32:
            out.append(_bits_float(bits))
        else:
            out.append(quantizer.dequantize(_bits_index(bits, per_comp)).astype(np.float32))
    y_hat = pack_complex(torch.from_numpy(np.stack(out)))
    decoder = model.decoder
    bits_used = real.shape[1] * per_comp
    return decoder(y_hat.to(y.dtype)), bits_used


def received_components(images: torch.Tensor, model: AnalogChain, sigma2: float,
                        seed: int = 0) -> np.ndarray:
    """Real and imaginary parts of first-relay observations, pooled (quantizer design data)."""
    with torch.no_grad():
        y = awgn_apply(model.encoder(images), sigma2, make_generator(seed))
    return unpack_complex(y).cpu().numpy().ravel()


# -- amplify and forward -------------------------------------------------------------

def effective_snr_af(sigma2_list: Sequence[float]) -> float:
    """Single-hop equivalent SNR of an AF chain with per-hop noise variances ``sigma2_list``."""
    s = [float(v) for v in sigma2_list]
    if not s:
        raise ValueError("need at least one hop")
    total, growth = 0.0, 1.0
    for v in s:
        total += v * growth
        growth *= 1.0 + v
    return math.inf if total == 0 else 1.0 / total


# -- fully digital pipeline ----------------------------------------------------------

class ImageCodec(Protocol):
    def encode(self, image: torch.Tensor) -> bytes: ...

    def decode(self, data: bytes) -> torch.Tensor: ...


@torch.no_grad()
def digital_baseline_run(images: torch.Tensor, hops: Sequence[LinkSpec], codec: ImageCodec,
                         seed: int = 0, first_default=SCHEME_S):
    """Compress at the source and forward the bits digitally over every hop.

    Returns ``(images, reports)`` with one list of ``LinkReport`` per image.
    A stream that no longer decodes is replaced by a mid-gray image.
    """
    if any(h.mode == "analog" for h in hops):
        raise ValueError("the digital baseline needs coded or ideal hops")
    first = hops[0]
    if first.scheme is None:
        first = LinkSpec(first.snr_db, first.mode, first.k, first_default)
    chain = [first] + list(hops[1:])
    for h in chain:
        link_scheme(h)
    outs, reports = [], []
    for i, img in enumerate(images):
        bits = bytes_to_bits(codec.encode(img))
        bits, rep = forward_bits(bits, chain, seed=seed * 65537 + i)
        reports.append(rep)
        try:
            outs.append(codec.decode(bits_to_bytes(bits)).reshape(img.shape).to(img.dtype))
        except (ValueError, RuntimeError, OverflowError):
            outs.append(fallback_image(img.shape, img.dtype))
    return torch.stack(outs), reports
