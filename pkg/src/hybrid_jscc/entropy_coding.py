"""Range coding of integer latents against 16-bit quantized CDF tables.

The coder keeps a 48-bit low/range window with carry propagation into the
already written bytes and renormalizes a byte at a time, so all arithmetic
is on Python integers and streams are bit-identical on every platform.

Each table codes the symbols ``offset .. offset + length - 1`` plus one
trailing escape symbol.  Values outside the table range are sent as the
escape symbol followed by a sign bit and an order-0 Exp-Golomb code of the
overflow, both as equiprobable bits.

Every stream ends with a 16-bit checksum of the decoded symbols so that a
decode against the wrong tables raises :class:`DecodeError` instead of
returning garbage.
"""
from __future__ import annotations

import bisect
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

PRECISION = 16
TOTAL = 1 << PRECISION

_STATE_BITS = 48
_RANGE_TOP = 1 << _STATE_BITS
_RANGE_BOT = 1 << (_STATE_BITS - 8)
_LOW_MASK = _RANGE_TOP - 1
_SHIFT = _STATE_BITS - 8
_BYTE_MASK_BELOW = (1 << _SHIFT) - 1


class DecodeError(ValueError):
    """The stream does not match the tables it is being decoded with."""


class BitstreamError(ValueError):
    """Malformed or truncated bitstream container."""


@dataclass(frozen=True, eq=False)
class CdfTable:
    """Quantized cumulative frequencies for one coding context.

    ``cdf`` has ``length + 2`` entries: ``cdf[i]`` is the cumulative count
    before symbol ``offset + i`` and ``cdf[length]`` the count before the
    escape symbol; ``cdf[-1] == 2**16``.
    """

    cdf: tuple
    offset: int
    length: int = field(init=False)

    def __post_init__(self):
        cdf = self.cdf
        object.__setattr__(self, "length", len(cdf) - 2)
        if self.length < 1:
            raise ValueError("table needs at least one regular symbol")
        if cdf[0] != 0 or cdf[-1] != TOTAL:
            raise ValueError("cdf must start at 0 and end at 2**16")
        if any(b <= a for a, b in zip(cdf, cdf[1:])):
            raise ValueError("cdf must be strictly increasing")

    @property
    def escape(self) -> int:
        return self.length

    def frequencies(self) -> np.ndarray:
        return np.diff(np.asarray(self.cdf, dtype=np.int64))

    def probabilities(self) -> np.ndarray:
        return self.frequencies() / TOTAL

    def index(self, symbol: int) -> int:
        """Bin index of ``symbol``; out-of-range values map to the escape bin."""
        i = int(symbol) - self.offset
        return i if 0 <= i < self.length else self.length

    def codelength(self, symbol: int) -> float:
        """Ideal code length in bits, escape payload included."""
        i = int(symbol) - self.offset
        freqs = self.cdf
        if 0 <= i < self.length:
            return PRECISION - math.log2(freqs[i + 1] - freqs[i])
        esc = freqs[-1] - freqs[-2]
        return PRECISION - math.log2(esc) + 1 + _exp_golomb_bits(_overflow(self, int(symbol))[1])


def quantize_pmf(pmf: np.ndarray, precision: int = PRECISION) -> np.ndarray:
    """Integer frequencies summing to ``2**precision`` with every bin >= 1.

    Largest-remainder apportionment keeps each bin within one count of its
    exact share; the counts needed to lift empty bins to one are taken from
    the largest bins, at most one count from each.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or pmf.size == 0:
        raise ValueError("pmf must be a non-empty vector")
    total = 1 << precision
    if pmf.size > total:
        raise ValueError("more bins than the precision can represent")
    pmf = np.clip(pmf, 0.0, None)
    s = pmf.sum()
    if not s > 0:
        pmf = np.ones_like(pmf)
        s = pmf.size
    raw = pmf / s * total
    freq = np.floor(raw).astype(np.int64)
    short = total - int(freq.sum())
    if short:
        order = np.argsort(-(raw - freq), kind="stable")
        freq[order[:short]] += 1
    deficit = int(np.count_nonzero(freq == 0))
    while deficit:
        freq[freq == 0] = 1
        donors = np.argsort(-freq, kind="stable")
        donors = donors[freq[donors] > 1][:deficit]
        freq[donors] -= 1
        deficit -= donors.size
    return freq


def table_from_pmf(pmf: np.ndarray, offset: int, escape_mass: float = 0.0) -> CdfTable:
    """Build a :class:`CdfTable` from regular-symbol masses plus escape mass."""
    probs = np.append(np.asarray(pmf, dtype=np.float64), max(float(escape_mass), 0.0))
    freq = quantize_pmf(probs)
    cdf = np.concatenate([[0], np.cumsum(freq)])
    return CdfTable(tuple(int(c) for c in cdf), int(offset))


# -- Gaussian tables -----------------------------------------------------------------

MEAN_STEPS = 64            # mean quantized to 1/64
SCALE_STEPS_PER_OCTAVE = 16
SCALE_MIN = 2.0 ** -20
SCALE_MAX = 2.0 ** 10
TAIL_SIGMAS = float(-ndtri(2.0 ** -24))
MAX_HALF_WIDTH = 1024


def _gaussian_keys(mu: np.ndarray, sigma: np.ndarray):
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = np.asarray(sigma, dtype=np.float64).ravel()
    mu_q = np.rint(mu * MEAN_STEPS)
    centers = np.rint(mu_q / MEAN_STEPS)
    frac = (mu_q - centers * MEAN_STEPS).astype(np.int64)
    log_s = np.log2(np.clip(sigma, SCALE_MIN, SCALE_MAX))
    scale_idx = np.rint(log_s * SCALE_STEPS_PER_OCTAVE).astype(np.int64)
    return centers.astype(np.int64), frac, scale_idx


_GAUSS_CACHE: dict[tuple[int, int], CdfTable] = {}


def _gaussian_table(frac: int, scale_idx: int) -> CdfTable:
    key = (frac, scale_idx)
    table = _GAUSS_CACHE.get(key)
    if table is None:
        shift = frac / MEAN_STEPS
        sigma = 2.0 ** (scale_idx / SCALE_STEPS_PER_OCTAVE)
        half = int(min(MAX_HALF_WIDTH, math.ceil(TAIL_SIGMAS * sigma) + 1))
        n = np.arange(-half, half + 1, dtype=np.float64) - shift
        # difference in the lower tail for precision
        upper = ndtr((0.5 - np.abs(n)) / sigma)
        lower = ndtr((-0.5 - np.abs(n)) / sigma)
        pmf = upper - lower
        tail = ndtr((-half - 0.5 - shift) / sigma) + ndtr((-half - 0.5 + shift) / sigma)
        table = table_from_pmf(pmf, -half, tail)
        _GAUSS_CACHE[key] = table
    return table


def build_cdf_gaussian(mu, sigma):
    """Per-element tables for a discretized Gaussian ``N(mu, sigma^2) * U(-1/2, 1/2)``.

    Means are quantized to 1/64 and scales to 1/16 octave before the table is
    built, so encoder and decoder derive identical tables from parameters
    that agree to that resolution.  Returns ``(centers, tables)``: symbols
    must be coded relative to ``centers`` (the rounded quantized mean).
    """
    if np.size(mu) == 0:
        raise ValueError("empty parameter range")
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")
    centers, frac, scale_idx = _gaussian_keys(mu, sigma)
    keys = np.stack([frac, scale_idx], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    built = [_gaussian_table(int(f), int(s)) for f, s in uniq]
    tables = [built[i] for i in inverse.ravel()]
    return centers, tables


# -- Exp-Golomb escape ---------------------------------------------------------------

def _overflow(table: CdfTable, symbol: int) -> tuple[int, int]:
    if symbol < table.offset:
        return 0, table.offset - 1 - symbol
    return 1, symbol - (table.offset + table.length)


def _exp_golomb_bits(value: int) -> int:
    return 2 * (value + 1).bit_length() - 1


# -- the coder -----------------------------------------------------------------------

class RangeEncoder:
    """Byte-oriented range encoder (single use, not thread safe)."""

    def __init__(self):
        self._out = bytearray()
        self._low = 0
        self._range = _RANGE_TOP
        self._crc = 0
        self._closed = False

    def _carry(self):
        out = self._out
        i = len(out) - 1
        while out[i] == 0xFF:
            out[i] = 0
            i -= 1
        out[i] += 1

    def encode_freq(self, start: int, freq: int, total_bits: int = PRECISION):
        r = self._range >> total_bits
        low = self._low + r * start
        rng = r * freq
        if low >= _RANGE_TOP:
            low -= _RANGE_TOP
            self._carry()
        while rng < _RANGE_BOT:
            self._out.append(low >> _SHIFT)
            low = (low & _BYTE_MASK_BELOW) << 8
            rng <<= 8
        self._low = low
        self._range = rng

    def encode_bits(self, value: int, nbits: int):
        while nbits > 0:
            take = min(nbits, PRECISION)
            nbits -= take
            self.encode_freq((value >> nbits) & ((1 << take) - 1), 1, take)

    def encode(self, symbol: int, table: CdfTable):
        cdf = table.cdf
        i = symbol - table.offset
        if 0 <= i < table.length:
            self.encode_freq(cdf[i], cdf[i + 1] - cdf[i])
            return
        esc = table.length
        self.encode_freq(cdf[esc], cdf[esc + 1] - cdf[esc])
        sign, value = _overflow(table, symbol)
        self.encode_bits(sign, 1)
        v1 = value + 1
        n = v1.bit_length() - 1
        # unary prefix bit by bit, mirroring how the decoder reads it
        for _ in range(n):
            self.encode_bits(0, 1)
        self.encode_bits(1, 1)
        self.encode_bits(v1 & ((1 << n) - 1), n)

    def encode_sequence(self, symbols: Sequence[int], tables: Sequence[CdfTable]):
        if len(symbols) != len(tables):
            raise ValueError("need one table per symbol")
        for s, t in zip(symbols, tables):
            self.encode(int(s), t)
        self._crc = zlib.crc32(np.asarray(symbols, dtype="<i8").tobytes(), self._crc)

    def finish(self) -> bytes:
        if self._closed:
            raise RuntimeError("encoder already finished")
        self.encode_bits(self._crc & 0xFFFF, 16)
        # shortest value in [low, low + range) that ends on a byte boundary
        step = 1 << _SHIFT
        value = -(-self._low // step) * step
        if value >= _RANGE_TOP:
            self._carry()
            value -= _RANGE_TOP
        self._out.append(value >> _SHIFT)
        self._closed = True
        out = bytes(self._out)
        return out.rstrip(b"\x00")


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._range = _RANGE_TOP
        value = 0
        for _ in range(_STATE_BITS // 8):
            value = (value << 8) | self._next()
        self._value = value
        self._crc = 0

    def _next(self) -> int:
        pos = self._pos
        self._pos += 1
        return self._data[pos] if pos < len(self._data) else 0

    def _target(self, total_bits: int) -> int:
        r = self._range >> total_bits
        target = self._value // r
        if target >> total_bits:
            raise DecodeError("range decoder desynchronized")
        return target

    def _consume(self, start: int, freq: int, total_bits: int = PRECISION):
        r = self._range >> total_bits
        self._value -= r * start
        rng = r * freq
        value = self._value
        while rng < _RANGE_BOT:
            value = (value << 8) | self._next()
            rng <<= 8
        self._value = value
        self._range = rng

    def decode_bits(self, nbits: int) -> int:
        out = 0
        while nbits > 0:
            take = min(nbits, PRECISION)
            nbits -= take
            v = self._target(take)
            self._consume(v, 1, take)
            out = (out << take) | v
        return out

    def decode(self, table: CdfTable) -> int:
        cdf = table.cdf
        target = self._target(PRECISION)
        i = bisect.bisect_right(cdf, target) - 1
        self._consume(cdf[i], cdf[i + 1] - cdf[i])
        if i < table.length:
            return table.offset + i
        sign = self.decode_bits(1)
        n = 0
        while self.decode_bits(1) == 0:
            n += 1
            if n > 64:
                raise DecodeError("runaway escape code")
        value = ((1 << n) | self.decode_bits(n)) - 1
        if sign:
            return table.offset + table.length + value
        return table.offset - 1 - value

    def decode_sequence(self, tables: Sequence[CdfTable]) -> list[int]:
        out = [self.decode(t) for t in tables]
        self._crc = zlib.crc32(np.asarray(out, dtype="<i8").tobytes(), self._crc)
        return out

    def finish(self):
        if self.decode_bits(16) != self._crc & 0xFFFF:
            raise DecodeError("checksum mismatch: stream decoded with the wrong tables")


def range_encode(symbols: Sequence[int], tables: Sequence[CdfTable]) -> bytes:
    enc = RangeEncoder()
    enc.encode_sequence(symbols, tables)
    return enc.finish()


def range_decode(data: bytes, tables: Sequence[CdfTable], count: int | None = None) -> list[int]:
    if count is not None and count != len(tables):
        raise ValueError("need one table per symbol")
    dec = RangeDecoder(data)
    out = dec.decode_sequence(tables)
    dec.finish()
    return out


def ideal_codelength(symbols: Sequence[int], tables: Sequence[CdfTable]) -> float:
    """Sum of ``-log2`` table probabilities, escape payload included."""
    return float(sum(t.codelength(int(s)) for s, t in zip(symbols, tables)))


# -- container -----------------------------------------------------------------------

MAGIC = b"HJ"
VERSION = 1
# magic, version, flags, H, W, C_z, C_v, len(b_v), len(b_z); little endian
_HEADER = struct.Struct("<2sBBHHHHII")
HEADER_BYTES = _HEADER.size


@dataclass(frozen=True)
class Bitstream:
    """Digital payload ``b_1``: hyper-latent stream then latent stream."""

    height: int
    width: int
    c_z: int
    c_v: int
    b_v: bytes
    b_z: bytes

    @property
    def payload_bits(self) -> int:
        return 8 * (len(self.b_v) + len(self.b_z))

    @property
    def total_bits(self) -> int:
        return 8 * (HEADER_BYTES + len(self.b_v) + len(self.b_z))

    def to_bytes(self) -> bytes:
        return pack_bitstream(self.b_v, self.b_z, (self.height, self.width, self.c_z, self.c_v))


def pack_bitstream(b_v: bytes, b_z: bytes, dims: tuple[int, int, int, int]) -> bytes:
    """Serialize ``(b_v, b_z)`` behind a fixed 20-byte header.

    Layout (little endian): ``b"HJ"``, version u8, flags u8, H u16, W u16,
    C_z u16, C_v u16, len(b_v) u32, len(b_z) u32, then ``b_v`` and ``b_z``.
    """
    h, w, c_z, c_v = (int(d) for d in dims)
    header = _HEADER.pack(MAGIC, VERSION, 0, h, w, c_z, c_v, len(b_v), len(b_z))
    return header + bytes(b_v) + bytes(b_z)


def unpack_bitstream(data: bytes) -> Bitstream:
    """Parse a container; trailing bytes past the declared payload are ignored."""
    if len(data) < HEADER_BYTES:
        raise BitstreamError(f"truncated header: {len(data)} < {HEADER_BYTES} bytes")
    magic, version, _flags, h, w, c_z, c_v, n_v, n_z = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}")
    if min(h, w, c_z, c_v) == 0:
        raise BitstreamError("zero dimension in header")
    end = HEADER_BYTES + n_v + n_z
    if len(data) < end:
        raise BitstreamError(f"truncated payload: {len(data)} < {end} bytes")
    b_v = bytes(data[HEADER_BYTES:HEADER_BYTES + n_v])
    b_z = bytes(data[HEADER_BYTES + n_v:end])
    return Bitstream(h, w, c_z, c_v, b_v, b_z)
