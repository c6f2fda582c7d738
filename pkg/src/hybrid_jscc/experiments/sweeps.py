"""Evaluation sweeps: PSNR against hop count, rate-distortion grids,
SNR mismatch and packet error rates."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np
import torch

from ..baselines import digital_baseline_run, naive_quant_run
from ..channel import hop_chain, snr_db_to_sigma2
from ..compressor import HyperpriorImageCodec
from ..deepjscc import AnalogChain, analog_multihop_run
from ..entropy_coding import HEADER_BYTES
from ..hybrid import HybridJSC, jsc_run
from ..transport import SCHEME_N, SCHEME_S, CodedModScheme, IdealPipe, measure_per
from .metrics import psnr_per_image


@dataclass
class ResultRecord:
    scheme: str
    n_hops: int
    snr_train_db: float
    snr_test_db: float
    psnr_mean: float
    psnr_std: float
    lam: float | None = None
    bpp_mean: float | None = None
    bpp_z: float | None = None
    bpp_v: float | None = None
    b1_mean: float | None = None
    k_prime: float | None = None
    wall_clock: float = 0.0
    seed: int = 0
    checkpoint: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.psnr_mean):
            raise ValueError("PSNR must be finite")
        if self.bpp_mean is not None and self.bpp_mean < 0:
            raise ValueError("bpp must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResultRecord":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


RECORD_FIELDS = tuple(f.name for f in fields(ResultRecord))


def _core_mode(transport_mode: str) -> str:
    if transport_mode not in ("ideal", "coded"):
        raise ValueError(f"transport mode must be 'ideal' or 'coded', got {transport_mode!r}")
    return transport_mode


def _stats(images, recon):
    p = psnr_per_image(images, recon)
    return float(p.mean()), float(p.std(unbiased=False))


@torch.no_grad()
def evaluate_jsc(model: HybridJSC, images, n_hops: int, snr_s_db: float, snr_n_db: float,
                 transport_mode: str = "ideal", seed: int = 0, lam=None, snr_train_db=None,
                 checkpoint=None, batch_size: int = 256) -> ResultRecord:
    """PSNR and rate of the hybrid scheme; rate fields come from the actual bitstreams."""
    t0 = time.time()
    hops = hop_chain(n_hops, snr_s_db, snr_n_db, core_mode=_core_mode(transport_mode),
                     core_scheme=SCHEME_N if transport_mode == "coded" else IdealPipe(2.0))
    recon, bits, bz, bv = [], [], [], []
    h, w = model.codec_cfg.height, model.codec_cfg.width
    for start in range(0, images.shape[0], batch_size):
        batch = images[start:start + batch_size]
        res = jsc_run(batch, hops, model, seed=seed * 7919 + start)
        recon.append(res.images)
        if n_hops == 1:
            # rate of what the first relay would forward
            streams = model.codec.compress(res.images)
            bits += [s.payload_bits for s in streams]
            bz += [8 * len(s.b_z) for s in streams]
            bv += [8 * len(s.b_v) for s in streams]
        else:
            bits += res.payload_bits
            bz += res.bits_z
            bv += res.bits_v
    recon = torch.cat(recon)
    mean, std = _stats(images, recon)
    b1 = float(np.mean(bits)) if bits else None
    rec = ResultRecord("JSC", n_hops, snr_train_db if snr_train_db is not None else snr_s_db,
                       snr_s_db, mean, std, lam=lam, b1_mean=b1,
                       bpp_mean=None if b1 is None else b1 / (h * w),
                       k_prime=None if b1 is None else b1 / SCHEME_N.spectral_efficiency,
                       wall_clock=time.time() - t0, seed=seed, checkpoint=checkpoint)
    if bz:
        rec.bpp_z, rec.bpp_v = float(np.mean(bz)) / (h * w), float(np.mean(bv)) / (h * w)
    return rec


@torch.no_grad()
def evaluate_analog(model: AnalogChain, images, n_hops: int, snr_s_db: float, snr_n_db: float,
                    seed: int = 0, snr_train_db=None, checkpoint=None) -> ResultRecord:
    t0 = time.time()
    recon = analog_multihop_run(images, hop_chain(n_hops, snr_s_db, snr_n_db), model, seed=seed)
    mean, std = _stats(images, recon)
    k_core = model.k_core if n_hops > 1 else model.k
    return ResultRecord(model.scheme, n_hops, snr_train_db if snr_train_db is not None else snr_s_db,
                        snr_s_db, mean, std, k_prime=float(k_core), wall_clock=time.time() - t0,
                        seed=seed, checkpoint=checkpoint)


@torch.no_grad()
def evaluate_naive(model: AnalogChain, images, n_hops: int, snr_s_db: float, snr_n_db: float,
                   m: int, quantizer=None, transport_mode: str = "ideal", seed: int = 0,
                   checkpoint=None) -> ResultRecord:
    t0 = time.time()
    hops = hop_chain(n_hops, snr_s_db, snr_n_db, core_mode=_core_mode(transport_mode),
                     core_scheme=SCHEME_N if transport_mode == "coded" else IdealPipe(2.0))
    recon, bits = naive_quant_run(images, hops, m, model, seed=seed, quantizer=quantizer)
    mean, std = _stats(images, recon)
    h, w = images.shape[-2:]
    return ResultRecord(f"naive-{m}bit", n_hops, snr_s_db, snr_s_db, mean, std,
                        b1_mean=float(bits), bpp_mean=bits / (h * w),
                        k_prime=bits / SCHEME_N.spectral_efficiency,
                        wall_clock=time.time() - t0, seed=seed, checkpoint=checkpoint)


@torch.no_grad()
def evaluate_digital(codec, images, n_hops: int, snr_s_db: float, snr_n_db: float,
                     transport_mode: str = "ideal", seed: int = 0, lam=None,
                     checkpoint=None) -> ResultRecord:
    t0 = time.time()
    mode = _core_mode(transport_mode)
    hops = hop_chain(n_hops, snr_s_db, snr_n_db, core_mode=mode, first_mode=mode,
                     first_scheme=SCHEME_S if mode == "coded" else IdealPipe(1.0),
                     core_scheme=SCHEME_N if mode == "coded" else IdealPipe(2.0))
    if not hasattr(codec, "encode"):
        codec = HyperpriorImageCodec(codec)
    recon, reports = digital_baseline_run(images, hops, codec, seed=seed)
    mean, std = _stats(images, recon)
    # payload only, as for the hybrid scheme; the header is side information
    bits = float(np.mean([r[0].bits_in for r in reports])) - 8 * HEADER_BYTES
    h, w = images.shape[-2:]
    return ResultRecord("digital", n_hops, snr_s_db, snr_s_db, mean, std, lam=lam, b1_mean=bits,
                        bpp_mean=bits / (h * w), wall_clock=time.time() - t0, seed=seed,
                        checkpoint=checkpoint)


def _model_for(source, n: int):
    if isinstance(source, Mapping):
        return source.get(n)
    if callable(source) and not isinstance(source, torch.nn.Module):
        return source(n)
    return source


def hop_sweep(models: Mapping[str, object], images, n_range: Sequence[int],
              snr_s_db: float = 2.0, snr_n_db: float = 10.0, transport_mode: str = "ideal",
              seed: int = 0, quantizers: Mapping[int, object] | None = None) -> list[ResultRecord]:
    """PSNR against hop count for each named scheme.

    Keys of ``models`` select the evaluator: ``JSC*``, ``AF*``, ``PF*``,
    ``naive-<m>`` (an analog single-hop model; ``quantizers[m]`` for m < 32)
    and ``digital*`` (an image codec).  Values are a model, a mapping from
    hop count to model or a callable ``n -> model`` (PF needs one per n);
    hop counts a mapping lacks are skipped.
    """
    records = []
    for name, source in models.items():
        for n in n_range:
            model = _model_for(source, n)
            if model is None:
                continue
            if name.startswith("JSC"):
                rec = evaluate_jsc(model, images, n, snr_s_db, snr_n_db, transport_mode, seed)
            elif name.startswith(("AF", "PF")):
                rec = evaluate_analog(model, images, n, snr_s_db, snr_n_db, seed)
            elif name.startswith("naive"):
                m = int(name.split("-")[1].rstrip("bit"))
                q = None if m == 32 else (quantizers or {})[m]
                rec = evaluate_naive(model, images, n, snr_s_db, snr_n_db, m, q, transport_mode,
                                     seed)
            elif name.startswith("digital"):
                rec = evaluate_digital(model, images, n, snr_s_db, snr_n_db, transport_mode, seed)
            else:
                raise ValueError(f"cannot tell the scheme of {name!r}")
            rec.scheme = name
            records.append(rec)
    return records


def rd_sweep(models: Mapping[tuple[float, float], HybridJSC], images, snr_n_db: float = 10.0,
             seed: int = 0) -> list[ResultRecord]:
    """One (bpp, PSNR) point per trained ``(snr_s_db, lam)`` model, two-hop ideal chain."""
    return [evaluate_jsc(model, images, 2, snr, snr_n_db, "ideal", seed, lam=lam)
            for (snr, lam), model in sorted(models.items())]


def mismatch_eval(model: HybridJSC, images, snr_train_db: float = 5.0,
                  test_snrs: Sequence[float] = (2.0, 8.0), snr_n_db: float = 10.0,
                  seed: int = 0, lam=None) -> list[ResultRecord]:
    """Evaluate a model trained at one first-hop SNR over several test SNRs (train SNR included)."""
    snrs = sorted(set(test_snrs) | {snr_train_db})
    return [evaluate_jsc(model, images, 2, s, snr_n_db, "ideal", seed, lam=lam,
                         snr_train_db=snr_train_db) for s in snrs]


def per_sweep(scheme: CodedModScheme, snrs: Sequence[float], n_blocks: int,
              seed: int = 0) -> list[dict]:
    return [{"order": scheme.order, "rate": scheme.rate, "snr_db": float(s),
             "sigma2": snr_db_to_sigma2(s), "n_blocks": n_blocks,
             "per": measure_per(scheme, s, n_blocks, seed=seed)} for s in snrs]
