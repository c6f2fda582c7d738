"""Reconstruction quality metrics."""
from __future__ import annotations

import math

import torch

PSNR_CAP = 100.0


def psnr_per_image(images: torch.Tensor, recon: torch.Tensor, cap: float = PSNR_CAP) -> torch.Tensor:
    """PSNR in dB of each image on the 0..255 scale, the reconstruction clamped first.

    Identical images report ``cap`` instead of infinity.
    """
    if images.shape != recon.shape:
        raise ValueError(f"shape mismatch {tuple(images.shape)} vs {tuple(recon.shape)}")
    if images.dim() == 3:
        images, recon = images.unsqueeze(0), recon.unsqueeze(0)
    s = images.double() * 255.0
    s_hat = (recon.double() * 255.0).clamp(0.0, 255.0)
    mse = ((s - s_hat) ** 2).flatten(1).mean(dim=1)
    psnr = 10.0 * torch.log10(255.0 ** 2 / mse)
    return torch.where(mse == 0, torch.full_like(psnr, cap), psnr.clamp(max=cap))


def evaluate_psnr(images: torch.Tensor, recon: torch.Tensor, cap: float = PSNR_CAP) -> float:
    """Mean per-image PSNR (a single image may be passed without batch dim)."""
    return float(psnr_per_image(images, recon, cap).mean())


def psnr_from_mse255(mse: float, cap: float = PSNR_CAP) -> float:
    return cap if mse == 0 else min(cap, 10.0 * math.log10(255.0 ** 2 / mse))
