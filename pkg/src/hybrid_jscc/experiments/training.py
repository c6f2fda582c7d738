"""Training loops and self-describing checkpoints."""
from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
from torch import nn

from ..channel import make_generator, snr_db_to_sigma2
from ..compressor import HyperpriorCodec, jsc_loss
from ..deepjscc import AnalogChain, loss_af
from ..hybrid import HybridJSC
from .config import TrainConfig
from .data import batches, load_dataset

VAL_STREAM = 1 << 30


class TrainingDiverged(RuntimeError):
    """The loss became NaN or infinite."""


def build_model(cfg: TrainConfig) -> nn.Module:
    if cfg.scheme in ("AF", "PF"):
        return AnalogChain(cfg.jscc_config(), cfg.scheme, cfg.n_hops, cfg.c_core)
    if cfg.scheme == "JSC":
        return HybridJSC(cfg.jscc_config(), cfg.codec_config())
    return HyperpriorCodec(cfg.codec_config())


def sigma2_chain(cfg: TrainConfig) -> list[float]:
    return [snr_db_to_sigma2(cfg.snr_s_db)] + [snr_db_to_sigma2(cfg.snr_n_db)] * (cfg.n_hops - 1)


def batch_loss(model: nn.Module, cfg: TrainConfig, images: torch.Tensor,
               generator: torch.Generator) -> tuple[torch.Tensor, dict]:
    """Training objective of ``cfg.scheme`` on one batch, plus scalar diagnostics."""
    if cfg.scheme in ("AF", "PF"):
        loss = loss_af(images, model(images, sigma2_chain(cfg), generator))
        return loss, {"mse": loss.item()}
    if cfg.scheme == "JSC":
        loss, out = model.loss(images, snr_db_to_sigma2(cfg.snr_s_db), cfg.lam, generator)
    else:
        out = model(images, "noise", generator)
        loss = jsc_loss(images, out["recon"], out["bpp"], cfg.lam)
    mse = torch.mean((out["recon"].detach() - images) ** 2).item()
    return loss, {"mse": mse, "bpp": out["bpp"].item()}


def make_scheduler(opt, cfg: TrainConfig):
    # torch counts bad epochs strictly above ``patience``; the drop must land on
    # the ``plateau_patience``-th consecutive non-improving epoch
    return torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, mode="min", factor=cfg.plateau_factor, patience=cfg.plateau_patience - 1,
        threshold=0.0, threshold_mode="abs")


@dataclass
class TrainResult:
    model: nn.Module
    config: TrainConfig
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    path: Path | None = None


@torch.no_grad()
def validate(model, cfg: TrainConfig, images, batch_size: int | None = None) -> float:
    model.eval()
    total, count = 0.0, 0
    for i, batch in enumerate(batches(images, batch_size or cfg.batch_size, shuffle=False)):
        loss, _ = batch_loss(model, cfg, batch, make_generator(cfg.seed, VAL_STREAM, i))
        total += float(loss) * batch.shape[0]
        count += batch.shape[0]
    return total / max(count, 1)


def train(cfg: TrainConfig, run_dir=None, train_images=None, val_images=None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Adam with plateau decay; keeps the parameters with the best validation loss.

    Noise draws use the stream ``(seed, epoch, batch)``, so a run is
    reproducible from its config.  A non-finite loss aborts the run.
    """
    torch.manual_seed(cfg.seed)
    if train_images is None:
        train_images = load_dataset(cfg.dataset, "train", cfg.data_dir, limit=cfg.train_limit)
    if val_images is None:
        val_images = load_dataset(cfg.dataset, "val", cfg.data_dir, limit=cfg.val_limit)
    model = build_model(cfg)
    if cfg.init_from and isinstance(model, HybridJSC):
        model.init_from(load_checkpoint(cfg.init_from)[0])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = make_scheduler(opt, cfg)
    result = TrainResult(model, cfg)
    best_state = copy.deepcopy(model.state_dict())
    if cfg.epochs == 0:
        result.best_val = validate(model, cfg, val_images)
    for epoch in range(cfg.epochs):
        t0 = time.time()
        model.train()
        stats = {"loss": 0.0, "mse": 0.0, "bpp": 0.0}
        seen = 0
        for b, batch in enumerate(batches(train_images, cfg.batch_size, cfg.seed, epoch)):
            loss, diag = batch_loss(model, cfg, batch, make_generator(cfg.seed, epoch, b))
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch {b}"
                    f" (lr {opt.param_groups[0]['lr']:.3g}, last stats {diag})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            n = batch.shape[0]
            seen += n
            stats["loss"] += loss.item() * n
            for k, v in diag.items():
                stats[k] += v * n
        val = validate(model, cfg, val_images)
        if not math.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        entry = {k: v / max(seen, 1) for k, v in stats.items()}
        entry.update(epoch=epoch, val_loss=val, lr=opt.param_groups[0]["lr"],
                     seconds=time.time() - t0)
        result.history.append(entry)
        if val < result.best_val:
            result.best_val, result.best_epoch = val, epoch
            best_state = copy.deepcopy(model.state_dict())
        sched.step(val)
        if log:
            log(f"epoch {epoch}: train {entry['loss']:.5f} val {val:.5f} lr {entry['lr']:.3g}")
    model.load_state_dict(best_state)
    finalize(model)
    model.eval()
    if run_dir is not None:
        result.path = save_checkpoint(result, Path(run_dir) / "checkpoint.pt")
    return result


def finalize(model: nn.Module):
    """Build entropy coding tables once parameters are fixed."""
    codec = model.codec if isinstance(model, HybridJSC) else model
    if isinstance(codec, HyperpriorCodec):
        codec.update()


def save_checkpoint(result: TrainResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"config": result.config.to_dict(), "state": result.model.state_dict(),
                "history": result.history, "best_epoch": result.best_epoch,
                "best_val": result.best_val, "format": 1}, path)
    result.config.save(path.with_suffix(".json"))
    return path


def load_checkpoint(path):
    """Returns ``(model, config, raw checkpoint dict)`` with the model in eval mode."""
    ckpt = torch.load(Path(path), map_location="cpu", weights_only=False)
    cfg = TrainConfig.from_dict(ckpt["config"])
    model = build_model(cfg)
    model.load_state_dict(ckpt["state"])
    model.eval()
    return model, cfg, ckpt
