"""Training configuration, stored as JSON next to every run."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..compressor import CodecConfig
from ..deepjscc import JsccConfig

SCHEMES = ("JSC", "AF", "PF", "digital")
LAMBDA_GRID = (200, 400, 800, 1600, 3200)


@dataclass(frozen=True)
class TrainConfig:
    scheme: str = "JSC"
    lam: float = 3200.0
    snr_s_db: float = 2.0
    snr_n_db: float = 10.0
    n_hops: int = 1
    lr: float = 1e-4
    plateau_factor: float = 0.8
    plateau_patience: int = 10
    batch_size: int = 128
    epochs: int = 300
    seed: int = 0
    dataset: str = "cifar10"
    data_dir: str | None = None
    train_limit: int | None = None
    val_limit: int | None = None
    c_feat: int = 256
    c_out: int = 24
    c_core: int | None = None
    n_res: int = 2
    c_z: int = 256
    c_v: int = 192
    c_hyper: int = 192
    init_from: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.scheme in ("JSC", "digital") and not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.n_hops < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("n_hops and batch_size must be positive, epochs non-negative")
        if not 0 < self.plateau_factor < 1 or self.plateau_patience < 1:
            raise ValueError("plateau factor must be in (0, 1) and patience at least 1")

    def jscc_config(self) -> JsccConfig:
        return JsccConfig(c_feat=self.c_feat, c_out=self.c_out, n_res=self.n_res)

    def codec_config(self) -> CodecConfig:
        return CodecConfig(c_feat=self.c_feat, c_z=self.c_z, c_v=self.c_v,
                           c_hyper=self.c_hyper, n_res=self.n_res)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def desk_profile(**overrides) -> TrainConfig:
    """Reduced schedule: 10k CIFAR-10 training images, 60 epochs."""
    base = dict(train_limit=10000, epochs=60)
    base.update(overrides)
    return TrainConfig(**base)


def micro_profile(**overrides) -> TrainConfig:
    """Minutes-on-a-CPU schedule on synthetic images with narrow networks."""
    base = dict(dataset="synthetic", train_limit=256, val_limit=64, epochs=3, batch_size=32,
                c_feat=16, c_out=24, n_res=1, c_z=16, c_v=8, c_hyper=16, lr=1e-3)
    base.update(overrides)
    return TrainConfig(**base)
