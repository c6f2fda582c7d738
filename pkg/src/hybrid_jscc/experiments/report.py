"""Record persistence (CSV and JSON) and the three standard plots.

Files are written as ``<out>/<run_id>/<scheme>/<metric>.<ext>``; records
of all schemes together go to ``<out>/<run_id>/records.<ext>``.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sweeps import RECORD_FIELDS, ResultRecord  # noqa: E402

_FLOAT_FIELDS = {"snr_train_db", "snr_test_db", "psnr_mean", "psnr_std", "lam", "bpp_mean",
                 "bpp_z", "bpp_v", "b1_mean", "k_prime", "wall_clock"}
_INT_FIELDS = {"n_hops", "seed"}


def write_csv(records: Iterable[ResultRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=RECORD_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in r.to_dict().items()})
    return path


def _parse(name: str, text: str):
    if text == "":
        return None
    if name in _INT_FIELDS:
        return int(text)
    if name in _FLOAT_FIELDS:
        return float(text)
    return text


def read_csv(path) -> list[ResultRecord]:
    with open(path, newline="") as f:
        return [ResultRecord.from_dict({k: _parse(k, v) for k, v in row.items()})
                for row in csv.DictReader(f)]


def write_json(records: Iterable[ResultRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in records], indent=2) + "\n")
    return path


def read_json(path) -> list[ResultRecord]:
    return [ResultRecord.from_dict(d) for d in json.loads(Path(path).read_text())]


def read_records(path) -> list[ResultRecord]:
    return read_json(path) if str(path).endswith(".json") else read_csv(path)


def plot_hops(records: Sequence[ResultRecord], path, title: str | None = None) -> Path:
    """PSNR against number of hops, one line per scheme."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    by_scheme = defaultdict(list)
    for r in records:
        by_scheme[r.scheme].append(r)
    for scheme, rs in by_scheme.items():
        rs = sorted(rs, key=lambda r: r.n_hops)
        ax.plot([r.n_hops for r in rs], [r.psnr_mean for r in rs], marker="o", label=scheme)
    ax.set_xlabel("number of hops n")
    ax.set_ylabel("PSNR (dB)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def rd_curves(records: Sequence[ResultRecord]) -> dict[float, list[tuple[float, float]]]:
    """``{snr_train_db: [(bpp, psnr), ...]}`` with points ordered by lambda."""
    by_snr = defaultdict(list)
    for r in records:
        by_snr[r.snr_train_db].append(r)
    return {snr: [(r.bpp_mean, r.psnr_mean) for r in sorted(rs, key=lambda r: r.lam or 0.0)]
            for snr, rs in sorted(by_snr.items())}


def plot_rd(records: Sequence[ResultRecord], path, title: str | None = None) -> Path:
    """PSNR against bpp, one curve per first-hop SNR with points ordered by lambda."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for snr, points in rd_curves(records).items():
        bpp, psnr = zip(*points)
        ax.plot(bpp, psnr, marker="o", label=f"SNR_s = {snr:g} dB")
    ax.set_xlabel("bpp")
    ax.set_ylabel("PSNR (dB)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_mismatch(records: Sequence[ResultRecord], path, title: str | None = None) -> Path:
    """Mismatch points in the RD plane, labelled by test SNR."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for r in sorted(records, key=lambda r: r.snr_test_db):
        ax.scatter([r.bpp_mean], [r.psnr_mean], label=f"test {r.snr_test_db:g} dB"
                   f" (train {r.snr_train_db:g} dB)")
    ax.set_xlabel("bpp")
    ax.set_ylabel("PSNR (dB)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


PLOTTERS = {"hops": plot_hops, "rd": plot_rd, "mismatch": plot_mismatch}


def emit_report(records: Sequence[ResultRecord], out_dir, run_id: str,
                formats: Sequence[str] = ("csv", "json"), plots: Sequence[str] = (),
                plot_formats: Sequence[str] = ("png",)) -> list[Path]:
    """Write records per scheme and combined, plus the requested plots."""
    root = Path(out_dir) / run_id
    written = []
    writers = {"csv": write_csv, "json": write_json}
    for fmt in formats:
        if fmt not in writers:
            raise ValueError(f"unknown record format {fmt!r}")
        written.append(writers[fmt](records, root / f"records.{fmt}"))
        by_scheme = defaultdict(list)
        for r in records:
            by_scheme[r.scheme].append(r)
        for scheme, rs in sorted(by_scheme.items()):
            written.append(writers[fmt](rs, root / scheme / f"psnr.{fmt}"))
    for kind in plots:
        if kind not in PLOTTERS:
            raise ValueError(f"unknown plot {kind!r}")
        for ext in plot_formats:
            if ext not in ("png", "svg"):
                raise ValueError(f"unknown plot format {ext!r}")
            written.append(PLOTTERS[kind](records, root / f"{kind}.{ext}"))
    return written
