"""Command line interface: ``hybrid-jscc <command> ...``.

Every command writes under ``--run-dir`` (default ``runs/<command>``):
a copy of the config, checkpoints, records and plots.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..baselines import lloyd_design, received_components
from ..channel import snr_db_to_sigma2
from ..transport import CodedModScheme
from .config import LAMBDA_GRID, TrainConfig, desk_profile, micro_profile
from .data import load_dataset
from .report import PLOTTERS, emit_report, read_records
from .sweeps import (evaluate_analog, evaluate_digital, evaluate_jsc, hop_sweep, mismatch_eval,
                     per_sweep)
from .training import load_checkpoint, train

log = logging.getLogger("hybrid_jscc")

PROFILES = {"full": TrainConfig, "desk": desk_profile, "micro": micro_profile}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config(args) -> TrainConfig:
    overrides = {}
    for item in args.set or []:
        key, _, value = item.partition("=")
        if not _:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        overrides[key] = _parse_value(value)
    if args.config:
        base = TrainConfig.load(args.config).to_dict()
        base.update(overrides)
        return TrainConfig.from_dict(base)
    return PROFILES[args.profile](**overrides)


def _images(cfg_or_args, split: str, limit=None):
    dataset = getattr(cfg_or_args, "dataset", "cifar10")
    data_dir = getattr(cfg_or_args, "data_dir", None)
    return load_dataset(dataset, split, data_dir, limit=limit)


def cmd_train(args):
    cfg = _config(args)
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    cfg.save(run / "config.json")
    result = train(cfg, run, log=log.info)
    print(f"best epoch {result.best_epoch}, validation loss {result.best_val:.6f}; saved {result.path}")


def cmd_eval(args):
    model, cfg, ckpt = load_checkpoint(args.checkpoint)
    images = _images(args, args.split, args.limit)
    snr_s = cfg.snr_s_db if args.snr_s is None else args.snr_s
    if cfg.scheme == "JSC":
        rec = evaluate_jsc(model, images, args.n_hops, snr_s, args.snr_n, args.transport,
                           args.seed, lam=cfg.lam, snr_train_db=cfg.snr_s_db,
                           checkpoint=str(args.checkpoint))
    elif cfg.scheme in ("AF", "PF"):
        rec = evaluate_analog(model, images, args.n_hops, snr_s, args.snr_n, args.seed,
                              snr_train_db=cfg.snr_s_db, checkpoint=str(args.checkpoint))
    else:
        rec = evaluate_digital(model, images, args.n_hops, snr_s, args.snr_n, args.transport,
                               args.seed, lam=cfg.lam, checkpoint=str(args.checkpoint))
    emit_report([rec], args.run_dir, args.run_id)
    print(json.dumps(rec.to_dict(), indent=2))


def _load(path):
    return load_checkpoint(path)[0]


def cmd_hop_sweep(args):
    images = _images(args, args.split, args.limit)
    models, quantizers = {}, {}
    if args.jsc:
        models["JSC"] = _load(args.jsc)
    if args.af:
        models["AF"] = _load(args.af)
    if args.pf:
        per_n = {}
        for item in args.pf:
            n, _, path = item.partition("=")
            per_n[int(n)] = _load(path)
        models["PF"] = per_n
    if args.naive:
        base = _load(args.naive)
        for m in args.naive_bits:
            if m != 32:
                design = _images(args, "val", None)
                samples = received_components(design, base, snr_db_to_sigma2(args.snr_s), args.seed)
                quantizers[m] = lloyd_design(samples[:10 ** 6], m)
                quantizers[m].save(Path(args.run_dir) / args.run_id / f"quantizer_{m}bit.json")
            models[f"naive-{m}bit"] = base
    if args.digital:
        models["digital"] = _load(args.digital)
    if not models:
        raise SystemExit("give at least one of --jsc, --af, --pf, --naive, --digital")
    n_range = list(range(1, args.n_max + 1))
    (Path(args.run_dir) / args.run_id).mkdir(parents=True, exist_ok=True)
    records = hop_sweep(models, images, n_range, args.snr_s, args.snr_n, args.transport,
                        args.seed, quantizers)
    for path in emit_report(records, args.run_dir, args.run_id, plots=("hops",),
                            plot_formats=args.plot_format):
        print(path)


def cmd_rd_sweep(args):
    images = _images(args, args.split, args.limit)
    records = []
    base = _config(args)
    for snr in args.snrs:
        for lam in args.lambdas:
            cfg = base.replace(scheme="JSC", snr_s_db=snr, lam=float(lam))
            run = Path(args.run_dir) / args.run_id / f"snr{snr:g}_lam{lam:g}"
            ckpt = run / "checkpoint.pt"
            if ckpt.exists() and not args.retrain:
                model = _load(ckpt)
            else:
                run.mkdir(parents=True, exist_ok=True)
                cfg.save(run / "config.json")
                model = train(cfg, run, log=log.info).model
            rec = evaluate_jsc(model, images, 2, snr, args.snr_n, "ideal", args.seed, lam=lam,
                               checkpoint=str(ckpt))
            records.append(rec)
            print(f"SNR_s {snr:g} dB, lambda {lam:g}: bpp {rec.bpp_mean:.3f}, PSNR {rec.psnr_mean:.2f} dB")
    emit_report(records, args.run_dir, args.run_id, plots=("rd",), plot_formats=args.plot_format)


def cmd_mismatch(args):
    model, cfg, _ = load_checkpoint(args.checkpoint)
    images = _images(args, args.split, args.limit)
    records = mismatch_eval(model, images, cfg.snr_s_db, args.test_snrs, args.snr_n, args.seed,
                            lam=cfg.lam)
    for r in records:
        print(f"test {r.snr_test_db:g} dB: bpp {r.bpp_mean:.3f}, PSNR {r.psnr_mean:.2f} dB")
    emit_report(records, args.run_dir, args.run_id, plots=("mismatch",),
                plot_formats=args.plot_format)


def cmd_plot(args):
    records = read_records(args.records)
    out = Path(args.out)
    PLOTTERS[args.kind](records, out)
    print(out)


def cmd_per_sweep(args):
    scheme = CodedModScheme.from_dict({"rate": args.rate, "order": args.order,
                                       "parity_file": args.parity_file})
    rows = per_sweep(scheme, args.snrs, args.blocks, args.seed)
    for row in rows:
        print(f"{row['snr_db']:6.2f} dB  PER {row['per']:.4g}")
    out = Path(args.run_dir) / args.run_id / "per.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=2) + "\n")
    print(out)


def _common(p, data=True):
    p.add_argument("--run-dir", default="runs")
    p.add_argument("--run-id", default="default")
    p.add_argument("--seed", type=int, default=0)
    if data:
        p.add_argument("--dataset", default="cifar10", choices=("cifar10", "synthetic"))
        p.add_argument("--data-dir", default=None)
        p.add_argument("--split", default="test", choices=("train", "val", "test"))
        p.add_argument("--limit", type=int, default=None)
        p.add_argument("--snr-n", type=float, default=10.0)
        p.add_argument("--plot-format", nargs="+", default=["png"], choices=("png", "svg"))


def _config_args(p):
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--profile", default="full", choices=sorted(PROFILES))
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (JSON value)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-jscc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    _config_args(p)
    p.add_argument("--run-dir", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-hops", type=int, default=2)
    p.add_argument("--snr-s", type=float, default=None, help="test SNR of the first hop")
    p.add_argument("--transport", default="ideal", choices=("ideal", "coded"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hop-sweep", help="PSNR against hop count")
    _common(p)
    p.add_argument("--jsc")
    p.add_argument("--af")
    p.add_argument("--pf", nargs="+", metavar="N=CHECKPOINT")
    p.add_argument("--naive", help="single-hop analog checkpoint for naive quantization")
    p.add_argument("--naive-bits", type=int, nargs="+", default=[4, 32])
    p.add_argument("--digital", help="checkpoint of a codec trained on clean images")
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--snr-s", type=float, default=2.0)
    p.add_argument("--transport", default="ideal", choices=("ideal", "coded"))
    p.set_defaults(func=cmd_hop_sweep)

    p = sub.add_parser("rd-sweep", help="train and evaluate a grid of JSC models")
    _common(p)
    _config_args(p)
    p.add_argument("--snrs", type=float, nargs="+", default=[-1.0, 2.0, 5.0, 8.0])
    p.add_argument("--lambdas", type=float, nargs="+", default=list(LAMBDA_GRID))
    p.add_argument("--retrain", action="store_true")
    p.set_defaults(func=cmd_rd_sweep)

    p = sub.add_parser("mismatch", help="test a JSC model at other first-hop SNRs")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-snrs", type=float, nargs="+", default=[2.0, 8.0])
    p.set_defaults(func=cmd_mismatch)

    p = sub.add_parser("plot", help="plot saved records")
    p.add_argument("--records", required=True)
    p.add_argument("--kind", required=True, choices=sorted(PLOTTERS))
    p.add_argument("--out", required=True, help="output .png or .svg")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("per-sweep", help="packet error rate of a coded-modulation scheme")
    _common(p, data=False)
    p.add_argument("--order", type=int, default=16, choices=(4, 16))
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--parity-file", default=None)
    p.add_argument("--snrs", type=float, nargs="+", default=[6.0, 7.0, 8.0, 10.0])
    p.add_argument("--blocks", type=int, default=1000)
    p.set_defaults(func=cmd_per_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
