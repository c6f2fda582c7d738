"""Train tiny analog and hybrid models on synthetic images, then sweep the hop count.

The models are far too small for meaningful PSNR values; the point is the
shape of the curves.  AF degrades with every hop while the hybrid scheme
is flat once the first relay has compressed.

Run: python demos/04_hop_sweep.py [out_dir]   (under a minute on one CPU)
"""
import sys
from pathlib import Path

from hybrid_jscc.experiments.config import micro_profile
from hybrid_jscc.experiments.data import load_dataset
from hybrid_jscc.experiments.report import emit_report
from hybrid_jscc.experiments.sweeps import hop_sweep
from hybrid_jscc.experiments.training import train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo")
test = load_dataset("synthetic", "test", limit=128)

af = train(micro_profile(scheme="AF", epochs=4), out / "af", log=print)
jsc = train(micro_profile(scheme="JSC", lam=800.0, epochs=4, init_from=str(af.path)),
            out / "jsc", log=print)

records = hop_sweep({"AF": af.model, "JSC": jsc.model}, test, range(1, 7))
print("\nscheme  n  PSNR (dB)  payload bits")
for r in records:
    print(f"{r.scheme:6s} {r.n_hops:2d}  {r.psnr_mean:9.3f}  {r.b1_mean or '':>12}")
for path in emit_report(records, out, "hops", plots=["hops"]):
    print("wrote", path)
