"""Acceptance criteria 1-13, one pass/fail line each in the terminal summary.

Criteria 1-8 need no training.  Criteria 9-13 train reduced-schedule
models on CIFAR-10 (desk profile: 10,000 training images, 60 epochs) and
evaluate on the 10,000 test images.  Checkpoints are cached under
``$HYBRID_JSCC_ACCEPTANCE_RUNS`` (default ``runs/acceptance``) so a rerun
only evaluates.  CIFAR-10 is looked up as described in
``hybrid_jscc.experiments.data``.

``HYBRID_JSCC_ACCEPTANCE_PROFILE=micro`` swaps in synthetic images and
tiny one-epoch models to exercise the plumbing of 9-13 in minutes; its
verdicts say nothing about the criteria.
"""
import math
import os
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from _checks import directional_check, relative_error
from hybrid_jscc.baselines import (digital_baseline_run, effective_snr_af, lloyd_design,
                                   received_components)
from hybrid_jscc.channel import (average_power, awgn_apply, awgn_capacity, hop_chain,
                                 make_generator, snr_db_to_sigma2)
from hybrid_jscc.compressor import (FactorizedPrior, HyperpriorCodec, HyperpriorImageCodec,
                                    gaussian_uniform_likelihood)
from hybrid_jscc.deepjscc import AnalogChain, af_gain, loss_af
from hybrid_jscc.entropy_coding import (build_cdf_gaussian, ideal_codelength, range_decode,
                                        range_encode, table_from_pmf)
from hybrid_jscc.experiments.config import desk_profile, micro_profile
from hybrid_jscc.experiments.data import DatasetUnavailable, load_dataset
from hybrid_jscc.experiments.sweeps import (evaluate_analog, evaluate_digital, evaluate_jsc,
                                            evaluate_naive, mismatch_eval)
from hybrid_jscc.experiments.training import load_checkpoint, train
from hybrid_jscc.hybrid import HybridJSC, jsc_run
from hybrid_jscc.transport import SCHEME_N, IdealPipe, measure_per

SNR_S, SNR_N = 2.0, 10.0


def criterion(n, title):
    return pytest.mark.criterion(n, title)


# -- 1: entropy coder ----------------------------------------------------------------

@criterion(1, "entropy coder round trip and overhead")
class TestEntropyCoder:
    def test_round_trip_on_random_pairs(self):
        """10^5 (symbol, table) pairs in 100 streams, escapes included."""
        rng = np.random.default_rng(1)
        total = 0
        for _ in range(100):
            tables, symbols = [], []
            for _ in range(1000):
                length = int(rng.integers(1, 64))
                pmf = rng.dirichlet(np.full(length, rng.uniform(0.05, 5.0)))
                t = table_from_pmf(pmf, int(rng.integers(-50, 50)), rng.uniform(0, 0.05))
                tables.append(t)
                if rng.random() < 0.02:
                    far = int(rng.geometric(0.001))
                    symbols.append(t.offset - far if rng.random() < 0.5 else t.offset + t.length - 1 + far)
                else:
                    symbols.append(t.offset + int(rng.choice(length, p=pmf)))
            assert range_decode(range_encode(symbols, tables), tables) == symbols
            total += len(symbols)
        assert total == 100_000

    @pytest.mark.parametrize("seed", [0, 1])
    def test_overhead_on_million_symbols(self, seed):
        rng = np.random.default_rng(seed)
        n = 1_000_000
        mu = rng.normal(size=n) * 5
        sigma = np.exp(rng.uniform(-2.5, 3.5, size=n))
        centers, tables = build_cdf_gaussian(mu, sigma)
        symbols = (np.round(rng.normal(mu, sigma)).astype(np.int64) - centers).tolist()
        data = range_encode(symbols, tables)
        ideal = ideal_codelength(symbols, tables)
        assert 8 * len(data) <= ideal * 1.001 + 64
        assert range_decode(data, tables) == symbols


# -- 2: likelihood normalization -----------------------------------------------------

@criterion(2, "likelihood models sum to one over integer bins")
class TestNormalization:
    @given(st.floats(-50, 50), st.floats(1e-3, 100))
    @settings(max_examples=300)
    def test_gaussian(self, mu, sigma):
        half = int(abs(mu) + 40 * sigma + 10)
        n = torch.arange(-half, half + 1, dtype=torch.float64)
        p = gaussian_uniform_likelihood(n, torch.full_like(n, mu), torch.full_like(n, sigma), p_min=0)
        assert abs(p.sum().item() - 1) <= 1e-6

    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 2.0))
    @settings(max_examples=60)
    def test_factorized(self, seed, spread):
        torch.manual_seed(seed)
        prior = FactorizedPrior(4).double()
        with torch.no_grad():
            for p in prior.parameters():
                p.add_(torch.randn_like(p) * spread)
        grid = torch.arange(-2048, 2049, dtype=torch.float64).reshape(1, 1, -1, 1).expand(1, 4, -1, 1)
        with torch.no_grad():
            sums = prior.likelihood(grid, p_min=0).sum(dim=(0, 2, 3))
        assert torch.all(torch.abs(sums - 1) <= 1e-4), sums


# -- 3: AF closed form ---------------------------------------------------------------

@criterion(3, "AF effective SNR matches Monte Carlo")
class TestEffectiveSnr:
    def test_single_hop_exact(self):
        for snr in (2.0, 5.0, 10.0):
            assert effective_snr_af([snr_db_to_sigma2(snr)]) == 1 / snr_db_to_sigma2(snr)

    @pytest.mark.parametrize("length", [1, 2, 3, 4, 5])
    def test_monte_carlo(self, length):
        rng = np.random.default_rng(length)
        for trial in range(3):
            snrs = rng.choice([2.0, 5.0, 10.0], size=length).tolist()
            sigma2s = [snr_db_to_sigma2(s) for s in snrs]
            g = make_generator(length, trial)
            x = torch.exp(2j * math.pi * torch.rand(1_000_000, generator=g, dtype=torch.float64))
            y, gain = awgn_apply(x, sigma2s[0], g), 1.0
            for prev, s2 in zip(sigma2s, sigma2s[1:]):
                gain *= af_gain(prev)
                y = awgn_apply(y * af_gain(prev), s2, g)
            var = torch.mean(torch.abs(y / gain - x) ** 2).item()
            assert abs(var * effective_snr_af(sigma2s) - 1) <= 0.01, snrs


# -- 4: channel calibration ----------------------------------------------------------

@criterion(4, "AWGN calibration and the power constraint")
class TestChannel:
    @pytest.mark.parametrize("snr_db", [-1.0, 2.0, 10.0])
    def test_noise_variance(self, snr_db):
        x = torch.zeros(1_000_000, dtype=torch.complex128)
        n = awgn_apply(x, snr_db_to_sigma2(snr_db), make_generator(4))
        emp = torch.mean(torch.abs(n) ** 2).item()
        assert abs(emp / snr_db_to_sigma2(snr_db) - 1) <= 0.01
        # circular: half the power in each component
        assert abs(torch.mean(n.real ** 2).item() / emp - 0.5) <= 0.01

    @given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["AF", "PF"]), st.sampled_from([None, 12]),
           st.floats(0.01, 100.0))
    @settings(max_examples=25)
    def test_power_invariant(self, seed, scheme, c_core, scale):
        from hybrid_jscc.deepjscc import JsccConfig
        torch.manual_seed(seed % 1000)
        model = AnalogChain(JsccConfig(c_feat=8, n_res=1), scheme, 4, c_core=c_core)
        images = torch.rand(2, 3, 32, 32, generator=torch.Generator().manual_seed(seed)) * scale
        with torch.no_grad():
            _, sent = model.transmit(images, [0.63, 0.1, 0.1, 0.1], make_generator(seed))
        # normalizing transmitters meet the constraint exactly, AF relays in expectation
        exact = [0] + ([1] if c_core else []) + ([2, 3] if scheme == "PF" else [])
        for i, x in enumerate(sent):
            if i in exact:
                assert torch.allclose(average_power(x), torch.ones(2, dtype=x.real.dtype), atol=1e-5)

    def test_af_relay_power_in_expectation(self):
        g = make_generator(6)
        x = torch.exp(2j * math.pi * torch.rand(1000, 768, generator=g, dtype=torch.float64))
        out = awgn_apply(x, 0.63, g) * af_gain(0.63)
        assert abs(average_power(out).mean().item() - 1) <= 0.01


# -- 5: capacity ---------------------------------------------------------------------

@criterion(5, "AWGN capacity at the operating points")
def test_capacity_values():
    assert round(awgn_capacity(2.0), 2) == 1.37
    assert round(awgn_capacity(10.0), 2) == 3.46


# -- 6: LDPC chain -------------------------------------------------------------------

@criterion(6, "rate-1/2 16-QAM LDPC chain at 10 dB")
class TestLdpcChain:
    def test_per_at_operating_point(self):
        per = measure_per(SCHEME_N, 10.0, 10_000, seed=2024)
        assert per < 1e-3, per

    def test_per_monotone(self):
        per = [measure_per(SCHEME_N, s, 1000, seed=7) for s in (6.0, 7.0, 8.0, 10.0)]
        assert all(a >= b for a, b in zip(per, per[1:])), per


# -- 7: gradient checks --------------------------------------------------------------

@criterion(7, "gradients match central finite differences")
class TestGradients:
    @pytest.mark.parametrize("scheme", ["AF", "PF"])
    def test_analog_loss(self, tiny_jscc, scheme):
        torch.manual_seed(0)
        model = AnalogChain(tiny_jscc, scheme, 3).double()
        images = load_dataset("synthetic", "test", limit=4).double()
        sigma2s = [snr_db_to_sigma2(SNR_S), 0.1, 0.1]

        def loss():
            return loss_af(images, model(images, sigma2s, make_generator(1)))

        for a, n in directional_check(loss, model.parameters(), n_dirs=4):
            assert relative_error(a, n) <= 1e-3

    def test_jsc_loss(self, tiny_jscc, tiny_codec):
        torch.manual_seed(0)
        model = HybridJSC(tiny_jscc, tiny_codec).double()
        images = load_dataset("synthetic", "test", limit=4).double()

        def loss():
            return model.loss(images, snr_db_to_sigma2(SNR_S), 3200.0, make_generator(1))[0]

        for a, n in directional_check(loss, model.parameters(), n_dirs=4):
            assert relative_error(a, n) <= 1e-3


# -- 8: hop flatness -----------------------------------------------------------------

@criterion(8, "bit-forwarding schemes are flat in hop count")
class TestHopFlatness:
    def test_jsc(self, tiny_jscc, tiny_codec, images):
        torch.manual_seed(0)
        model = HybridJSC(tiny_jscc, tiny_codec).eval()
        model.codec.update()
        out = [jsc_run(images, hop_chain(n, SNR_S, SNR_N, core_mode="ideal"), model, seed=3).images
               for n in (2, 5)]
        assert torch.equal(out[0], out[1])

    def test_digital(self, tiny_codec, images):
        torch.manual_seed(0)
        codec = HyperpriorCodec(tiny_codec).eval()
        codec.update()
        out = []
        for n in (2, 5):
            hops = hop_chain(n, SNR_S, SNR_N, core_mode="ideal", first_mode="ideal",
                             first_scheme=IdealPipe(1.0), core_scheme=IdealPipe(2.0))
            out.append(digital_baseline_run(images, hops, HyperpriorImageCodec(codec), seed=3)[0])
        assert torch.equal(out[0], out[1])


# -- 9-13: desk-scale training suite -------------------------------------------------

PROFILE = os.environ.get("HYBRID_JSCC_ACCEPTANCE_PROFILE", "desk")
RUNS = Path(os.environ.get("HYBRID_JSCC_ACCEPTANCE_RUNS", f"runs/acceptance-{PROFILE}"))
N_MAX = 6


@pytest.fixture(scope="session")
def cifar():
    if PROFILE == "micro":
        return {split: load_dataset("synthetic", split, limit=n)
                for split, n in (("train", 128), ("val", 32), ("test", 64))}
    try:
        return {"train": load_dataset("cifar10", "train", limit=10_000),
                "val": load_dataset("cifar10", "val"),
                "test": load_dataset("cifar10", "test")}
    except DatasetUnavailable as e:
        pytest.fail(f"CIFAR-10 unavailable, desk-scale criteria cannot run: {e}")


def _trained(cifar, name, **overrides):
    """Desk-profile model ``name``, trained once and cached."""
    path = RUNS / name / "checkpoint.pt"
    if path.exists():
        return load_checkpoint(path)[0]
    if PROFILE == "micro":
        cfg = micro_profile(epochs=1, **overrides)
    else:
        cfg = desk_profile(**overrides)
    return train(cfg, path.parent, train_images=cifar["train"], val_images=cifar["val"]).model


@pytest.fixture(scope="session")
def af_single(cifar):
    return _trained(cifar, "af_n1", scheme="AF", n_hops=1, snr_s_db=SNR_S)


def _jsc(cifar, snr, lam):
    init = RUNS / "af_n1" / "checkpoint.pt"
    return _trained(cifar, f"jsc_snr{snr:g}_lam{lam:g}", scheme="JSC", snr_s_db=snr, lam=float(lam),
                    init_from=str(init))


@pytest.fixture(scope="session")
def jsc_main(cifar, af_single):
    return _jsc(cifar, SNR_S, 3200)


@criterion(9, "JSC rate and PSNR near the reported operating point")
class TestOperatingPoint:
    def test_rate_and_multihop_psnr(self, cifar, jsc_main):
        rec = evaluate_jsc(jsc_main, cifar["test"], 2, SNR_S, SNR_N, "ideal", seed=0, lam=3200)
        assert 1.0 <= rec.bpp_mean <= 1.5, rec.bpp_mean
        assert abs(rec.psnr_mean - 27.6) <= 1.5, rec.psnr_mean

    def test_single_hop_psnr(self, cifar, af_single):
        rec = evaluate_analog(af_single, cifar["test"], 1, SNR_S, SNR_N, seed=0)
        assert abs(rec.psnr_mean - 28.5) <= 1.5, rec.psnr_mean


@pytest.fixture(scope="session")
def hop_curves(cifar, af_single, jsc_main):
    """PSNR for n = 1..6 of JSC, AF, PF, 4-bit Lloyd naive and the 32-bit bound."""
    images = cifar["test"]
    pf = {1: af_single}
    for n in range(2, N_MAX + 1):
        pf[n] = _trained(cifar, f"pf_n{n}", scheme="PF", n_hops=n, snr_s_db=SNR_S)
    design = received_components(cifar["val"], af_single, snr_db_to_sigma2(SNR_S), seed=1)
    q4 = lloyd_design(design[:1_000_000], 4)
    curves = {k: {} for k in ("JSC", "AF", "PF", "naive4", "naive32")}
    for n in range(1, N_MAX + 1):
        curves["JSC"][n] = evaluate_jsc(jsc_main, images, n, SNR_S, SNR_N).psnr_mean
        curves["AF"][n] = evaluate_analog(af_single, images, n, SNR_S, SNR_N).psnr_mean
        curves["PF"][n] = evaluate_analog(pf[n], images, n, SNR_S, SNR_N).psnr_mean
        if n >= 2:
            curves["naive4"][n] = evaluate_naive(af_single, images, n, SNR_S, SNR_N, 4, q4).psnr_mean
            curves["naive32"][n] = evaluate_naive(af_single, images, n, SNR_S, SNR_N, 32).psnr_mean
    return curves


@criterion(10, "PSNR orderings across hop counts")
class TestHopOrderings:
    def test_analog_decreasing(self, hop_curves):
        for scheme in ("AF", "PF"):
            p = [hop_curves[scheme][n] for n in range(1, N_MAX + 1)]
            assert all(a > b for a, b in zip(p, p[1:])), (scheme, p)

    def test_jsc_constant_after_first_relay(self, hop_curves):
        p = [hop_curves["JSC"][n] for n in range(2, N_MAX + 1)]
        assert max(p) == min(p), p

    def test_jsc_wins_on_long_chains(self, hop_curves):
        for n in range(4, N_MAX + 1):
            assert hop_curves["JSC"][n] >= hop_curves["AF"][n], n
            assert hop_curves["JSC"][n] >= hop_curves["PF"][n], n

    def test_jsc_beats_four_bit_naive(self, hop_curves):
        for n in range(2, N_MAX + 1):
            assert hop_curves["JSC"][n] > hop_curves["naive4"][n], n

    def test_float_bound_dominates(self, hop_curves):
        for n in range(2, N_MAX + 1):
            bound = hop_curves["naive32"][n]
            assert bound >= hop_curves["JSC"][n] and bound >= hop_curves["naive4"][n], n


@criterion(11, "rate-distortion structure on a 2 x 3 grid")
def test_rd_structure(cifar, af_single):
    points = {}
    for snr in (2.0, 8.0):
        for lam in (200, 800, 3200):
            rec = evaluate_jsc(_jsc(cifar, snr, lam), cifar["test"], 2, snr, SNR_N, lam=lam)
            points[snr, lam] = (rec.bpp_mean, rec.psnr_mean)
    for snr in (2.0, 8.0):
        seq = [points[snr, lam] for lam in (200, 800, 3200)]
        assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(seq, seq[1:])), (snr, seq)
    for lam in (200, 800, 3200):
        assert points[8.0, lam][1] >= points[2.0, lam][1], lam
    # each 2 dB point lies on or below the 8 dB curve where the curves overlap in rate
    hi = sorted(points[8.0, lam] for lam in (200, 800, 3200))
    for lam in (200, 800, 3200):
        b, p = points[2.0, lam]
        if hi[0][0] <= b <= hi[-1][0]:
            assert np.interp(b, [q[0] for q in hi], [q[1] for q in hi]) >= p, lam


@criterion(12, "graceful behaviour under first-hop SNR mismatch")
def test_mismatch(cifar, af_single):
    model = _jsc(cifar, 5.0, 3200)
    recs = {r.snr_test_db: r for r in mismatch_eval(model, cifar["test"], 5.0, [2.0, 8.0])}
    p2, p5, p8 = (recs[s].psnr_mean for s in (2.0, 5.0, 8.0))
    assert p8 >= p5 >= p2, (p2, p5, p8)
    assert p5 - p2 <= 3.0
    b5 = recs[5.0].bpp_mean
    assert all(abs(recs[s].bpp_mean - b5) <= 0.05 * b5 for s in (2.0, 8.0))


@criterion(13, "hybrid beats fully digital at an equal bit budget")
def test_hybrid_beats_digital(cifar, af_single):
    budget = 768
    images = cifar["test"]
    jsc = evaluate_jsc(_jsc(cifar, SNR_S, 800), images, 2, SNR_S, SNR_N, lam=800)
    assert jsc.b1_mean <= budget, jsc.b1_mean
    digital = None
    for lam in (200, 400, 800, 1600):
        codec = _trained(cifar, f"digital_lam{lam}", scheme="digital", lam=float(lam))
        rec = evaluate_digital(codec, images, 2, SNR_S, SNR_N, "coded", lam=lam)
        if rec.b1_mean <= budget and (digital is None or rec.psnr_mean > digital.psnr_mean):
            digital = rec
    assert digital is not None, "no digital codec fits the bit budget"
    assert jsc.psnr_mean > digital.psnr_mean, (jsc.psnr_mean, digital.psnr_mean)
