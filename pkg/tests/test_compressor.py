"""Hyperprior codec: quantization, likelihoods, rate, loss and bitstreams."""
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from _checks import directional_check, relative_error
from hybrid_jscc.channel import make_generator, snr_db_to_sigma2
from hybrid_jscc.compressor import (SIGMA_MIN, CodecConfig, FactorizedPrior, HyperpriorCodec,
                                    analysis, build_cdf_factorized, compress, decompress,
                                    factorized_likelihood, gaussian_uniform_likelihood,
                                    hyper_analysis, hyper_synthesis, jsc_loss, quantize, rate_bpp)
from hybrid_jscc.deepjscc import JsccConfig
from hybrid_jscc.entropy_coding import BitstreamError, unpack_bitstream
from hybrid_jscc.hybrid import HybridJSC


@pytest.fixture
def codec(tiny_codec):
    torch.manual_seed(0)
    model = HyperpriorCodec(tiny_codec).eval()
    model.update()
    return model


class TestQuantize:
    def test_round(self):
        t = torch.tensor([2.3, -2.7, 0.5, 1.5, -0.5, 2.5])
        assert quantize(t, "round").tolist() == [2.0, -3.0, 0.0, 2.0, -0.0, 2.0]

    @given(st.integers(0, 2 ** 31 - 1))
    def test_noise_is_strictly_inside_half(self, seed):
        t = torch.randn(1000, generator=torch.Generator().manual_seed(seed)) * 10
        out = quantize(t, "noise", torch.Generator().manual_seed(seed + 1))
        assert torch.max(torch.abs(out - t)) < 0.5

    def test_noise_is_uniform(self):
        t = torch.zeros(200_000, dtype=torch.float64)
        u = quantize(t, "noise", make_generator(0))
        assert u.mean().item() == pytest.approx(0.0, abs=0.005)
        assert u.var().item() == pytest.approx(1 / 12, rel=0.01)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            quantize(torch.zeros(1), "floor")


class TestTransforms:
    def test_full_size_shapes(self):
        """CIFAR sizes with 256 latent and 192 hyper-latent channels."""
        model = HyperpriorCodec(CodecConfig())
        with torch.no_grad():
            z = analysis(torch.rand(1, 3, 32, 32), model)
            v = hyper_analysis(z, model)
            mu, sigma = hyper_synthesis(torch.round(v), model)
        assert z.shape == (1, 256, 8, 8)
        assert v.shape == (1, 192, 2, 2)
        assert mu.shape == sigma.shape == (1, 256, 8, 8)
        assert torch.all(sigma >= SIGMA_MIN)

    def test_deterministic(self, codec, images):
        with torch.no_grad():
            assert torch.equal(codec.analysis(images), codec.analysis(images))
            v = torch.round(codec.hyper_analysis(codec.analysis(images)))
            assert all(torch.equal(a, b) for a, b in zip(codec.hyper_synthesis(v),
                                                          codec.hyper_synthesis(v)))

    @pytest.mark.parametrize("fill", [0.0, 1.0])
    def test_extreme_inputs_are_finite(self, codec, fill):
        with torch.no_grad():
            out = codec(torch.full((2, 3, 32, 32), fill), "round")
        for key in ("z", "v", "recon", "bpp"):
            assert torch.isfinite(out[key]).all()

    def test_shape_errors(self, codec):
        with pytest.raises(ValueError):
            codec.analysis(torch.zeros(1, 3, 16, 32))
        with pytest.raises(ValueError):
            codec.hyper_analysis(torch.zeros(1, 5, 8, 8))


class TestGaussianLikelihood:
    def test_standard_normal_oracle(self):
        # mpmath: ncdf(0.5) - ncdf(-0.5)
        p = gaussian_uniform_likelihood(torch.zeros(1, dtype=torch.float64),
                                        torch.zeros(1, dtype=torch.float64),
                                        torch.ones(1, dtype=torch.float64))
        assert p.item() == pytest.approx(0.3829249225480262, rel=1e-12)

    def test_mass_concentrates(self):
        p = gaussian_uniform_likelihood(torch.tensor([3.0]), torch.tensor([3.0]), torch.tensor([1e-4]))
        assert p.item() == pytest.approx(1.0, abs=1e-12)

    def test_floor(self):
        p = gaussian_uniform_likelihood(torch.tensor([50.0]), torch.tensor([0.0]), torch.tensor([1.0]))
        assert p.item() == 2.0 ** -16

    @given(st.floats(-20, 20), st.floats(0.05, 30))
    def test_integer_bins_sum_to_one(self, mu, sigma):
        half = int(abs(mu) + 40 * sigma + 10)
        n = torch.arange(-half, half + 1, dtype=torch.float64)
        p = gaussian_uniform_likelihood(n, torch.full_like(n, mu), torch.full_like(n, sigma), p_min=0)
        assert p.sum().item() == pytest.approx(1.0, abs=1e-6)


class TestFactorizedPrior:
    @staticmethod
    def _perturbed(seed: int, channels: int = 6) -> FactorizedPrior:
        torch.manual_seed(seed)
        prior = FactorizedPrior(channels).double()
        with torch.no_grad():
            for p in prior.parameters():
                p.add_(torch.randn_like(p) * 0.5)
        return prior

    @given(st.integers(0, 10_000))
    @settings(max_examples=20)
    def test_integer_bins_sum_to_one(self, seed):
        prior = self._perturbed(seed)
        grid = torch.arange(-1024, 1025, dtype=torch.float64)
        v = grid.reshape(1, 1, -1, 1).expand(1, prior.channels, -1, 1)
        p = factorized_likelihood(v, prior, p_min=0)
        sums = p.sum(dim=(0, 2, 3))
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-4)
        assert torch.all(p >= 0)

    def test_cdf_monotone_with_limits(self):
        prior = self._perturbed(3)
        x = torch.linspace(-2000, 2000, 4001, dtype=torch.float64).expand(prior.channels, -1)
        with torch.no_grad():
            c = prior.cdf(x)
        assert torch.all(torch.diff(c, dim=1) >= 0)
        assert torch.all(c[:, 0] < 1e-6) and torch.all(c[:, -1] > 1 - 1e-6)

    def test_initialization_is_smooth(self):
        torch.manual_seed(0)
        prior = FactorizedPrior(4)
        v = torch.arange(-3.0, 4.0).reshape(1, 1, -1, 1).expand(1, 4, -1, 1)
        with torch.no_grad():
            p = prior.likelihood(v, p_min=0)
        assert torch.all(p > 1e-3)

    def test_table_matches_likelihood(self):
        prior = self._perturbed(5, channels=2).float()
        table = build_cdf_factorized(prior, 1)
        v = torch.arange(table.offset, table.offset + table.length, dtype=torch.float32)
        with torch.no_grad():
            p = prior.likelihood(v.reshape(1, 1, -1, 1).expand(1, 2, -1, 1), p_min=0)[0, 1, :, 0]
        assert np.allclose(table.probabilities()[:-1], p.numpy(), atol=2e-4)
        with pytest.raises(IndexError):
            build_cdf_factorized(prior, 2)


class TestRate:
    def test_certain_symbols_cost_nothing(self):
        bpp, _, _ = rate_bpp(torch.ones(8, 4, 4), torch.ones(2, 2, 2), 32, 32)
        assert bpp.item() == 0.0

    def test_half_probabilities(self):
        bpp, bz, bv = rate_bpp(torch.full((1024,), 0.5), torch.ones(4), 32, 32)
        assert (bpp.item(), bz.item(), bv.item()) == (1.0, 1.0, 0.0)

    def test_matches_log_sum_oracle(self):
        g = torch.Generator().manual_seed(0)
        p_z = torch.rand(2, 8, 8, 8, generator=g, dtype=torch.float64) * 0.99 + 0.01
        p_v = torch.rand(2, 4, 2, 2, generator=g, dtype=torch.float64) * 0.99 + 0.01
        bpp, bz, bv = rate_bpp(p_z, p_v, 32, 32)
        oz = -np.log2(p_z.numpy()).sum() / (2 * 1024)
        ov = -np.log2(p_v.numpy()).sum() / (2 * 1024)
        assert bz.item() == pytest.approx(oz, rel=1e-12)
        assert bv.item() == pytest.approx(ov, rel=1e-12)
        assert bpp.item() == pytest.approx(oz + ov, rel=1e-12)

    def test_nonpositive_probability(self):
        with pytest.raises(ValueError):
            rate_bpp(torch.zeros(4), torch.ones(4), 32, 32)


class TestLoss:
    def test_zero(self):
        s = torch.rand(1, 3, 4, 4)
        assert jsc_loss(s, s, torch.tensor(0.0), 100.0).item() == 0.0

    def test_linear_in_lambda(self):
        g = torch.Generator().manual_seed(0)
        s, s_hat = torch.rand(1, 3, 4, 4, generator=g), torch.rand(1, 3, 4, 4, generator=g)
        d1 = jsc_loss(s, s_hat, torch.tensor(0.0), 1.0).item()
        assert jsc_loss(s, s_hat, torch.tensor(0.0), 800.0).item() == pytest.approx(800 * d1, rel=1e-6)

    def test_toy_oracle(self):
        """Hand calculation: mean squared error 0.020625, times 2, plus 0.3 bpp."""
        s = torch.tensor([[0.0, 1.0], [0.5, 0.25]], dtype=torch.float64)
        s_hat = torch.tensor([[0.1, 0.9], [0.5, 0.5]], dtype=torch.float64)
        loss = jsc_loss(s, s_hat, torch.tensor(0.3, dtype=torch.float64), 2.0)
        assert loss.item() == pytest.approx(0.34125, rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            jsc_loss(torch.zeros(2, 2), torch.zeros(2, 3), torch.tensor(0.0), 1.0)
        with pytest.raises(ValueError):
            jsc_loss(torch.zeros(2, 2), torch.zeros(2, 2), torch.tensor(0.0), 0.0)


class TestBitstreams:
    def test_latents_round_trip(self, codec, images):
        with torch.no_grad():
            z = codec.analysis(images)
            v = codec.hyper_analysis(z)
        for i, stream in enumerate(compress(images, codec)):
            z_hat, v_hat = codec.decode_latents(stream.to_bytes())
            assert torch.equal(z_hat[0], torch.round(z[i]))
            assert torch.equal(v_hat[0], torch.round(v[i]))

    def test_decompress_deterministic(self, codec, images):
        data = compress(images[:1], codec)[0].to_bytes()
        a, b = decompress(data, codec), decompress(data, codec)
        assert torch.equal(a, b)
        assert a.min() >= 0 and a.max() <= 1
        with torch.no_grad():
            want = codec.g_s(torch.round(codec.analysis(images[:1])))
        assert torch.equal(a, want)

    def test_rate_matches_model(self, codec, images):
        """Coded size within 2% plus 64 bits of the per-image likelihood estimate."""
        streams = compress(images, codec)
        model = codec.model_bits(images)
        for stream, est in zip(streams, model.tolist()):
            assert abs(stream.payload_bits - est) <= 0.02 * est + 64

    def test_corrupted_header(self, codec, images):
        data = bytearray(compress(images[:1], codec)[0].to_bytes())
        data[0] ^= 0x5A
        with pytest.raises(BitstreamError):
            decompress(bytes(data), codec)

    def test_dimension_mismatch(self, codec, images):
        stream = unpack_bitstream(compress(images[:1], codec)[0].to_bytes())
        other = HyperpriorCodec(CodecConfig(c_feat=8, c_z=16, c_v=4, c_hyper=8, n_res=1))
        other.update()
        with pytest.raises(BitstreamError):
            other.decompress(stream)

    def test_tables_survive_checkpoint(self, codec, images):
        clone = HyperpriorCodec(codec.cfg)
        clone.load_state_dict(codec.state_dict())
        data = compress(images[:1], codec)[0].to_bytes()
        assert torch.equal(clone.decompress(data), codec.decompress(data))


def test_jsc_gradient_matches_finite_differences(tiny_jscc, tiny_codec):
    torch.manual_seed(0)
    model = HybridJSC(tiny_jscc, tiny_codec).double()
    from hybrid_jscc.experiments.data import synthetic_images
    images = synthetic_images(4, seed=3).double()

    def loss():
        return model.loss(images, snr_db_to_sigma2(2.0), 3200.0, make_generator(1))[0]

    for analytic, numeric in directional_check(loss, model.parameters()):
        assert relative_error(analytic, numeric) < 1e-3


def test_codec_rejects_mismatched_jscc():
    with pytest.raises(ValueError):
        HybridJSC(JsccConfig(height=32, width=32), CodecConfig(height=64, width=64))


def test_noisy_and_rounded_rates_are_close(codec, images):
    """The noisy surrogate and the rounded rate agree to within a bit per latent."""
    with torch.no_grad():
        noisy = codec(images, "noise", make_generator(0))["bpp"].item()
        rounded = codec(images, "round")["bpp"].item()
    n_latents = (codec.cfg.c_z * 64 + codec.cfg.c_v * 4) / 1024
    assert math.isfinite(noisy) and abs(noisy - rounded) < n_latents
