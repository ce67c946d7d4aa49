import numpy as np
import pytest

from sepkit import autodiff as ad
from sepkit import codec, spatial
from sepkit.errors import ConfigError


def encode_phase(x, bank, cfg):
    frames = codec.encode(ad.tensor(x), bank, cfg)
    _, phase = codec.magnitude_phase(frames)
    return phase


@pytest.fixture(scope="module")
def stft():
    cfg = codec.CodecConfig(domain="spectrogram", L=512, hop=160, N=257)
    return codec.KernelBank(cfg), cfg


class TestIpd:
    def test_identical_channels(self, stft):
        bank, cfg = stft
        x = np.random.default_rng(0).standard_normal(4000)
        phase = encode_phase(x, bank, cfg)
        feats = spatial.ipd([phase, phase], spatial.PairSet(((1, 2),)))
        assert np.array_equal(feats.ipd.data, np.zeros_like(feats.ipd.data))
        assert np.allclose(feats.cos_ipd.data, 1.0)
        assert np.allclose(feats.sin_ipd.data, 0.0)

    def test_integer_delay_matches_analytic_linear_phase(self, stft):
        # tones at exact bin centers make the delay relation essentially exact;
        # kernel sign convention gives ipd = -2*pi*k*d/L for a d-sample lag
        bank, cfg = stft
        rng = np.random.default_rng(1)
        bins = (32, 57, 100)
        d = 3
        n = np.arange(9000)
        x_long = sum(np.cos(2 * np.pi * k * n / cfg.L + rng.uniform(0, 2 * np.pi)) for k in bins)
        ch1 = x_long[d : d + 8000]
        ch2 = x_long[: 8000]  # ch2[n] = ch1[n - d]
        p1 = encode_phase(ch1, bank, cfg)
        p2 = encode_phase(ch2, bank, cfg)
        feats = spatial.ipd([p1, p2], spatial.PairSet(((1, 2),)))
        for k in bins:
            expected = 2 * np.pi * k * d / cfg.L
            assert np.abs(feats.cos_ipd.data[0, k] - np.cos(expected)).max() < 2e-3
            assert np.abs(feats.sin_ipd.data[0, k] + np.sin(expected)).max() < 2e-3

    def test_swapping_pair_negates(self, stft):
        bank, cfg = stft
        rng = np.random.default_rng(2)
        p1 = encode_phase(rng.standard_normal(4000), bank, cfg)
        p2 = encode_phase(rng.standard_normal(4000), bank, cfg)
        fwd = spatial.ipd([p1, p2], spatial.PairSet(((1, 2),)))
        rev = spatial.ipd([p1, p2], spatial.PairSet(((2, 1),)))
        assert np.allclose(rev.ipd.data, -fwd.ipd.data)
        assert np.allclose(rev.cos_ipd.data, fwd.cos_ipd.data)
        assert np.allclose(rev.sin_ipd.data, -fwd.sin_ipd.data)

    def test_zero_channel_phase_convention(self, stft):
        bank, cfg = stft
        rng = np.random.default_rng(3)
        p1 = encode_phase(rng.standard_normal(4000), bank, cfg)
        p0 = encode_phase(np.zeros(4000), bank, cfg)
        feats = spatial.ipd([p1, p0], spatial.PairSet(((1, 2),)))
        assert np.array_equal(feats.ipd.data[0], p1.data)

    def test_pair_out_of_range(self, stft):
        bank, cfg = stft
        p = encode_phase(np.zeros(4000), bank, cfg)
        with pytest.raises(ConfigError):
            spatial.ipd([p, p], spatial.PairSet(((1, 3),)))

    def test_repeated_index_rejected(self):
        with pytest.raises(ConfigError):
            spatial.PairSet(((2, 2),))


class TestProperties:
    def test_cos_sin_identity(self, stft):
        bank, cfg = stft
        rng = np.random.default_rng(4)
        phases = [encode_phase(rng.standard_normal(4000), bank, cfg) for _ in range(4)]
        feats = spatial.ipd(phases, spatial.PairSet(((1, 2), (3, 4), (1, 4))))
        assert np.abs(feats.cos_ipd.data**2 + feats.sin_ipd.data**2 - 1.0).max() < 1e-6

    def test_per_channel_gain_invariance(self, stft):
        bank, cfg = stft
        rng = np.random.default_rng(5)
        x1 = rng.standard_normal(4000)
        x2 = rng.standard_normal(4000)
        pairs = spatial.PairSet(((1, 2),))
        base = spatial.ipd([encode_phase(x1, bank, cfg), encode_phase(x2, bank, cfg)], pairs)
        scaled = spatial.ipd([encode_phase(3.7 * x1, bank, cfg), encode_phase(x2, bank, cfg)], pairs)
        assert np.abs(base.ipd.data - scaled.ipd.data).max() < 1e-9
        assert np.abs(base.cos_ipd.data - scaled.cos_ipd.data).max() < 1e-9

    def test_route_equivalence(self, stft):
        bank, cfg = stft
        rng = np.random.default_rng(6)
        channels = [rng.standard_normal(4000), rng.standard_normal(4000)]
        pairs = spatial.PairSet(((1, 2), (2, 1)))
        via_phases = spatial.ipd([encode_phase(c, bank, cfg) for c in channels], pairs)
        via_kernels = spatial.ipd_from_waveform(channels, bank, cfg, pairs)
        assert np.abs(via_phases.ipd.data - via_kernels.ipd.data).max() < 1e-9
        assert np.abs(via_phases.cos_ipd.data - via_kernels.cos_ipd.data).max() < 1e-9
        assert np.abs(via_phases.sin_ipd.data - via_kernels.sin_ipd.data).max() < 1e-9


class TestAssemble:
    def _features(self, stft, n_ch, pairs):
        bank, cfg = stft
        rng = np.random.default_rng(7)
        channels = [rng.standard_normal(4000) for _ in range(n_ch)]
        frames = codec.encode(ad.tensor(channels[0]), bank, cfg)
        mag, _ = codec.magnitude_phase(frames)
        feats = spatial.ipd_from_waveform(channels, bank, cfg, pairs) if pairs else None
        return mag, feats

    def test_wsj0_pairs_width_13x(self, stft):
        mag, feats = self._features(stft, 6, spatial.PairSet(spatial.WSJ0_PAIRS))
        out = spatial.assemble_features(mag, feats)
        assert out.shape[0] == 257 * 13 == 3341
        assert out.shape[1] == mag.shape[1]

    def test_ls_pairs_width_15x(self, stft):
        mag, feats = self._features(stft, 6, spatial.PairSet(spatial.LS_PAIRS))
        out = spatial.assemble_features(mag, feats)
        assert out.shape[0] == 257 * 15 == 3855

    def test_no_pairs_passthrough(self, stft):
        mag, _ = self._features(stft, 1, None)
        out = spatial.assemble_features(mag, None)
        assert out is mag

    def test_frame_mismatch_is_alignment_error(self, stft):
        from sepkit.errors import AlignmentError

        bank, cfg = stft
        rng = np.random.default_rng(9)
        channels = [rng.standard_normal(4000) for _ in range(2)]
        feats = spatial.ipd_from_waveform(channels, bank, cfg, spatial.PairSet(((1, 2),)))
        short_mag, _ = codec.magnitude_phase(
            codec.encode(ad.tensor(channels[0][:2000]), bank, cfg)
        )
        with pytest.raises(AlignmentError):
            spatial.assemble_features(short_mag, feats)

    def test_layout_primary_cos_sin(self, stft):
        bank, cfg = stft
        rng = np.random.default_rng(8)
        channels = [rng.standard_normal(4000) for _ in range(2)]
        frames = codec.encode(ad.tensor(channels[0]), bank, cfg)
        mag, _ = codec.magnitude_phase(frames)
        feats = spatial.ipd_from_waveform(channels, bank, cfg, spatial.PairSet(((1, 2),)))
        out = spatial.assemble_features(mag, feats)
        n = 257
        assert np.array_equal(out.data[:n], mag.data)
        assert np.array_equal(out.data[n : 2 * n], feats.cos_ipd.data[0])
        assert np.array_equal(out.data[2 * n :], feats.sin_ipd.data[0])
