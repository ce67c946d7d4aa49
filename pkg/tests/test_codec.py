import numpy as np
import pytest

from sepkit import autodiff as ad
from sepkit import codec
from sepkit.errors import ConfigError, InputError


def naive_stft(x, w, hop):
    """Windowed-DFT oracle: per-frame rfft of the windowed slice."""
    length = len(w)
    n_frames = (len(x) - length) // hop + 1
    out = np.empty((length // 2 + 1, n_frames), dtype=complex)
    for m in range(n_frames):
        out[:, m] = np.fft.rfft(x[m * hop : m * hop + length] * w)
    return out


def spectrogram_config(L=512, hop=160):
    return codec.CodecConfig(domain="spectrogram", L=L, hop=hop, N=L // 2 + 1)


class TestHannWindow:
    def test_endpoints(self):
        w = codec.hann_window(512).data
        assert w[0] == 0.0
        assert w[256] == 1.0

    def test_cola_pairs(self):
        w = codec.hann_window(64).data
        assert np.allclose(w[:32] + w[32:], 1.0, atol=1e-12)

    def test_odd_length_rejected(self):
        with pytest.raises(ConfigError):
            codec.hann_window(33)


class TestStftKernels:
    def test_dc_row_is_window(self):
        w = codec.hann_window(32)
        k_re, k_im = codec.build_stft_kernels(32, 17, w)
        assert np.allclose(k_re.data[0, 0], w.data)
        assert np.array_equal(k_im.data[0, 0], np.zeros(32))

    def test_nyquist_row_imaginary_vanishes(self):
        w = codec.hann_window(32)
        _, k_im = codec.build_stft_kernels(32, 17, w)
        assert np.abs(k_im.data[16, 0]).max() < 1e-12

    def test_row_energy_matches_direct_summation(self):
        length, bins = 64, 33
        w = codec.hann_window(length)
        k_re, k_im = codec.build_stft_kernels(length, bins, w)
        n = np.arange(length)
        for k in (0, 1, 5, 17, 32):
            direct_re = np.sum((w.data * np.cos(2 * np.pi * n * k / length)) ** 2)
            direct_im = np.sum((w.data * np.sin(2 * np.pi * n * k / length)) ** 2)
            assert abs(np.sum(k_re.data[k] ** 2) - direct_re) < 1e-12
            assert abs(np.sum(k_im.data[k] ** 2) - direct_im) < 1e-12
            # cos^2 + sin^2 = 1: combined row energy is the window energy
            total = np.sum(k_re.data[k] ** 2) + np.sum(k_im.data[k] ** 2)
            assert abs(total - np.sum(w.data**2)) < 1e-10


class TestEncode:
    def test_zero_signal_gives_zero_frames(self):
        cfg = spectrogram_config()
        bank = codec.KernelBank(cfg)
        frames = codec.encode(ad.tensor(np.zeros(4000)), bank, cfg)
        assert np.array_equal(frames.re.data, np.zeros_like(frames.re.data))
        assert np.array_equal(frames.im.data, np.zeros_like(frames.im.data))

    def test_short_signal_rejected(self):
        cfg = spectrogram_config()
        bank = codec.KernelBank(cfg)
        with pytest.raises(InputError):
            codec.encode(ad.tensor(np.zeros(100)), bank, cfg)

    def test_1khz_cosine_peaks_at_bin_32(self):
        cfg = spectrogram_config()
        bank = codec.KernelBank(cfg)
        t = np.arange(16000) / 16000.0
        x = np.cos(2 * np.pi * 1000.0 * t)
        frames = codec.encode(ad.tensor(x), bank, cfg)
        mag, _ = codec.magnitude_phase(frames)
        # 1000 Hz / (16000 / 512) Hz-per-bin = bin 32
        assert np.all(np.argmax(mag.data, axis=0) == 32)

    def test_magnitude_matches_windowed_dft_oracle(self):
        rng = np.random.default_rng(11)
        cfg = spectrogram_config()
        bank = codec.KernelBank(cfg)
        x = rng.standard_normal(16000)
        frames = codec.encode(ad.tensor(x), bank, cfg)
        mag, _ = codec.magnitude_phase(frames)
        oracle = np.abs(naive_stft(x, codec.hann_window(512).data, 160))
        tol = 1e-6 * np.maximum(oracle, 1e-3 * oracle.max())
        assert np.all(np.abs(mag.data - oracle) <= tol)

    def test_waveform_latent_is_nonnegative(self):
        rng = np.random.default_rng(5)
        cfg = codec.CodecConfig(domain="waveform", L=40, hop=20, N=64)
        bank = codec.KernelBank(cfg, rng=rng)
        latent = codec.encode(ad.tensor(rng.standard_normal(2000)), bank, cfg)
        assert latent.shape == (64, (2000 - 40) // 20 + 1)
        assert latent.data.min() >= 0.0


class TestPolar:
    def test_three_four_five(self):
        frames = codec.ComplexFrames(re=ad.tensor([[3.0]]), im=ad.tensor([[4.0]]))
        mag, phase = codec.magnitude_phase(frames)
        assert mag.data[0, 0] == 5.0
        assert abs(phase.data[0, 0] - 0.92729522) < 1e-7

    def test_zero_convention(self):
        frames = codec.ComplexFrames(re=ad.tensor([[0.0]]), im=ad.tensor([[0.0]]))
        mag, phase = codec.magnitude_phase(frames)
        assert mag.data[0, 0] == 0.0
        assert phase.data[0, 0] == 0.0

    def test_reconstruct_inverts_modulus_example(self):
        out = codec.reconstruct_complex(ad.tensor([[5.0]]), ad.tensor([[np.arctan2(4.0, 3.0)]]))
        assert abs(out.re.data[0, 0] - 3.0) < 1e-12
        assert abs(out.im.data[0, 0] - 4.0) < 1e-12

    def test_zero_phase_zero_imaginary(self):
        out = codec.reconstruct_complex(ad.tensor([[2.0, 7.0]]), ad.tensor([[0.0, 0.0]]))
        assert np.array_equal(out.im.data, [[0.0, 0.0]])

    def test_negative_magnitude_rejected(self):
        with pytest.raises(InputError):
            codec.reconstruct_complex(ad.tensor([[-1.0]]), ad.tensor([[0.0]]))

    def test_polar_round_trip(self):
        rng = np.random.default_rng(2)
        frames = codec.ComplexFrames(
            re=ad.tensor(rng.standard_normal((9, 6))), im=ad.tensor(rng.standard_normal((9, 6)))
        )
        mag, phase = codec.magnitude_phase(frames)
        back = codec.reconstruct_complex(mag, phase)
        assert np.abs(back.re.data - frames.re.data).max() < 1e-7
        assert np.abs(back.im.data - frames.im.data).max() < 1e-7


class TestDecode:
    @pytest.mark.parametrize("hop", [128, 160, 256])
    def test_perfect_reconstruction_interior(self, hop):
        rng = np.random.default_rng(hop)
        cfg = spectrogram_config(hop=hop)
        bank = codec.KernelBank(cfg)
        x = rng.standard_normal(16000)
        frames = codec.encode(ad.tensor(x), bank, cfg)
        y = codec.decode(frames, bank, cfg, out_len=16000)
        n_frames = frames.shape[1]
        interior = slice(cfg.L, (n_frames - 1) * hop)
        err = np.abs(y.data[interior] - x[interior]).max() / np.abs(x[interior]).max()
        assert err < 1e-6

    def test_zero_frames_decode_to_zero(self):
        cfg = spectrogram_config()
        bank = codec.KernelBank(cfg)
        frames = codec.ComplexFrames(re=ad.tensor(np.zeros((257, 20))), im=ad.tensor(np.zeros((257, 20))))
        y = codec.decode(frames, bank, cfg, out_len=4000)
        assert np.array_equal(y.data, np.zeros(4000))

    def test_linearity(self):
        rng = np.random.default_rng(9)
        cfg = spectrogram_config()
        bank = codec.KernelBank(cfg)
        shape = (257, 12)

        def make():
            return codec.ComplexFrames(
                re=ad.tensor(rng.standard_normal(shape)), im=ad.tensor(rng.standard_normal(shape))
            )

        f1, f2 = make(), make()
        a, b = 0.7, -1.9
        combined = codec.ComplexFrames(
            re=ad.tensor(a * f1.re.data + b * f2.re.data),
            im=ad.tensor(a * f1.im.data + b * f2.im.data),
        )
        y = codec.decode(combined, bank, cfg, out_len=3000).data
        y12 = a * codec.decode(f1, bank, cfg, out_len=3000).data + b * codec.decode(f2, bank, cfg, out_len=3000).data
        assert np.abs(y - y12).max() < 1e-9

    def test_non_overlapping_hop_rejected(self):
        # hop == L with a Hann window leaves zero-envelope samples inside
        cfg = spectrogram_config(hop=512)
        bank = codec.KernelBank(cfg)
        frames = codec.encode(ad.tensor(np.random.default_rng(0).standard_normal(8192)), bank, cfg)
        with pytest.raises(ConfigError):
            codec.decode(frames, bank, cfg, out_len=8192)


class TestProperties:
    def test_parseval_with_symmetric_bin_weighting(self):
        rng = np.random.default_rng(21)
        cfg = spectrogram_config()
        bank = codec.KernelBank(cfg)
        x = rng.standard_normal(4000)
        frames = codec.encode(ad.tensor(x), bank, cfg)
        w = codec.hann_window(512).data
        weights = np.full(257, 2.0)
        weights[0] = weights[-1] = 1.0
        power = frames.re.data**2 + frames.im.data**2
        lhs = (weights[:, None] * power).sum(axis=0)
        n_frames = frames.shape[1]
        rhs = np.array(
            [512.0 * np.sum((x[m * 160 : m * 160 + 512] * w) ** 2) for m in range(n_frames)]
        )
        assert np.abs(lhs - rhs).max() / rhs.max() < 1e-6

    def test_tied_kernels_single_source_of_truth(self):
        cfg = spectrogram_config()
        bank = codec.KernelBank(cfg)
        k_re0 = bank.stft_kernels()[0].data.copy()
        bank.window.data *= 0.5
        k_re1, k_im1 = bank.stft_kernels()
        assert np.allclose(k_re1.data, 0.5 * k_re0)
        # encoder and decoder rebuild from the same window: round trip still exact
        rng = np.random.default_rng(3)
        x = rng.standard_normal(8000)
        frames = codec.encode(ad.tensor(x), bank, cfg)
        y = codec.decode(frames, bank, cfg, out_len=8000)
        n_frames = frames.shape[1]
        interior = slice(cfg.L, (n_frames - 1) * cfg.hop)
        assert np.abs(y.data[interior] - x[interior]).max() / np.abs(x[interior]).max() < 1e-6

    def test_trainable_window_receives_gradients(self):
        # plain decode(encode(x)) is window-invariant (the envelope division
        # cancels any window), so drive the loss through a fixed random mask
        cfg = codec.CodecConfig(domain="spectrogram", L=16, hop=8, N=9, window="trainable")
        bank = codec.KernelBank(cfg)
        rng = np.random.default_rng(8)
        x = ad.tensor(rng.standard_normal(80))
        mask = ad.tensor(rng.uniform(0.0, 1.0, size=(9, 9)))

        def loss_value():
            frames = codec.encode(x, bank, cfg)
            masked = codec.ComplexFrames(re=ad.mul(frames.re, mask), im=ad.mul(frames.im, mask))
            y = codec.decode(masked, bank, cfg, out_len=80)
            return ad.sum_(ad.square(y))

        with ad.Tape() as tape:
            loss = loss_value()
            tape.backward(loss)
        grad = bank.window_param.value.grad
        assert grad is not None and np.abs(grad).max() > 0
        # spot-check five window coordinates against central differences
        eps = 1e-6
        for idx in (1, 4, 7, 10, 14):
            orig = bank.window.data[idx]
            bank.window.data[idx] = orig + eps
            hi = loss_value().item()
            bank.window.data[idx] = orig - eps
            lo = loss_value().item()
            bank.window.data[idx] = orig
            fd = (hi - lo) / (2 * eps)
            assert abs(grad[idx] - fd) / max(abs(fd), 1e-9) < 1e-4
