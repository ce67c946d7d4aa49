"""Unified encoder/decoder: analysis and synthesis as 1-D convolutions.

Spectrogram mode uses fixed sinusoid kernels K_re[k,0,n] = w[n]*cos(2*pi*n*k/L)
and K_im[k,0,n] = w[n]*sin(2*pi*n*k/L), tied between encoder and decoder and
rebuilt from the window tensor on every call so a trainable (or mutated)
window propagates everywhere.  Waveform mode swaps in free trainable kernels
and a ReLU after analysis; nothing else changes.

Sign convention: with K_im = +w*sin the phase returned by ``magnitude_phase``
is the negative of the e^{-i...} STFT phase.  The per-frame deterministic
phase factor of the convolution formulation is folded out entirely: encoder
and decoder share kernels, so it cancels on the round trip, and magnitudes
and phase *differences* are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, InputError

ENVELOPE_FLOOR = 1e-8
EDGE_GATE_FRACTION = 0.05


@dataclass
class CodecConfig:
    """Encoder/decoder settings.

    domain: "spectrogram" or "waveform"
    L: window/filter length in samples; hop: analysis stride
    N: filter count (spectrogram forces N = L/2 + 1)
    window: "fixed-hann" or "trainable" (spectrogram only)
    """

    domain: str = "spectrogram"
    L: int = 512
    hop: int = 160
    N: int = 257
    window: str = "fixed-hann"
    fs: int = 16000

    def __post_init__(self):
        if self.domain not in ("spectrogram", "waveform"):
            raise ConfigError(f"unknown codec domain {self.domain!r}")
        if self.hop < 1 or self.hop > self.L:
            raise ConfigError(f"hop must be in [1, L]; got hop={self.hop}, L={self.L}")
        if self.domain == "spectrogram":
            if self.L % 2 != 0:
                raise ConfigError(f"spectrogram window length must be even, got {self.L}")
            if self.N != self.L // 2 + 1:
                raise ConfigError(f"spectrogram requires N = L/2 + 1 = {self.L // 2 + 1}, got {self.N}")
            if self.window not in ("fixed-hann", "trainable"):
                raise ConfigError(f"unknown window mode {self.window!r}")

    @property
    def frames_for(self):
        return lambda t: (t - self.L) // self.hop + 1


@dataclass
class ComplexFrames:
    """Real/imaginary analysis planes, each [N x F]."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise InputError(f"re/im shape mismatch: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self):
        return self.re.shape


def hann_window(length: int) -> Tensor:
    """Periodic Hann: w[n] = 0.5*(1 - cos(2*pi*n/L)).  Requires even L."""
    if length < 2 or length % 2 != 0:
        raise ConfigError(f"Hann window length must be even and >= 2, got {length}")
    n = np.arange(length)
    return Tensor(0.5 * (1.0 - np.cos(2.0 * np.pi * n / length)))


def _sinusoid_tables(length: int, bins: int):
    n = np.arange(length)[None, None, :]
    k = np.arange(bins)[:, None, None]
    angle = 2.0 * np.pi * n * k / length
    return np.cos(angle), np.sin(angle)


def build_stft_kernels(length: int, bins: int, window: Tensor):
    """Windowed analysis kernels (K_re, K_im), each [bins x 1 x length].

    Differentiable in the window: built with tape ops so a trainable
    window receives gradients through both analysis and synthesis.
    """
    if window.size != length:
        raise ConfigError(f"window length {window.size} != kernel length {length}")
    cos_t, sin_t = _sinusoid_tables(length, bins)
    w = ad.reshape(window, (1, 1, length))
    k_re = ad.mul(Tensor(cos_t), w)
    k_im = ad.mul(Tensor(sin_t), w)
    return k_re, k_im


class KernelBank:
    """Filter set backing one codec; spectrogram kernels are tied and lazy.

    Spectrogram: holds the window (a Parameter when trainable) and rebuilds
    K_re/K_im from it on demand.  Waveform: independent trainable ``enc``
    and ``dec`` parameters of shape [N x 1 x L].
    """

    def __init__(self, config: CodecConfig, rng: np.random.Generator | None = None):
        self.config = config
        if config.domain == "spectrogram":
            w = hann_window(config.L)
            if config.window == "trainable":
                self.window_param = Parameter(w)
                self.window = self.window_param.value
            else:
                self.window_param = None
                self.window = w
            self.enc = None
            self.dec = None
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            bound = (1.0 / config.L) ** 0.5
            self.enc = Parameter(rng.uniform(-bound, bound, size=(config.N, 1, config.L)))
            self.dec = Parameter(rng.uniform(-bound, bound, size=(config.N, 1, config.L)))
            self.window_param = None
            self.window = None

    def stft_kernels(self):
        if self.config.domain != "spectrogram":
            raise ConfigError("stft_kernels only exist in spectrogram mode")
        return build_stft_kernels(self.config.L, self.config.N, self.window)

    def parameters(self):
        named = {}
        if self.window_param is not None:
            named["codec.window"] = self.window_param
        if self.enc is not None:
            named["codec.enc"] = self.enc
            named["codec.dec"] = self.dec
        return named


def encode(signal: Tensor, bank: KernelBank, config: CodecConfig):
    """Analyze a [T] signal into frames at stride ``hop``.

    Spectrogram -> ComplexFrames; waveform -> non-negative [N x F] latent.
    """
    signal = signal if isinstance(signal, Tensor) else Tensor(signal)
    if signal.ndim != 1:
        raise InputError(f"encode expects a mono [T] signal, got shape {signal.shape}")
    if signal.size < config.L:
        raise InputError(f"signal length {signal.size} shorter than one window ({config.L})")
    x = ad.reshape(signal, (1, signal.size))
    if config.domain == "spectrogram":
        k_re, k_im = bank.stft_kernels()
        re = ad.conv1d(x, k_re, stride=config.hop)
        im = ad.conv1d(x, k_im, stride=config.hop)
        return ComplexFrames(re=re, im=im)
    latent = ad.relu(ad.conv1d(x, bank.enc.value, stride=config.hop))
    return latent


def magnitude_phase(frames: ComplexFrames):
    """Polar split: mag = sqrt(re^2 + im^2), phase = atan2(im, re).

    atan2(0, 0) = 0 by convention, so silent bins get phase 0.
    """
    mag = ad.hypot(frames.re, frames.im)
    phase = ad.atan2(frames.im, frames.re)
    return mag, phase


def reconstruct_complex(mag: Tensor, phase: Tensor) -> ComplexFrames:
    """Polar to rectangular; magnitudes must be non-negative."""
    if mag.shape != phase.shape:
        raise InputError(f"mag/phase shape mismatch: {mag.shape} vs {phase.shape}")
    if (mag.data < 0).any():
        raise InputError("reconstruct_complex requires non-negative magnitudes")
    return ComplexFrames(re=ad.mul(mag, ad.cos(phase)), im=ad.mul(mag, ad.sin(phase)))


def _bin_weights(config: CodecConfig) -> np.ndarray:
    # one-sided spectrum: interior bins stand for a conjugate pair
    v = np.full(config.N, 2.0 / config.L)
    v[0] = 1.0 / config.L
    if config.L % 2 == 0:
        v[-1] = 1.0 / config.L
    return v


def synthesis_envelope(window: Tensor, hop: int, frames: int) -> Tensor:
    """Overlap-added squared-window envelope sum_m w^2[t - m*hop]."""
    w2 = ad.reshape(ad.square(window), (1, 1, window.size))
    ones = Tensor(np.ones((1, frames)))
    return ad.conv_transpose1d(ones, w2, stride=hop)


def decode(frames, bank: KernelBank, config: CodecConfig, out_len: int) -> Tensor:
    """Synthesize a [T] signal from analysis frames.

    Spectrogram: transposed convolution with the tied kernels (window applied
    once at analysis, once at synthesis), one-sided bins weighted 2/L
    (1/L at DC/Nyquist), then per-sample division by the squared-window
    overlap envelope.  Edge samples whose envelope falls below a small
    fraction of its peak are tapered to zero rather than amplified (they
    are unrecoverable once a mask has been applied).  Waveform: transposed
    convolution with the trainable decoder kernels, overlapping frames
    summed.
    """
    if config.domain == "spectrogram":
        if not isinstance(frames, ComplexFrames):
            raise InputError("spectrogram decode expects ComplexFrames")
        n_frames = frames.shape[1]
        k_re, k_im = bank.stft_kernels()
        weights = Tensor(_bin_weights(config)[:, None])
        re = ad.mul(frames.re, weights)
        im = ad.mul(frames.im, weights)
        y = ad.add(
            ad.conv_transpose1d(re, k_re, stride=config.hop),
            ad.conv_transpose1d(im, k_im, stride=config.hop),
        )
        env = synthesis_envelope(bank.window, config.hop, n_frames)
        full = y.shape[1]
        interior = slice(config.L, full - config.L)
        if interior.stop > interior.start and env.data[0, interior].min() < ENVELOPE_FLOOR:
            raise ConfigError(
                f"synthesis envelope below {ENVELOPE_FLOOR} inside the signal: "
                f"hop={config.hop} does not overlap-add with this window"
            )
        # exact division where overlap coverage is healthy; below the gate
        # (signal edges, where only a vanishing window tail covers a sample)
        # the division would amplify masked-frame leakage without bound, so
        # taper towards zero instead: y * env / tau^2 is continuous at the
        # seam.  tau is the gate fraction of the mean coverage sum(w^2)/hop,
        # kept on-tape so a trainable window differentiates through both
        # branches; only the boolean gate pattern itself is frozen.
        tau_t = ad.mul(ad.sum_(ad.square(bank.window)),
                       Tensor(np.array(EDGE_GATE_FRACTION / config.hop)))
        gate = (env.data >= float(tau_t.data.reshape(-1)[0])).astype(np.float64)
        denom = ad.add(ad.mul(env, Tensor(gate)), ad.mul(tau_t, Tensor(1.0 - gate)))
        factor = ad.add(
            ad.div(Tensor(gate), denom),
            ad.mul(Tensor(1.0 - gate), ad.div(env, ad.square(tau_t))),
        )
        y = ad.mul(y, factor)
    else:
        latent = frames
        y = ad.conv_transpose1d(latent, bank.dec.value, stride=config.hop)
        full = y.shape[1]
    if full >= out_len:
        y = ad.narrow(y, 1, 0, out_len)
    else:
        pad = Tensor(np.zeros((1, out_len - full)))
        y = ad.concat([y, pad], axis=1)
    return ad.reshape(y, (out_len,))
