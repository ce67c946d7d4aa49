"""Inter-microphone phase difference features for multi-channel input.

Raw IPDs are plain phase differences (never wrapped); only their cos/sin
enter the network, and those are wrap-invariant.  With this codec's kernel
sign convention (imaginary kernel = +w*sin) a pure delay of d samples
between a pair shows up as ipd ~ -2*pi*k*d/L, i.e. the negative of the
e^{-i...} STFT convention; cosine features are unaffected, sine features
are globally negated.  Both IPD routes below use the same atan2(im, re)
phase, so they agree bin-for-bin.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from . import codec as codec_mod
from .autodiff import Tensor
from .errors import AlignmentError, ConfigError

# microphone pairs used by the two simulated-corpus recipes (1-based)
WSJ0_PAIRS = ((1, 4), (2, 5), (3, 6), (1, 2), (3, 4), (5, 6))
LS_PAIRS = ((1, 4), (2, 5), (3, 6), (2, 6), (3, 5), (1, 6), (4, 5))


@dataclass(frozen=True)
class PairSet:
    """Ordered 1-based microphone index pairs."""

    pairs: tuple

    def __post_init__(self):
        norm = tuple((int(u1), int(u2)) for u1, u2 in self.pairs)
        object.__setattr__(self, "pairs", norm)
        for u1, u2 in norm:
            if u1 == u2:
                raise ConfigError(f"microphone pair ({u1}, {u2}) repeats an index")
            if u1 < 1 or u2 < 1:
                raise ConfigError("microphone indices are 1-based")

    def __len__(self):
        return len(self.pairs)

    def validate_against(self, channels: int):
        for u1, u2 in self.pairs:
            if u1 > channels or u2 > channels:
                raise ConfigError(f"pair ({u1}, {u2}) outside channel count {channels}")


@dataclass
class SpatialFeatures:
    """Per-pair phase differences and their cos/sin, each [U x N x F]."""

    ipd: Tensor
    cos_ipd: Tensor
    sin_ipd: Tensor

    @property
    def num_pairs(self):
        return self.ipd.shape[0]


def _stack3(parts):
    n, f = parts[0].shape
    return ad.concat([ad.reshape(p, (1, n, f)) for p in parts], axis=0)


def ipd(phases, pairs: PairSet) -> SpatialFeatures:
    """Phase-difference features from per-channel [N x F] phase tensors."""
    pairs.validate_against(len(phases))
    shape = phases[0].shape
    for p in phases:
        if p.shape != shape:
            raise AlignmentError(f"per-channel phase shapes differ: {p.shape} vs {shape}")
    diffs = [ad.sub(phases[u1 - 1], phases[u2 - 1]) for u1, u2 in pairs.pairs]
    raw = _stack3(diffs)
    return SpatialFeatures(ipd=raw, cos_ipd=ad.cos(raw), sin_ipd=ad.sin(raw))


def ipd_from_waveform(channels, bank: codec_mod.KernelBank, config: codec_mod.CodecConfig, pairs: PairSet) -> SpatialFeatures:
    """IPD straight from waveforms via the analysis kernels.

    Equivalent to encoding each channel and differencing phases; the
    analysis window/stride must match the main encoder so the feature
    frames align without resampling.
    """
    phases = []
    for ch in channels:
        frames = codec_mod.encode(ch if isinstance(ch, Tensor) else Tensor(ch), bank, config)
        _, phase = codec_mod.magnitude_phase(frames)
        phases.append(phase)
    return ipd(phases, pairs)


def assemble_features(primary: Tensor, spatial: SpatialFeatures | None) -> Tensor:
    """Channel-axis concat [primary | cos blocks | sin blocks].

    Output width = N_primary + 2 * num_pairs * N_ipd; with N_primary ==
    N_ipd that is the (1 + 2U) multiplier of the multi-channel input.
    """
    if spatial is None or spatial.num_pairs == 0:
        return primary
    frames = primary.shape[-1]
    u, n, f = spatial.cos_ipd.shape
    if f != frames:
        raise AlignmentError(f"spatial frames {f} != primary frames {frames}")
    cos_flat = ad.reshape(spatial.cos_ipd, (u * n, f))
    sin_flat = ad.reshape(spatial.sin_ipd, (u * n, f))
    return ad.concat([primary, cos_flat, sin_flat], axis=0)
