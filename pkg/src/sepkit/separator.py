"""Dilated temporal-convolution mask estimator.

The trunk is R repeats of X residual blocks; block x (in every repeat) runs
at dilation 2^x.  Each block is 1x1 conv (B->H), PReLU, norm, depthwise conv
(kernel P, dilated), PReLU, norm, then a 1x1 conv back to B so the residual
add type-checks.  A channel-wise layer norm plus 1x1 bottleneck conv feeds
the trunk; PReLU, a 1x1 conv to S*N channels and a ReLU produce S
non-negative masks.

Causality is purely a padding policy: non-causal blocks pad symmetrically,
causal blocks pad left only, and semi-causal runs the first repeat
non-causal and every later repeat causal, which divides the lookahead by R.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Parameter, Tensor
from .errors import ConfigError

CAUSALITY_MODES = ("non_causal", "causal", "semi_causal")
NORM_KINDS = ("BN", "gLN", "cLN")
MASK_ACTIVATIONS = ("relu", "sigmoid", "linear")


@dataclass
class TcnConfig:
    """Separator hyperparameters (defaults follow the WSJ0 recipe)."""

    N: int = 257
    L: int = 512
    B: int = 257
    H: int = 512
    P: int = 3
    X: int = 8
    R: int = 4
    norm: str = "gLN"
    causality: str = "non_causal"
    S: int = 2
    input_width: int = 257
    mask_activation: str = "relu"  # a signed mask can suit the complex route

    def __post_init__(self):
        if self.X < 1 or self.R < 1:
            raise ConfigError("X and R must be >= 1")
        if self.P < 1 or self.P % 2 == 0:
            raise ConfigError(f"depthwise kernel size must be odd, got {self.P}")
        if self.norm not in NORM_KINDS:
            raise ConfigError(f"norm must be one of {NORM_KINDS}, got {self.norm!r}")
        if self.causality not in CAUSALITY_MODES:
            raise ConfigError(f"causality must be one of {CAUSALITY_MODES}, got {self.causality!r}")
        if self.S < 1:
            raise ConfigError("source count S must be >= 1")
        if self.mask_activation not in MASK_ACTIVATIONS:
            raise ConfigError(
                f"mask_activation must be one of {MASK_ACTIVATIONS}, got {self.mask_activation!r}"
            )


def dilation_schedule(config: TcnConfig):
    """Per-block (dilation, pad_left, pad_right), repeat-major order.

    Padding always totals (P-1)*dilation so the frame count is preserved
    in every mode.
    """
    out = []
    half = (config.P - 1) // 2
    for r in range(config.R):
        for x in range(config.X):
            d = 2**x
            if config.causality == "non_causal":
                pads = (half * d, half * d)
            elif config.causality == "causal":
                pads = ((config.P - 1) * d, 0)
            else:  # first repeat looks ahead, the rest are causal
                pads = (half * d, half * d) if r == 0 else ((config.P - 1) * d, 0)
            out.append((d, pads[0], pads[1]))
    return out


def _kaiming_uniform(rng, shape, fan_in):
    bound = (1.0 / fan_in) ** 0.5
    return rng.uniform(-bound, bound, size=shape)


class _ConvBlock:
    """One residual block; owns its parameters and BN running stats."""

    def __init__(self, config: TcnConfig, dilation, pad_left, pad_right, rng, prefix):
        b, h, p = config.B, config.H, config.P
        self.dilation, self.pad_left, self.pad_right = dilation, pad_left, pad_right
        self.norm_kind = config.norm
        self.prefix = prefix
        self.conv1_w = Parameter(_kaiming_uniform(rng, (h, b, 1), b))
        self.conv1_b = Parameter(np.zeros(h))
        self.prelu1 = Parameter(np.full((h, 1), 0.25))
        self.norm1_scale = Parameter(np.ones(h))
        self.norm1_shift = Parameter(np.zeros(h))
        self.dw_w = Parameter(_kaiming_uniform(rng, (h, 1, p), p))
        self.dw_b = Parameter(np.zeros(h))
        self.prelu2 = Parameter(np.full((h, 1), 0.25))
        self.norm2_scale = Parameter(np.ones(h))
        self.norm2_shift = Parameter(np.zeros(h))
        self.conv2_w = Parameter(_kaiming_uniform(rng, (b, h, 1), h))
        self.conv2_b = Parameter(np.zeros(b))
        self.bn1 = BatchNormState(h) if config.norm == "BN" else None
        self.bn2 = BatchNormState(h) if config.norm == "BN" else None

    def parameters(self):
        names = (
            "conv1_w", "conv1_b", "prelu1", "norm1_scale", "norm1_shift",
            "dw_w", "dw_b", "prelu2", "norm2_scale", "norm2_shift",
            "conv2_w", "conv2_b",
        )
        return {f"{self.prefix}.{n}": getattr(self, n) for n in names}

    def forward(self, x: Tensor, training: bool) -> Tensor:
        h = _conv1x1(x, self.conv1_w, self.conv1_b)
        h = ad.prelu(h, self.prelu1.value)
        h = ad.normalize(h, self.norm_kind, self.norm1_scale.value, self.norm1_shift.value,
                         training=training, state=self.bn1)
        hc = ad.conv1d(h, self.dw_w.value, stride=1, dilation=self.dilation,
                       pad_left=self.pad_left, pad_right=self.pad_right, groups=h.shape[0])
        hc = ad.add(hc, ad.reshape(self.dw_b.value, (-1, 1)))
        hc = ad.prelu(hc, self.prelu2.value)
        hc = ad.normalize(hc, self.norm_kind, self.norm2_scale.value, self.norm2_shift.value,
                          training=training, state=self.bn2)
        out = _conv1x1(hc, self.conv2_w, self.conv2_b)
        return ad.add(x, out)


def _conv1x1(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    y = ad.conv1d(x, w.value, stride=1)
    return ad.add(y, ad.reshape(b.value, (-1, 1)))


class TcnSeparator:
    """Mask estimator: [input_width x F] features -> [S x N x F] masks."""

    def __init__(self, config: TcnConfig, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        w_in, b = config.input_width, config.B
        self.front_scale = Parameter(np.ones(w_in))
        self.front_shift = Parameter(np.zeros(w_in))
        self.bottleneck_w = Parameter(_kaiming_uniform(rng, (b, w_in, 1), w_in))
        self.bottleneck_b = Parameter(np.zeros(b))
        self.blocks = []
        for i, (d, pl, pr) in enumerate(dilation_schedule(config)):
            r, x = divmod(i, config.X)
            self.blocks.append(_ConvBlock(config, d, pl, pr, rng, prefix=f"block_r{r}_x{x}"))
        self.out_prelu = Parameter(np.full((b, 1), 0.25))
        self.mask_w = Parameter(_kaiming_uniform(rng, (config.S * config.N, b, 1), b))
        self.mask_b = Parameter(np.zeros(config.S * config.N))

    def parameters(self) -> dict:
        named = {
            "front_scale": self.front_scale,
            "front_shift": self.front_shift,
            "bottleneck_w": self.bottleneck_w,
            "bottleneck_b": self.bottleneck_b,
            "out_prelu": self.out_prelu,
            "mask_w": self.mask_w,
            "mask_b": self.mask_b,
        }
        for blk in self.blocks:
            named.update(blk.parameters())
        return named

    def norm_states(self) -> dict:
        """BN running statistics, named for checkpointing."""
        states = {}
        for blk in self.blocks:
            for tag, st in (("bn1", blk.bn1), ("bn2", blk.bn2)):
                if st is not None:
                    states[f"{blk.prefix}.{tag}"] = st
        return states

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters().values())

    def forward(self, features: Tensor, training: bool = False) -> Tensor:
        cfg = self.config
        if features.shape[0] != cfg.input_width:
            raise ConfigError(
                f"separator expects {cfg.input_width} input channels, got {features.shape[0]}"
            )
        x = ad.normalize(features, "cLN", self.front_scale.value, self.front_shift.value)
        x = _conv1x1(x, self.bottleneck_w, self.bottleneck_b)
        for blk in self.blocks:
            x = blk.forward(x, training)
        x = ad.prelu(x, self.out_prelu.value)
        x = _conv1x1(x, self.mask_w, self.mask_b)
        if cfg.mask_activation == "relu":
            x = ad.relu(x)
        elif cfg.mask_activation == "sigmoid":
            x = ad.sigmoid(x)
        return ad.reshape(x, (cfg.S, cfg.N, features.shape[1]))


def tcn_forward(features: Tensor, config: TcnConfig, weights: TcnSeparator, training: bool = False) -> Tensor:
    if weights.config is not config and weights.config != config:
        raise ConfigError("separator weights were built for a different configuration")
    return weights.forward(features, training=training)


def apply_masks(masks: Tensor, mixture_rep: Tensor):
    """Elementwise product of each source mask with the mixture representation.

    masks: [S x N x F]; mixture_rep: [N x F].  Returns a list of S tensors.
    """
    s = masks.shape[0]
    out = []
    for i in range(s):
        m = ad.reshape(ad.narrow(masks, 0, i, 1), mixture_rep.shape)
        out.append(ad.mul(m, mixture_rep))
    return out


@dataclass
class ReceptiveField:
    seconds: float
    frames: int
    exact_frames: int
    exact_seconds: float


def receptive_field(config: TcnConfig, hop: int, fs: int) -> ReceptiveField:
    """Temporal span of one output frame.

    The exact span with kernel 3 is 2*R*(2^X - 1) + 1 frames; the rounded
    2^(X+1)*R convention is what the headline numbers use.
    """
    exact = 1 + config.R * (config.P - 1) * (2**config.X - 1)
    frames = 2 ** (config.X + 1) * config.R
    return ReceptiveField(
        seconds=frames * hop / fs,
        frames=frames,
        exact_frames=exact,
        exact_seconds=exact * hop / fs,
    )


def lookahead_frames(config: TcnConfig) -> int:
    """Future frames visible to one output frame, per causality mode."""
    per_repeat = sum(((config.P - 1) // 2) * 2**x for x in range(config.X))
    if config.causality == "causal":
        return 0
    if config.causality == "semi_causal":
        return per_repeat
    return config.R * per_repeat


def lookahead(config: TcnConfig, hop: int, fs: int) -> float:
    return lookahead_frames(config) * hop / fs
