"""The four trainable networks, assembled from the layer zoo.

Channel widths double per encoder level from ``base_channels``; every width,
depth and the zoom factor are configuration, so the same code runs at paper
scale (base 64) and desk scale (base 8).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as tt
from .layers import (
    Conv, GatedConv, GatedResidualBlock, PlainResidualBlock, SpectralConv,
    contextual_attention, count_valid_keys, downscale_mask_any,
)
from .tensor import Tensor

__all__ = [
    "NetworkConfig", "NetworkParams", "CoarseNet", "SRNet", "RefineNet",
    "Discriminator", "build_models", "count_params",
]


@dataclass
class NetworkConfig:
    base_channels: int = 64
    encoder_levels: int = 3
    dilations: tuple = (2, 4, 8)
    sr_blocks: int = 4
    sr_channels: int = 64
    scale: int = 2
    use_contextual_attention: bool = True
    attention_patch: int = 3
    attention_softmax_scale: float = 10.0
    attention_downscale: int = 2
    disc_layers: int = 5
    disc_channels: int = 64

    def validate(self):
        if self.base_channels < 1 or self.scale < 1:
            raise ValueError("base_channels and scale must be >= 1")
        if not self.dilations:
            raise ValueError("need at least one bottleneck dilation rate")
        if self.encoder_levels < 1 or self.disc_layers < 1:
            raise ValueError("encoder_levels and disc_layers must be >= 1")

    @classmethod
    def desk(cls) -> "NetworkConfig":
        """Small preset that keeps every test and smoke run fast.

        Dilations shrink with the bottleneck: a rate of 8 on the desk-scale
        8x8 bottleneck would put every non-center kernel tap in the padding.
        """
        return cls(base_channels=8, encoder_levels=2, dilations=(1, 2, 4),
                   sr_channels=8, disc_layers=3, disc_channels=8)


class NetworkParams:
    """Ordered named parameter tensors plus non-trainable state for one network."""

    def __init__(self, role: str, net):
        self.role = role
        self.tensors = dict(net.params())
        self.states = dict(net.states())
        if len(self.tensors) != len(list(net.params())):
            raise ValueError(f"duplicate parameter names in {role}")

    def trainable(self):
        return list(self.tensors.values())

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()


def _walk(prefix, items):
    for name, obj in items:
        yield f"{prefix}.{name}", obj


class _Net:
    """Shared parameter/state walking over an ordered (name, layer) list."""

    def _named_layers(self):
        raise NotImplementedError

    def params(self):
        for lname, layer in self._named_layers():
            yield from _walk(lname, layer.params())

    def states(self):
        for lname, layer in self._named_layers():
            yield from _walk(lname, layer.states())


class CoarseNet(_Net):
    """Gated-conv encoder/decoder with a dilated bottleneck.

    Encoder: per level maxpool + channel-doubling gated conv + gated residual
    block. Decoder: nearest-neighbor x2 + gated conv, with additive skip
    connections at each level. The head is a linear 3-channel conv. With
    ``attention=True`` a contextual-attention branch is computed at the
    bottleneck and merged back by concatenation (the refinement variant).
    """

    role = "coarse"

    def __init__(self, config: NetworkConfig, rng, dtype=np.float64, attention=False):
        config.validate()
        self.config = config
        self.attention = attention and config.use_contextual_attention
        b = config.base_channels
        levels = config.encoder_levels
        self.stem = GatedConv(4, b, rng, dtype=dtype)
        self.enc = []
        for i in range(levels):
            cin, cout = b << i, b << (i + 1)
            self.enc.append((GatedConv(cin, cout, rng, dtype=dtype),
                             GatedResidualBlock(cout, rng, dtype=dtype)))
        cb = b << levels
        self.bottleneck = [GatedConv(cb, cb, rng, dilation=r, dtype=dtype)
                           for r in config.dilations]
        if self.attention:
            self.att_merge = GatedConv(2 * cb, cb, rng, dtype=dtype)
        self.dec = [GatedConv(b << (i + 1), b << i, rng, dtype=dtype)
                    for i in reversed(range(levels))]
        self.head = Conv(b, 3, rng, act="linear", dtype=dtype, w_scale=1e-2)

    def _named_layers(self):
        yield "stem", self.stem
        for i, (conv, block) in enumerate(self.enc):
            yield f"enc{i}", conv
            yield f"enc{i}.res", block
        for i, conv in enumerate(self.bottleneck):
            yield f"bott{i}", conv
        if self.attention:
            yield "att_merge", self.att_merge
        for i, conv in enumerate(self.dec):
            yield f"dec{i}", conv
        yield "head", self.head

    def required_divisor(self) -> int:
        d = 1 << self.config.encoder_levels
        if self.attention:
            d *= self.config.attention_downscale
        return d

    def __call__(self, x_m, mask: np.ndarray, mode="train", update_stats=True):
        N, C, H, W = x_m.shape
        div = self.required_divisor()
        if H % div or W % div:
            raise ValueError(f"input {x_m.shape} must have spatial dims divisible "
                             f"by {div} for {self.config.encoder_levels} levels"
                             + (" plus attention downscale" if self.attention else ""))
        if mask.ndim == 2:
            mask = np.broadcast_to(mask, (N,) + mask.shape)
        if mask.shape != (N, H, W):
            raise ValueError(f"mask {mask.shape} does not match input {x_m.shape}")
        m4 = Tensor(mask[:, None].astype(x_m.dtype))
        h = self.stem(tt.concat_channels([x_m, m4]), mode, update_stats)
        skips = [h]
        for conv, block in self.enc:
            h = tt.maxpool2(h)
            h = conv(h, mode, update_stats)
            h = block(h, mode, update_stats)
            skips.append(h)
        for conv in self.bottleneck:
            h = conv(h, mode, update_stats)
        if self.attention:
            levels = self.config.encoder_levels
            att_parts = []
            for n, part in enumerate(tt.split_batch(h)):
                m_bot = downscale_mask_any(mask[n], 1 << levels)
                if m_bot.min() == 1:
                    raise ValueError("degenerate all-invalid mask reaches the "
                                     "attention bottleneck")
                if count_valid_keys(m_bot, self.config.attention_patch,
                                    self.config.attention_downscale) == 0:
                    # the pooled mask left no fully valid patch at this
                    # bottleneck size: attention degrades to a pass-through
                    att_parts.append(part)
                    continue
                att_parts.append(contextual_attention(
                    part, m_bot,
                    patch=self.config.attention_patch,
                    softmax_scale=self.config.attention_softmax_scale,
                    downscale=self.config.attention_downscale))
            att = att_parts[0] if N == 1 else tt.concat_batch(att_parts)
            h = self.att_merge(tt.concat_channels([h, att]), mode, update_stats)
        for i, conv in enumerate(self.dec):
            h = tt.upsample_nearest(h, 2)
            h = conv(h, mode, update_stats)
            h = tt.add(h, skips[len(self.dec) - 1 - i])
        return self.head(h, mode, update_stats)


class RefineNet(CoarseNet):
    """Coarse architecture plus contextual attention at the bottleneck."""

    role = "refine"

    def __init__(self, config: NetworkConfig, rng, dtype=np.float64):
        super().__init__(config, rng, dtype=dtype, attention=True)


class SRNet(_Net):
    """Residual-block upscaler with a sub-pixel (pixel shuffle) tail and a
    global bicubic residual, so zero weights reproduce plain bicubic zoom."""

    role = "sr"

    def __init__(self, config: NetworkConfig, rng, dtype=np.float64):
        config.validate()
        self.config = config
        c, s = config.sr_channels, config.scale
        self.stem = Conv(3, c, rng, act="relu", dtype=dtype)
        self.blocks = [PlainResidualBlock(c, rng, dtype=dtype)
                       for _ in range(config.sr_blocks)]
        self.pre_shuffle = Conv(c, c * s * s, rng, act="relu", dtype=dtype)
        self.head = Conv(c, 3, rng, act="linear", dtype=dtype, w_scale=1e-2)

    def _named_layers(self):
        yield "stem", self.stem
        for i, blk in enumerate(self.blocks):
            yield f"res{i}", blk
        yield "pre_shuffle", self.pre_shuffle
        yield "head", self.head

    def __call__(self, x, mode="train", update_stats=True):
        s = self.config.scale
        N, C, H, W = x.shape
        h = self.stem(x)
        for blk in self.blocks:
            h = blk(h)
        h = tt.pixel_shuffle(self.pre_shuffle(h), s)
        h = self.head(h)
        return tt.add(h, tt.resize_bicubic(x, s * H, s * W))


class Discriminator(_Net):
    """PatchGAN: stride-2 spectrally normalized 5x5 convs with leaky ReLU;
    the last layer emits a spatial grid of 1-channel patch logits."""

    role = "disc"

    def __init__(self, config: NetworkConfig, rng, dtype=np.float64):
        config.validate()
        self.config = config
        c = config.disc_channels
        self.layers = []
        cin = 3
        for i in range(config.disc_layers - 1):
            cout = c << i
            self.layers.append(SpectralConv(cin, cout, rng, k=5, stride=2, dtype=dtype))
            cin = cout
        self.layers.append(SpectralConv(cin, 1, rng, k=5, stride=2, act="linear",
                                        dtype=dtype))

    def _named_layers(self):
        for i, l in enumerate(self.layers):
            yield f"sn{i}", l

    def __call__(self, x, train=True, power_iterations=None):
        h = x
        for layer in self.layers:
            h = layer(h, train=train, power_iterations=power_iterations)
        return h


def build_models(config: NetworkConfig, seed: int, dtype=np.float64) -> dict:
    """Construct all four networks with independent deterministic init streams."""
    root = np.random.SeedSequence(seed)
    streams = [np.random.default_rng(s) for s in root.spawn(4)]
    return {
        "coarse": CoarseNet(config, streams[0], dtype=dtype),
        "sr": SRNet(config, streams[1], dtype=dtype),
        "refine": RefineNet(config, streams[2], dtype=dtype),
        "disc": Discriminator(config, streams[3], dtype=dtype),
    }


def count_params(net) -> int:
    return sum(p.size for _, p in net.params())
