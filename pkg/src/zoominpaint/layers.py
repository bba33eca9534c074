"""Layer constructions on top of the tensor core: gated convolution, residual
blocks, contextual attention and spectral normalization."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as tt
from .tensor import BatchNormState, Tensor

__all__ = [
    "Conv", "GatedConv", "GatedResidualBlock", "PlainResidualBlock",
    "SpectralState", "spectral_normalize", "SpectralConv",
    "contextual_attention", "downscale_mask_any", "count_valid_keys",
]


def _he_weight(rng, cout, cin, k, dtype, gain=2.0, scale=1.0):
    std = scale * np.sqrt(gain / (cin * k * k))
    return Tensor(rng.standard_normal((cout, cin, k, k)) * std,
                  requires_grad=True, dtype=dtype)


class Conv:
    """Plain convolution layer with optional activation and batchnorm."""

    def __init__(self, cin, cout, rng, k=3, stride=1, dilation=1, act="linear",
                 use_bn=False, dtype=np.float64, w_scale=1.0):
        self.cin, self.cout = cin, cout
        self.stride, self.dilation = stride, dilation
        self.act = act
        self.w = _he_weight(rng, cout, cin, k, dtype, scale=w_scale)
        # batchnorm cancels any conv bias, so the bias exists only without it
        self.b = None if use_bn else Tensor(np.zeros(cout), requires_grad=True,
                                            dtype=dtype)
        self.bn = BatchNormState(cout, dtype) if use_bn else None
        if use_bn:
            self.gamma = Tensor(np.ones(cout), requires_grad=True, dtype=dtype)
            self.beta = Tensor(np.zeros(cout), requires_grad=True, dtype=dtype)

    def __call__(self, x, mode="train", update_stats=True):
        y = tt.conv2d(x, self.w, self.b, stride=self.stride,
                      dilation=self.dilation, padding="same")
        if self.bn is not None:
            y = tt.batchnorm(y, self.gamma, self.beta, self.bn, mode=mode,
                             update_stats=update_stats)
        return tt.activation(y, self.act)

    def params(self):
        yield "w", self.w
        if self.b is not None:
            yield "b", self.b
        if self.bn is not None:
            yield "gamma", self.gamma
            yield "beta", self.beta

    def states(self):
        if self.bn is not None:
            yield "bn_mean", self.bn.running_mean
            yield "bn_var", self.bn.running_var


class GatedConv:
    """Gated convolution: act(conv_f(x)) * sigmoid(conv_g(x)).

    Both paths share spatial hyperparameters and see the same input. An
    optional batchnorm is applied to the gated product.
    """

    def __init__(self, cin, cout, rng, k=3, stride=1, dilation=1, act="elu",
                 use_bn=True, dtype=np.float64):
        self.cin, self.cout = cin, cout
        self.stride, self.dilation = stride, dilation
        self.act = act
        # both biases stay under batchnorm: they feed nonlinearities before
        # the gated product, so batch statistics do not cancel them
        self.f_w = _he_weight(rng, cout, cin, k, dtype)
        self.f_b = Tensor(np.zeros(cout), requires_grad=True, dtype=dtype)
        self.g_w = _he_weight(rng, cout, cin, k, dtype)
        self.g_b = Tensor(np.zeros(cout), requires_grad=True, dtype=dtype)
        self.bn = BatchNormState(cout, dtype) if use_bn else None
        if use_bn:
            self.gamma = Tensor(np.ones(cout), requires_grad=True, dtype=dtype)
            self.beta = Tensor(np.zeros(cout), requires_grad=True, dtype=dtype)

    def __call__(self, x, mode="train", update_stats=True):
        feat = tt.conv2d(x, self.f_w, self.f_b, stride=self.stride,
                         dilation=self.dilation, padding="same")
        gate = tt.conv2d(x, self.g_w, self.g_b, stride=self.stride,
                         dilation=self.dilation, padding="same")
        y = tt.mul(tt.activation(feat, self.act), tt.sigmoid(gate))
        if self.bn is not None:
            y = tt.batchnorm(y, self.gamma, self.beta, self.bn, mode=mode,
                             update_stats=update_stats)
        return y

    def params(self):
        yield "f_w", self.f_w
        yield "f_b", self.f_b
        yield "g_w", self.g_w
        yield "g_b", self.g_b
        if self.bn is not None:
            yield "gamma", self.gamma
            yield "beta", self.beta

    def states(self):
        if self.bn is not None:
            yield "bn_mean", self.bn.running_mean
            yield "bn_var", self.bn.running_var


class GatedResidualBlock:
    """x + F(x) with F = two gated conv layers; channels preserved."""

    def __init__(self, channels, rng, act="elu", use_bn=True, dtype=np.float64):
        self.channels = channels
        self.conv1 = GatedConv(channels, channels, rng, act=act, use_bn=use_bn, dtype=dtype)
        self.conv2 = GatedConv(channels, channels, rng, act=act, use_bn=use_bn, dtype=dtype)

    def __call__(self, x, mode="train", update_stats=True):
        if x.shape[1] != self.channels:
            raise ValueError(f"residual block expects {self.channels} channels, "
                             f"got input {x.shape}")
        return tt.add(x, self.conv2(self.conv1(x, mode, update_stats), mode, update_stats))

    def params(self):
        for n, p in self.conv1.params():
            yield f"c1.{n}", p
        for n, p in self.conv2.params():
            yield f"c2.{n}", p

    def states(self):
        for n, s in self.conv1.states():
            yield f"c1.{n}", s
        for n, s in self.conv2.states():
            yield f"c2.{n}", s


class PlainResidualBlock:
    """x + F(x) with F = two conv+ReLU layers; no batchnorm (SR-style)."""

    def __init__(self, channels, rng, dtype=np.float64):
        self.channels = channels
        self.conv1 = Conv(channels, channels, rng, act="relu", dtype=dtype)
        self.conv2 = Conv(channels, channels, rng, act="relu", dtype=dtype)

    def __call__(self, x, mode="train", update_stats=True):
        if x.shape[1] != self.channels:
            raise ValueError(f"residual block expects {self.channels} channels, "
                             f"got input {x.shape}")
        return tt.add(x, self.conv2(self.conv1(x)))

    def params(self):
        for n, p in self.conv1.params():
            yield f"c1.{n}", p
        for n, p in self.conv2.params():
            yield f"c2.{n}", p

    def states(self):
        return iter(())


# ---------------------------------------------------------------------------
# spectral normalization
# ---------------------------------------------------------------------------

class SpectralState:
    """Weight plus a persistent left-singular-vector estimate u (unit norm)."""

    def __init__(self, weight: Tensor, rng, power_iterations: int = 1):
        self.weight = weight
        self.power_iterations = power_iterations
        u = rng.standard_normal(weight.shape[0])
        self.u = u / np.linalg.norm(u)


def spectral_normalize(state: SpectralState, train: bool = True,
                       power_iterations=None, eps: float = 1e-12) -> Tensor:
    """Divide the weight by its power-iteration top singular value estimate.

    The weight is viewed as a (Cout, rest) matrix. In train mode the stored u
    is advanced in place; in frozen mode the estimate is used as-is, so
    repeated calls are deterministic. u and v are treated as constants for the
    gradient, which therefore flows through sigma = u^T W v.
    """
    w2 = state.weight.data.reshape(state.weight.shape[0], -1)
    iters = state.power_iterations if power_iterations is None else power_iterations
    u = state.u
    v = None
    if train:
        for _ in range(max(1, iters)):
            v = w2.T @ u
            v /= (np.linalg.norm(v) + eps)
            u = w2 @ v
            u /= (np.linalg.norm(u) + eps)
        state.u[...] = u
    else:
        v = w2.T @ u
        v /= (np.linalg.norm(v) + eps)
    sigma_val = float(u @ w2 @ v)
    if abs(sigma_val) < eps:
        # zero weight: clamp sigma, return zeros
        return tt.mul(state.weight, 0.0)
    wm = tt.reshape(state.weight, w2.shape)
    sigma = tt.matmul(tt.matmul(Tensor(u.reshape(1, -1)), wm), Tensor(v.reshape(-1, 1)))
    inv = tt.reciprocal(tt.reshape(sigma, ()))
    return tt.reshape(tt.mul(wm, inv), state.weight.shape)


class SpectralConv:
    """Spectrally normalized convolution (discriminator building block)."""

    def __init__(self, cin, cout, rng, k=5, stride=2, act="leaky_relu",
                 alpha=0.2, power_iterations=1, dtype=np.float64):
        self.stride = stride
        self.act = act
        self.alpha = alpha
        self.w = _he_weight(rng, cout, cin, k, dtype)
        self.b = Tensor(np.zeros(cout), requires_grad=True, dtype=dtype)
        self.sn = SpectralState(self.w, rng, power_iterations)

    def __call__(self, x, train=True, power_iterations=None):
        wn = spectral_normalize(self.sn, train=train, power_iterations=power_iterations)
        y = tt.conv2d(x, wn, self.b, stride=self.stride, padding="same")
        return tt.activation(y, self.act, self.alpha)

    def params(self):
        yield "w", self.w
        yield "b", self.b

    def states(self):
        yield "sn_u", self.sn.u


# ---------------------------------------------------------------------------
# contextual attention
# ---------------------------------------------------------------------------

def downscale_mask_any(mask: np.ndarray, factor: int) -> np.ndarray:
    """Downscale a binary mask so a block is invalid if ANY pixel in it is."""
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask {mask.shape} not divisible by {factor}")
    return mask.reshape(h // factor, factor, w // factor, factor).max(axis=(1, 3))


def count_valid_keys(mask: np.ndarray, patch: int = 3, downscale: int = 2) -> int:
    """Number of fully-valid key patches attention would see for this mask."""
    m_low = downscale_mask_any(mask, downscale) if downscale > 1 else mask
    pad = patch // 2
    h, w = m_low.shape
    if h - 2 * pad <= 0 or w - 2 * pad <= 0:
        return 0
    win_ok = sliding_window_view(m_low == 0, (patch, patch)).all(axis=(2, 3))
    return int(win_ok.sum())


def _l2_normalize_cols(cols, eps):
    n2 = tt.sum_axis(tt.square(cols), 1, keepdims=True)
    inv = tt.reciprocal(tt.sqrt(tt.add_const(n2, eps)))
    return tt.mul(cols, tt.repeat_axis(inv, 1, cols.shape[1]))


def contextual_attention(features, mask: np.ndarray, patch: int = 3,
                         stride: int = 1, softmax_scale: float = 10.0,
                         downscale: int = 2, eps: float = 1e-8,
                         return_weights: bool = False):
    """Fill invalid feature locations by copying valid patches, weighted by
    softmaxed cosine similarity.

    Similarity is computed at 1/downscale resolution; the attention map is
    upscaled back by nearest-neighbor replication and applied to full-res
    patches. Keys are restricted to patches that lie fully inside the valid
    (mask == 0) region; overlapping pasted patches are averaged by coverage
    counts. Valid locations pass through unchanged.
    """
    if stride != 1:
        raise ValueError("contextual attention supports stride 1 only")
    N, C, H, W = features.shape
    if mask.shape != (H, W):
        raise ValueError(f"mask {mask.shape} does not match features {features.shape}")

    f_low = features
    ds = 1
    while ds < downscale:
        f_low = tt.avgpool2(f_low)
        ds *= 2
    if ds != downscale:
        raise ValueError(f"downscale must be a power of two, got {downscale}")
    m_low = downscale_mask_any(mask, ds) if ds > 1 else mask
    h, w = H // ds, W // ds
    pad = patch // 2

    # keys: patches fully inside the image whose window is entirely valid
    valid = (m_low == 0)
    if h - 2 * pad <= 0 or w - 2 * pad <= 0:
        raise ValueError(f"feature grid {h}x{w} too small for patch {patch}")
    win_ok = sliding_window_view(valid, (patch, patch)).all(axis=(2, 3))
    key_ok = np.zeros((h, w), dtype=bool)
    key_ok[pad:h - pad, pad:w - pad] = win_ok
    key_idx = np.flatnonzero(key_ok)
    if key_idx.size == 0:
        raise ValueError("contextual attention: no fully valid patch "
                         "(degenerate all-invalid mask)")

    cols_low = tt.unfold(f_low, patch, 1, pad)                 # N, C*k*k, h*w
    keys = tt.select_columns(cols_low, key_idx)                # N, C*k*k, K
    qn = _l2_normalize_cols(cols_low, eps)
    kn = _l2_normalize_cols(keys, eps)
    sim = tt.matmul(tt.transpose_last2(qn), kn)                # N, h*w, K

    z = tt.mul(sim, float(softmax_scale))
    zmax = z.data.max(axis=2, keepdims=True)
    e = tt.exp(tt.add_const(z, -zmax))
    s = tt.sum_axis(e, 2, keepdims=True)
    attn = tt.mul(e, tt.repeat_axis(tt.reciprocal(s), 2, key_idx.size))   # rows sum to 1

    # apply at full resolution: per sub-pixel offset (dy, dx) each low-res key
    # (kh, kw) contributes the full-res patch centered at (ds*kh+dy, ds*kw+dx)
    vcols = tt.unfold(features, patch, 1, pad)                 # N, C*k*k, H*W
    kh, kw = np.divmod(key_idx, w)
    attn_t = tt.transpose_last2(attn)                          # N, K, h*w
    groups = []
    for dy in range(ds):
        for dx in range(ds):
            vidx = (kh * ds + dy) * W + (kw * ds + dx)
            vg = tt.select_columns(vcols, vidx)                # N, C*k*k, K
            groups.append(tt.matmul(vg, attn_t))               # N, C*k*k, h*w
    stacked = tt.concat_last(groups)                           # N, C*k*k, ds^2*h*w
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    group = (yy % ds) * ds + (xx % ds)
    low = (yy // ds) * w + (xx // ds)
    perm = (group * h * w + low).reshape(-1)
    out_cols = tt.select_columns(stacked, perm)                # N, C*k*k, H*W

    recon = tt.fold(out_cols, (H, W), patch, 1, pad)
    counts = tt.fold_counts((H, W), patch, 1, pad)
    recon = tt.mul_const(recon, 1.0 / counts)

    m4 = mask.reshape(1, 1, H, W).astype(features.dtype)
    out = tt.add(tt.mul_const(recon, m4), tt.mul_const(features, 1.0 - m4))
    if return_weights:
        return out, attn, key_idx
    return out
