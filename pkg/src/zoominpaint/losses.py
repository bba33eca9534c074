"""Training objectives: L1, feature, hinge GAN, gradient and stage composites.

All reductions are means, which keeps the loss coefficients scale-free across
resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .tensor import Tensor

__all__ = [
    "LossWeights", "FeatureExtractor",
    "l1_loss", "feature_loss", "hinge_gan_losses", "gradient_loss",
    "coarse_loss", "sr_loss", "refine_loss", "total_loss",
]


@dataclass
class LossWeights:
    coarse_feat: float = 0.01
    refine_feat: float = 1e-5
    refine_gan: float = 0.5
    refine_grad: float = 1.0

    def validate(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {v}")


class FeatureExtractor:
    """Frozen convolutional feature map for the feature-domain loss.

    Default: a fixed-seed random 3-layer stack (stride 2, widths 16/32/64,
    ELU). Weights never receive gradients; gradients still flow through to the
    image being scored. ``from_npz`` imports externally trained weights
    instead (keys conv{i}_w / conv{i}_b).
    """

    def __init__(self, widths=(16, 32, 64), in_channels=3, seed=0,
                 dtype=np.float64, provenance="fixed-seed-random", weights=None):
        self.provenance = provenance
        self.layers = []
        if weights is not None:
            for w, b in weights:
                self.layers.append((Tensor(w, dtype=dtype), Tensor(b, dtype=dtype)))
            return
        rng = np.random.default_rng(seed)
        cin = in_channels
        for cout in widths:
            std = np.sqrt(2.0 / (cin * 9))
            w = Tensor(rng.standard_normal((cout, cin, 3, 3)) * std, dtype=dtype)
            b = Tensor(np.zeros(cout), dtype=dtype)
            self.layers.append((w, b))
            cin = cout

    @classmethod
    def from_npz(cls, path, dtype=np.float64):
        data = np.load(path)
        weights = []
        i = 0
        while f"conv{i}_w" in data:
            weights.append((data[f"conv{i}_w"], data[f"conv{i}_b"]))
            i += 1
        if not weights:
            raise ValueError(f"{path}: no conv{{i}}_w arrays found")
        return cls(provenance="pretrained-import", weights=weights, dtype=dtype)

    def __call__(self, x):
        h = x
        for w, b in self.layers:
            h = tt.elu(tt.conv2d(h, w, b, stride=2, padding="same"))
        return h


def _check_same_shape(pred, target, opname):
    if pred.shape != target.shape:
        raise ValueError(f"{opname}: shape mismatch {pred.shape} vs {target.shape}")


def l1_loss(pred, target):
    """Mean absolute difference over all elements."""
    _check_same_shape(pred, target, "l1_loss")
    return tt.mean(tt.absolute(tt.sub(pred, target)))


def feature_loss(pred, target, phi):
    """Mean absolute difference in the feature domain; phi stays frozen."""
    return tt.mean(tt.absolute(tt.sub(phi(pred), phi(target))))


def hinge_gan_losses(real_logits=None, fake_logits=None):
    """Margin-based adversarial losses over patch logits.

    d_loss = mean(relu(1 - real)) + mean(relu(1 + fake)); g_loss = -mean(fake).
    Pass only the logits a side needs; the other entry comes back None.
    """
    out = {"d_loss": None, "g_loss": None}
    if real_logits is not None and fake_logits is not None:
        out["d_loss"] = tt.add(
            tt.mean(tt.relu(tt.add(tt.neg(real_logits), 1.0))),
            tt.mean(tt.relu(tt.add(fake_logits, 1.0))),
        )
    if fake_logits is not None:
        out["g_loss"] = tt.neg(tt.mean(fake_logits))
    return out


def gradient_loss(pred, target):
    """Half the summed mean-square of horizontal and vertical forward
    differences of pred - target (1-tap filters, valid region, no padding).

    Invariant to constant offsets by construction. A spatial dim of 1 simply
    contributes nothing along that axis.
    """
    _check_same_shape(pred, target, "gradient_loss")
    N, C, H, W = pred.shape
    diff = tt.sub(pred, target)
    terms = []
    if W >= 2:
        dx = tt.sub(tt.crop2d(diff, 0, H, 1, W), tt.crop2d(diff, 0, H, 0, W - 1))
        terms.append(tt.mean(tt.square(dx)))
    if H >= 2:
        dy = tt.sub(tt.crop2d(diff, 1, H, 0, W), tt.crop2d(diff, 0, H - 1, 0, W))
        terms.append(tt.mean(tt.square(dy)))
    if not terms:
        raise ValueError("gradient_loss: needs at least one spatial dim >= 2")
    acc = terms[0]
    for t in terms[1:]:
        acc = tt.add(acc, t)
    return tt.mul(acc, 0.5)


def coarse_loss(x_c, x, phi, weights: LossWeights):
    """Pixel + feature objective on the blended coarse output."""
    loss = l1_loss(x_c, x)
    if weights.coarse_feat != 0.0:
        loss = tt.add(loss, tt.mul(feature_loss(x_c, x, phi), weights.coarse_feat))
    return loss


def sr_loss(x_sr, x_hr):
    """Plain L1 against the full high-resolution label (unmasked)."""
    return l1_loss(x_sr, x_hr)


def refine_loss(x_r, x_hr, fake_logits, phi, weights: LossWeights):
    """Pixel + feature + adversarial + gradient objective on the blended
    refinement output. ``fake_logits=None`` drops the adversarial term."""
    loss = l1_loss(x_r, x_hr)
    if weights.refine_feat != 0.0:
        loss = tt.add(loss, tt.mul(feature_loss(x_r, x_hr, phi), weights.refine_feat))
    if fake_logits is not None and weights.refine_gan != 0.0:
        g = hinge_gan_losses(fake_logits=fake_logits)["g_loss"]
        loss = tt.add(loss, tt.mul(g, weights.refine_gan))
    if weights.refine_grad != 0.0:
        loss = tt.add(loss, tt.mul(gradient_loss(x_r, x_hr), weights.refine_grad))
    return loss


def total_loss(l_c, l_sr, l_r):
    """Joint objective: sum of the three stage losses."""
    return tt.add(tt.add(l_c, l_sr), l_r)
