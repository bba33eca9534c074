"""Masking/blending algebra, the three-stage forward pass, progressive
training and inference.

Pixel values live in [0, 1]; network outputs are linear and only clamped at
inference/export, which keeps every blending identity literal: valid pixels of
each stage output equal their source pixels bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .checkpoint import save_checkpoint
from .losses import (FeatureExtractor, LossWeights, coarse_loss, hinge_gan_losses,
                     refine_loss, sr_loss, total_loss)
from .masks import MaskSpec, mask_statistics, sample_mask, upscale_mask_nearest
from .networks import NetworkConfig, build_models
from .tensor import Tape, Tensor

__all__ = [
    "PipelineConfig", "TrainSample", "Stage", "ProgressiveSchedule",
    "mask_image", "coarse_blend", "refine_blend", "final_output",
    "forward_pipeline", "Adam", "TrainingDiverged", "train", "infer",
    "LOG_COLUMNS",
]

LOG_COLUMNS = ("iter", "l_c", "l_sr", "l_r", "total", "d_loss")


@dataclass
class PipelineConfig:
    lr: float = 1e-5
    batch: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hr_patch: int = 512
    iterations_small: int = 80_000
    iterations_large: int = 1_200_000
    pretrain_inpaint_iters: int = 0
    pretrain_sr_iters: int = 0
    pretrain_refine_input: str = "bicubic"     # what refinement sees before the
                                               # SR net joins: bicubic zoom of
                                               # the coarse output
    dtype: str = "float64"
    checkpoint_every: int = 0                  # 0 = final checkpoint only
    value_min: float = 0.0
    value_max: float = 1.0

    def validate(self):
        if self.batch < 1 or self.hr_patch < 1:
            raise ValueError("batch and hr_patch must be >= 1")
        if self.iterations_small < 0 or self.iterations_large < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.pretrain_refine_input not in ("bicubic",):
            raise ValueError(f"unknown pretrain_refine_input "
                             f"{self.pretrain_refine_input!r}")

    @classmethod
    def desk(cls) -> "PipelineConfig":
        """Desk-scale preset: minutes, not GPU-days."""
        return cls(lr=2e-3, batch=4, hr_patch=64, iterations_small=200,
                   iterations_large=500, dtype="float32")


@dataclass
class TrainSample:
    """HR labels, their bicubic-downscaled LR counterparts, LR masks."""

    x_hr: np.ndarray       # N,3,sH,sW
    x_lr: np.ndarray       # N,3,H,W  (paired by this artifact, bit-exact)
    masks: np.ndarray      # N,H,W    {0,1}, 1 = invalid


def make_train_sample(x_hr: np.ndarray, masks: np.ndarray, scale: int) -> TrainSample:
    hr = Tensor(x_hr)
    h, w = x_hr.shape[2] // scale, x_hr.shape[3] // scale
    x_lr = tt.resize_bicubic(hr, h, w).data
    if masks.shape[1:] != (h, w):
        raise ValueError(f"masks {masks.shape} do not match LR size {(h, w)}")
    return TrainSample(x_hr=x_hr, x_lr=x_lr, masks=masks)


@dataclass
class Stage:
    spec: MaskSpec
    iterations: int


class ProgressiveSchedule:
    """Training stages ordered from smaller to larger masks."""

    def __init__(self, stages, ratio_probe: int = 64, probe_size: int = 128):
        self.stages = list(stages)
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        means = [mask_statistics(s.spec, ratio_probe, probe_size, probe_size,
                                 seed=0)["mean_ratio"] for s in self.stages]
        for a, b in zip(means, means[1:]):
            if b < a - 0.01:
                raise ValueError(f"stages not ordered by mean mask ratio: {means}")
        self.mean_ratios = means

    def __iter__(self):
        return iter(self.stages)

    def total_iterations(self):
        return sum(s.iterations for s in self.stages)


# ---------------------------------------------------------------------------
# masking / blending algebra
# ---------------------------------------------------------------------------

def _mask4(mask: np.ndarray, dtype) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim == 2:
        m = m[None]
    if m.ndim != 3:
        raise ValueError(f"mask must be H,W or N,H,W, got {m.shape}")
    return m[:, None].astype(dtype)


def mask_image(x, mask) -> Tensor:
    """Zero out invalid pixels: masked input = (1 - M) * X."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    m = _mask4(mask, x.dtype)
    return tt.mul_const(x, 1.0 - m)


def coarse_blend(net_out, x_m, mask) -> Tensor:
    """Keep valid pixels from the masked input: M * out + X_m."""
    m = _mask4(mask, net_out.dtype)
    return tt.add(tt.mul_const(net_out, m), x_m)


def refine_blend(net_out_hr, x_hr, mask_up) -> Tensor:
    """Blend with the HR label so no loss occurs outside the holes:
    M~ * out + (1 - M~) * X~."""
    m = _mask4(mask_up, net_out_hr.dtype)
    x_hr = x_hr if isinstance(x_hr, Tensor) else Tensor(x_hr)
    return tt.add(tt.mul_const(net_out_hr, m), tt.mul_const(x_hr.detach(), 1.0 - m))


def final_output(net_out_hr, x_m, mask, scale: int) -> Tensor:
    """Zoom the raw refinement output back and paste it into the holes:
    M * (out downscaled by s) + (1 - M) * X_m. Gradient flows through the
    downscale."""
    n, c, hs, ws = net_out_hr.shape
    down = tt.resize_bicubic(net_out_hr, hs // scale, ws // scale)
    m = _mask4(mask, net_out_hr.dtype)
    x_m = x_m if isinstance(x_m, Tensor) else Tensor(x_m)
    return tt.add(tt.mul_const(down, m), tt.mul_const(x_m.detach(), 1.0 - m))


# ---------------------------------------------------------------------------
# three-stage forward
# ---------------------------------------------------------------------------

def forward_pipeline(sample: TrainSample, models: dict, config: NetworkConfig,
                     phi: FeatureExtractor, weights: LossWeights,
                     mode="train", update_stats=True, disc=None,
                     disc_train=False):
    """Masked input -> coarse -> zoom -> refine -> zoom out, plus stage losses.

    Returns intermediates and losses. Without ``disc`` the adversarial term is
    omitted from the refinement loss (equivalently: zero fake logits).
    """
    s = config.scale
    x = Tensor(np.asarray(sample.x_lr))
    x_hr = Tensor(np.asarray(sample.x_hr))
    masks = sample.masks

    x_m = mask_image(x, masks)
    coarse_out = models["coarse"](x_m, masks, mode, update_stats)
    x_c = coarse_blend(coarse_out, x_m, masks)
    x_sr = models["sr"](x_c, mode, update_stats)

    masks_up = np.stack([upscale_mask_nearest(m, s) for m in masks])
    refine_out = models["refine"](x_sr, masks_up, mode, update_stats)
    x_r = refine_blend(refine_out, x_hr, masks_up)
    x_out = final_output(refine_out, x_m, masks, s)

    fake_logits = None
    if disc is not None:
        fake_logits = disc(x_r, train=disc_train)

    l_c = coarse_loss(x_c, x, phi, weights)
    l_sr = sr_loss(x_sr, x_hr)
    l_r = refine_loss(x_r, x_hr, fake_logits, phi, weights)
    total = total_loss(l_c, l_sr, l_r)
    return {
        "x_m": x_m, "x_c": x_c, "x_sr": x_sr, "refine_out": refine_out,
        "x_r": x_r, "x_out": x_out, "fake_logits": fake_logits,
        "l_c": l_c, "l_sr": l_sr, "l_r": l_r, "total": total,
    }


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

class Adam:
    """Standard Adam with bias correction; state per parameter tensor."""

    def __init__(self, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class TrainingDiverged(RuntimeError):
    """Raised when a loss stops being finite; carries a diagnostic snapshot."""

    def __init__(self, snapshot: dict):
        self.snapshot = snapshot
        super().__init__(f"non-finite loss at iteration {snapshot['iteration']}: "
                         f"{ {k: v for k, v in snapshot.items() if k != 'grad_norms'} }")


def _grad_norms(models):
    out = {}
    for role, net in models.items():
        sq = 0.0
        for _, p in net.params():
            if p.grad is not None:
                sq += float((p.grad.astype(np.float64) ** 2).sum())
        out[role] = math.sqrt(sq)
    return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _format_row(values):
    return ",".join(f"{v:.10e}" if isinstance(v, float) else str(v) for v in values)


def train(models: dict, schedule: ProgressiveSchedule, dataset,
          net_config: NetworkConfig, pipe_config: PipelineConfig,
          weights: LossWeights, phi: FeatureExtractor, out_dir, seed: int):
    """Optional pretraining phases, then the progressive joint stages.

    Per joint iteration the discriminator and generators take one step each.
    Fresh masks are sampled per iteration from the active stage's spec. Writes
    ``loss_log.csv`` (iter, L_c, L_SR, L_r, L, d_loss) and checkpoints under
    ``out_dir``; returns a run summary.
    """
    pipe_config.validate()
    weights.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = net_config.scale
    lr_patch = pipe_config.hr_patch // s
    if lr_patch * s != pipe_config.hr_patch:
        raise ValueError(f"hr_patch {pipe_config.hr_patch} not divisible by scale {s}")

    gen_params = (list(models["coarse"].params()) + list(models["sr"].params())
                  + list(models["refine"].params()))
    disc_params = list(models["disc"].params())
    adam_g = Adam([p for _, p in gen_params], lr=pipe_config.lr,
                  beta1=pipe_config.beta1, beta2=pipe_config.beta2,
                  eps=pipe_config.adam_eps)
    adam_d = Adam([p for _, p in disc_params], lr=pipe_config.lr,
                  beta1=pipe_config.beta1, beta2=pipe_config.beta2,
                  eps=pipe_config.adam_eps)

    root = np.random.SeedSequence(seed)
    mask_rng, crop_rng = [np.random.default_rng(ss) for ss in root.spawn(2)]
    dtype = np.dtype(pipe_config.dtype)

    log_path = out / "loss_log.csv"
    log_rows = []
    checkpoints = []
    iteration = 0

    def as_dtype(arr):
        return arr.astype(dtype, copy=False)

    def log(l_c, l_sr, l_r, total, d_loss):
        vals = (iteration, float(l_c), float(l_sr), float(l_r), float(total),
                float(d_loss))
        if not all(np.isfinite(v) for v in vals[1:]):
            raise TrainingDiverged({
                "iteration": iteration, "l_c": vals[1], "l_sr": vals[2],
                "l_r": vals[3], "total": vals[4], "d_loss": vals[5],
                "grad_norms": _grad_norms(models),
            })
        log_rows.append(_format_row(vals))

    def maybe_checkpoint(tag=None):
        every = pipe_config.checkpoint_every
        if tag is None and (every <= 0 or iteration == 0 or iteration % every):
            return
        name = f"ckpt_{tag or f'{iteration:07d}'}.bin"
        save_checkpoint(out / name, models, net_config)
        checkpoints.append(out / name)

    def draw_batch(spec):
        x_hr = as_dtype(dataset.random_batch(crop_rng, pipe_config.batch,
                                             pipe_config.hr_patch))
        masks = np.stack([sample_mask(spec, lr_patch, lr_patch, mask_rng)
                          for _ in range(pipe_config.batch)])
        return make_train_sample(x_hr, masks, s)

    # pretraining phase 1: coarse + refine, pixel/feature losses only, with the
    # refinement consuming a bicubic zoom of the coarse output
    first_spec = schedule.stages[0].spec
    pre_w = LossWeights(coarse_feat=0.01, refine_feat=0.01,
                        refine_gan=0.0, refine_grad=0.0)
    for _ in range(pipe_config.pretrain_inpaint_iters):
        iteration += 1
        sample = draw_batch(first_spec)
        with Tape() as tape:
            x = Tensor(sample.x_lr)
            x_hr = Tensor(sample.x_hr)
            x_m = mask_image(x, sample.masks)
            x_c = coarse_blend(models["coarse"](x_m, sample.masks), x_m, sample.masks)
            zoomed = tt.resize_bicubic(x_c, pipe_config.hr_patch, pipe_config.hr_patch)
            masks_up = np.stack([upscale_mask_nearest(m, s) for m in sample.masks])
            x_r = refine_blend(models["refine"](zoomed, masks_up), x_hr, masks_up)
            l_c = coarse_loss(x_c, x, phi, pre_w)
            l_r = refine_loss(x_r, x_hr, None, phi, pre_w)
            loss = tt.add(l_c, l_r)
            tape.backward(loss)
        adam_g.step()
        adam_g.zero_grad()
        log(l_c.item(), 0.0, l_r.item(), loss.item(), 0.0)
        maybe_checkpoint()

    # pretraining phase 2: SR alone on unmasked LR/HR pairs
    for _ in range(pipe_config.pretrain_sr_iters):
        iteration += 1
        x_hr = as_dtype(dataset.random_batch(crop_rng, pipe_config.batch,
                                             pipe_config.hr_patch))
        with Tape() as tape:
            hr = Tensor(x_hr)
            lr = tt.resize_bicubic(hr, lr_patch, lr_patch).detach()
            l_sr = sr_loss(models["sr"](lr), hr)
            tape.backward(l_sr)
        adam_g.step()
        adam_g.zero_grad()
        log(0.0, l_sr.item(), 0.0, l_sr.item(), 0.0)
        maybe_checkpoint()

    # joint progressive stages: one discriminator step, one generator step
    use_gan = weights.refine_gan > 0.0
    for stage in schedule:
        for _ in range(stage.iterations):
            iteration += 1
            sample = draw_batch(stage.spec)
            with Tape() as tape_g:
                pipe = forward_pipeline(sample, models, net_config, phi, weights,
                                        mode="train", update_stats=True, disc=None)
                d_val = 0.0
                if use_gan:
                    with Tape() as tape_d:
                        real = models["disc"](Tensor(sample.x_hr), train=True)
                        fake = models["disc"](pipe["x_r"].detach(), train=True)
                        d_loss = hinge_gan_losses(real, fake)["d_loss"]
                        tape_d.backward(d_loss)
                    adam_d.step()
                    adam_d.zero_grad()
                    d_val = d_loss.item()
                    fake_live = models["disc"](pipe["x_r"], train=False)
                    g_term = hinge_gan_losses(fake_logits=fake_live)["g_loss"]
                    l_r = tt.add(pipe["l_r"], tt.mul(g_term, weights.refine_gan))
                else:
                    l_r = pipe["l_r"]
                loss = total_loss(pipe["l_c"], pipe["l_sr"], l_r)
                tape_g.backward(loss)
            adam_g.step()
            adam_g.zero_grad()
            for _, p in disc_params:
                p.zero_grad()
            log(pipe["l_c"].item(), pipe["l_sr"].item(), l_r.item(),
                loss.item(), d_val)
            maybe_checkpoint()

    maybe_checkpoint(tag="final")
    log_path.write_text(",".join(LOG_COLUMNS) + "\n" + "\n".join(log_rows)
                        + ("\n" if log_rows else ""))
    return {
        "iterations": iteration,
        "log_path": log_path,
        "log_rows": log_rows,
        "checkpoints": checkpoints,
        "final_checkpoint": checkpoints[-1] if checkpoints else None,
    }


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def infer(models: dict, config: NetworkConfig, image: np.ndarray,
          mask: np.ndarray) -> np.ndarray:
    """Run the pipeline in eval mode (running batch statistics, frozen spectral
    state) and return the inpainted image clamped to [0, 1].

    ``image`` is 1,3,H,W or 3,H,W in [0, 1]; ``mask`` is H,W with 1 = invalid.
    Valid pixels of the output equal the masked input bit-exactly.
    """
    x = np.asarray(image)
    if x.ndim == 3:
        x = x[None]
    n, c, h, w = x.shape
    if mask.shape != (h, w):
        raise ValueError(f"mask {mask.shape} does not match image {x.shape}")
    s = config.scale

    x_t = Tensor(x)
    x_m = mask_image(x_t, mask)
    coarse_out = models["coarse"](x_m, mask[None], mode="infer", update_stats=False)
    x_c = coarse_blend(coarse_out, x_m, mask[None])
    x_sr = models["sr"](x_c, mode="infer", update_stats=False)
    mask_up = upscale_mask_nearest(mask, s)
    refine_out = models["refine"](x_sr, mask_up[None], mode="infer", update_stats=False)
    x_out = final_output(refine_out, x_m, mask[None], s)
    return np.clip(x_out.data, 0.0, 1.0)
