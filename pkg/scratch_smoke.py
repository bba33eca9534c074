"""Desk-scale training smoke calibration (throwaway)."""
import sys
import time

import numpy as np

from zoominpaint.data import texture_image
from zoominpaint.losses import FeatureExtractor, LossWeights
from zoominpaint.masks import large_mask_spec, sample_mask, small_mask_spec
from zoominpaint.metrics import hole_l1
from zoominpaint.networks import NetworkConfig, build_models
from zoominpaint.pipeline import (PipelineConfig, ProgressiveSchedule, Stage,
                                  infer, train)
from zoominpaint import tensor as tt
from zoominpaint.tensor import Tensor

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 2e-3
iters_small = int(sys.argv[2]) if len(sys.argv) > 2 else 200
iters_large = int(sys.argv[3]) if len(sys.argv) > 3 else 500


class ArrayDataset:
    def __init__(self, images):
        self.images = images

    def random_batch(self, rng, n, size):
        from zoominpaint.data import random_crop
        out = np.empty((n, 3, size, size))
        for i in range(n):
            img = self.images[int(rng.integers(0, len(self.images)))]
            out[i] = random_crop(img, size, rng)
        return out


def eval_hole_l1(models, cfg, test_lr, test_masks):
    vals = []
    for img, m in zip(test_lr, test_masks):
        out = infer(models, cfg, img, m)[0]
        vals.append(hole_l1(out, img, m))
    return float(np.mean(vals))


t0 = time.perf_counter()
rng = np.random.default_rng(123)
train_imgs = [texture_image(96, rng) for _ in range(64)]
test_imgs = [texture_image(64, rng) for _ in range(16)]

cfg = NetworkConfig.desk()
pipe_cfg = PipelineConfig.desk()
pipe_cfg.lr = lr
pipe_cfg.iterations_small = iters_small
pipe_cfg.iterations_large = iters_large

# held-out eval set at LR resolution
test_lr = []
mask_rng = np.random.default_rng(999)
test_masks = []
for img in test_imgs:
    lr_img = tt.resize_bicubic(Tensor(img[None]), 32, 32).data[0]
    test_lr.append(np.clip(lr_img, 0, 1))
    test_masks.append(sample_mask(small_mask_spec(), 32, 32, mask_rng))

models = build_models(cfg, seed=11, dtype=np.float32)
phi = FeatureExtractor(widths=(16, 32, 64), seed=0, dtype=np.float32)
init_l1 = eval_hole_l1(models, cfg, test_lr, test_masks)

mean_fill = []
for img, m in zip(test_lr, test_masks):
    valid_mean = img[:, m == 0].mean(axis=1)
    filled = img.copy()
    filled[:, m == 1] = valid_mean[:, None]
    mean_fill.append(hole_l1(filled, img, m))
mean_fill = float(np.mean(mean_fill))
print(f"init hole L1: {init_l1:.5f}   mean-fill baseline: {mean_fill:.5f}", flush=True)

sched = ProgressiveSchedule([Stage(small_mask_spec(), iters_small),
                             Stage(large_mask_spec(), iters_large)])
data = ArrayDataset(train_imgs)

t1 = time.perf_counter()
summary = train(models, sched, data, cfg, pipe_cfg, LossWeights(), phi,
                "/tmp/smoke_out", seed=77)
t2 = time.perf_counter()

final_l1 = eval_hole_l1(models, cfg, test_lr, test_masks)
print(f"lr={lr} iters={iters_small}+{iters_large}")
print(f"setup {t1-t0:.0f}s  train {t2-t1:.0f}s  ({(t2-t1)/max(1,summary['iterations']):.2f}s/iter)")
print(f"final hole L1: {final_l1:.5f}  improvement {(1-final_l1/init_l1)*100:.1f}%  "
      f"(need >=30%), beats mean-fill: {final_l1 < mean_fill}")
rows = summary["log_rows"]
print("first row:", rows[0])
print("last row :", rows[-1])
