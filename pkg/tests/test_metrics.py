"""Metrics against closed forms and direct per-window formula oracles."""

import math

import numpy as np
import pytest

from zoominpaint.metrics import (
    PSNR_CAP, band_energies, band_metrics, evaluate_pairs, hole_l1,
    l1_error, laplacian_pyramid, ms_ssim, psnr, reconstruct, ssim,
)


# ---------------------------------------------------------------------------
# direct-formula oracles (windows visited one by one)
# ---------------------------------------------------------------------------

def gauss_win(size=11, sigma=1.5):
    half = (size - 1) / 2
    g = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim_oracle_maps(p, t, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Per-position SSIM and contrast-structure values, one window at a time."""
    k = min(window, p.shape[0], p.shape[1])
    if k % 2 == 0:
        k -= 1
    win = gauss_win(k, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    hh, ww = p.shape[0] - k + 1, p.shape[1] - k + 1
    smap = np.zeros((hh, ww))
    csmap = np.zeros((hh, ww))
    for i in range(hh):
        for j in range(ww):
            wp = p[i:i + k, j:j + k]
            wt = t[i:i + k, j:j + k]
            mp = (win * wp).sum()
            mt = (win * wt).sum()
            vp = (win * (wp - mp) ** 2).sum()
            vt = (win * (wt - mt) ** 2).sum()
            cov = (win * (wp - mp) * (wt - mt)).sum()
            lum = (2 * mp * mt + c1) / (mp ** 2 + mt ** 2 + c1)
            cs = (2 * cov + c2) / (vp + vt + c2)
            smap[i, j] = lum * cs
            csmap[i, j] = cs
    return smap, csmap


def ssim_oracle(p, t, **kw):
    chans = p if p.ndim == 3 else p[None]
    chant = t if t.ndim == 3 else t[None]
    vals = [ssim_oracle_maps(a, b, **kw)[0].mean() for a, b in zip(chans, chant)]
    return float(np.mean(vals))


def ms_ssim_oracle(p, t, window=11, weights=(0.0448, 0.2856, 0.3001, 0.2363, 0.1333)):
    chans = p if p.ndim == 3 else p[None]
    chant = t if t.ndim == 3 else t[None]
    h, w = chans.shape[1], chans.shape[2]
    scales = 1
    while scales < len(weights) and min(h, w) // (2 ** scales) >= window:
        scales += 1
    wts = np.array(weights[:scales])
    wts /= wts.sum()

    def pool(a):
        h2, w2 = a.shape[0] - a.shape[0] % 2, a.shape[1] - a.shape[1] % 2
        return a[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))

    per_channel = []
    for a, b in zip(chans, chant):
        acc = 1.0
        for j in range(scales):
            smap, csmap = ssim_oracle_maps(a, b, window=window)
            if j < scales - 1:
                acc *= max(csmap.mean(), 0.0) ** wts[j]
                a, b = pool(a), pool(b)
            else:
                acc *= max(smap.mean(), 0.0) ** wts[j]
        per_channel.append(acc)
    return float(np.mean(per_channel))


def rand_img(shape, seed):
    return np.random.default_rng(seed).random(shape)


class TestPsnr:
    def test_identical_reports_cap(self):
        x = rand_img((3, 16, 16), 0)
        assert psnr(x, x) == PSNR_CAP

    def test_uniform_difference_closed_form(self):
        x = rand_img((3, 8, 8), 1) * 0.5
        assert abs(psnr(x + 0.1, x) - 20.0) < 1e-9
        assert abs(psnr(x + 0.5, x) - 10 * math.log10(1 / 0.25)) < 1e-9
        assert abs(psnr(x + 0.5, x) - 6.0206) < 1e-3

    def test_symmetry(self):
        a, b = rand_img((3, 12, 12), 2), rand_img((3, 12, 12), 3)
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_noise(self):
        x = rand_img((3, 16, 16), 4)
        rng = np.random.default_rng(5)
        noise = rng.standard_normal(x.shape)
        values = [psnr(x + amp * noise, x) for amp in (0.01, 0.05, 0.1, 0.2)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestSsim:
    def test_identical_is_one(self):
        x = rand_img((3, 20, 20), 6)
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_image_matches_oracle(self):
        x = rand_img((1, 16, 16), 7)
        got = ssim(1.0 - x, x)
        assert got < 1.0
        assert got == pytest.approx(ssim_oracle(1.0 - x, x), abs=1e-9)

    def test_constant_pair_closed_form(self):
        a = np.full((1, 16, 16), 0.3)
        b = np.full((1, 16, 16), 0.4)
        c1 = 0.01 ** 2
        # zero variances: contrast-structure term is exactly 1
        expect = (2 * 0.3 * 0.4 + c1) / (0.3 ** 2 + 0.4 ** 2 + c1)
        assert ssim(a, b) == pytest.approx(expect, abs=1e-12)

    def test_random_pairs_match_oracle(self):
        for seed in range(5):
            a, b = rand_img((2, 14, 14), seed), rand_img((2, 14, 14), 100 + seed)
            assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)

    def test_symmetry_and_monotonicity(self):
        a, b = rand_img((1, 16, 16), 8), rand_img((1, 16, 16), 9)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
        x = rand_img((1, 20, 20), 10)
        noise = np.random.default_rng(11).standard_normal(x.shape)
        vals = [ssim(x + amp * noise, x) for amp in (0.02, 0.05, 0.1, 0.2)]
        assert all(u > v for u, v in zip(vals, vals[1:]))


class TestMsSsim:
    def test_identical_is_one(self):
        x = rand_img((3, 64, 64), 12)
        assert ms_ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_small_image_falls_back_to_ssim(self):
        a, b = rand_img((1, 8, 8), 13), rand_img((1, 8, 8), 14)
        assert ms_ssim(a, b) == pytest.approx(ssim(a, b), abs=1e-12)

    def test_matches_multiscale_oracle(self):
        a, b = rand_img((1, 64, 64), 15), rand_img((1, 64, 64), 16)
        assert ms_ssim(a, b) == pytest.approx(ms_ssim_oracle(a, b), abs=1e-9)
        # smooth correlated pair as well
        base = rand_img((1, 64, 64), 17)
        a2 = np.clip(base + 0.05 * rand_img((1, 64, 64), 18), 0, 1)
        assert ms_ssim(a2, base) == pytest.approx(ms_ssim_oracle(a2, base), abs=1e-9)


class TestLaplacian:
    def test_reconstruction_exact(self):
        for seed in range(20):
            x = rand_img((3, 24, 24), seed)
            pyr = laplacian_pyramid(x, levels=2)
            assert np.abs(reconstruct(pyr) - x).max() < 1e-6

    def test_constant_image_all_bands_zero(self):
        x = np.full((1, 16, 16), 0.6)
        pyr = laplacian_pyramid(x, levels=2)
        for band in pyr.levels:
            np.testing.assert_allclose(band, 0.0, atol=1e-12)
        np.testing.assert_allclose(pyr.residual, 0.6, atol=1e-12)

    def test_stripes_concentrate_in_level0(self):
        x = np.zeros((1, 32, 32))
        x[:, :, 1::2] = 1.0          # two-pixel-period vertical stripes
        pyr = laplacian_pyramid(x, levels=2)
        energies = band_energies(pyr)
        assert energies[0] / sum(energies) > 0.9

    def test_band_structure_and_energy_preservation(self):
        x = rand_img((1, 20, 20), 30)
        pyr = laplacian_pyramid(x, levels=2)
        assert len(pyr.levels) == 2
        assert pyr.levels[0].shape == (1, 20, 20)
        assert pyr.levels[1].shape == (1, 10, 10)
        assert pyr.residual.shape == (1, 5, 5)
        rec = reconstruct(pyr)
        assert (rec ** 2).sum() == pytest.approx((x ** 2).sum(), rel=1e-10)

    def test_odd_sizes_reconstruct(self):
        x = rand_img((1, 19, 21), 31)
        pyr = laplacian_pyramid(x, levels=2)
        assert np.abs(reconstruct(pyr) - x).max() < 1e-6


class TestBandMetrics:
    def test_identical_ones(self):
        x = rand_img((3, 32, 32), 19)
        np.testing.assert_allclose(band_metrics(x, x), 1.0, atol=1e-12)

    def test_high_frequency_noise_hits_band0_most(self):
        rng = np.random.default_rng(20)
        x = rand_img((1, 32, 32), 21)
        # alternating-sign noise is pure high frequency
        noise = 0.2 * rng.random((1, 32, 32))
        sign = np.indices((32, 32)).sum(axis=0) % 2 * 2 - 1
        noisy = x + noise * sign
        bands = band_metrics(noisy, x)
        assert bands[0] < bands[1] and bands[0] < bands[2]

    def test_layout(self):
        x, y = rand_img((1, 16, 16), 22), rand_img((1, 16, 16), 23)
        assert len(band_metrics(x, y, levels=2)) == 3


class TestAggregation:
    def test_identical_pair_report(self):
        x = rand_img((3, 16, 16), 24)
        rep = evaluate_pairs([x], [x.copy()])
        assert rep.psnr == PSNR_CAP
        assert rep.ssim == pytest.approx(1.0, abs=1e-12)
        assert rep.l1_error == 0.0
        assert rep.n_images == 1

    def test_aggregation_is_mean_of_per_image(self):
        preds = [rand_img((1, 16, 16), s) for s in range(4)]
        targs = [rand_img((1, 16, 16), 50 + s) for s in range(4)]
        rep = evaluate_pairs(preds, targs)
        assert rep.psnr == pytest.approx(
            np.mean([psnr(p, t) for p, t in zip(preds, targs)]), abs=1e-12)
        assert rep.l1_error == pytest.approx(
            np.mean([l1_error(p, t) for p, t in zip(preds, targs)]), abs=1e-12)

    def test_hole_l1(self):
        x = np.zeros((1, 4, 4))
        y = np.ones((1, 4, 4)) * 0.5
        m = np.zeros((4, 4))
        m[0, 0] = 1
        assert hole_l1(x, y, m) == pytest.approx(0.5)
        assert hole_l1(x, y, np.zeros((4, 4))) == 0.0
