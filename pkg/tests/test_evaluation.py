import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slwsr.errors import ConfigurationError
from slwsr.evaluation import (EvalReport, ImageScore, bicubic_upscaler, comparison_strip, evaluate_images, make_lr,
                              score_pair, self_ensemble)
from slwsr.imaging import (bicubic_resize, cubic, dihedral, dihedral_inverse, load_image, modcrop, quantize,
                           rgb_to_y, save_png, to_chw, to_hwc_u8)
from slwsr.metrics import PSNR_IDENTICAL, gaussian_window, psnr, ssim


def naive_resize_1d(v, factor):
    """Direct per-output-pixel cubic resampling with clamped borders."""
    n = len(v)
    out_n = int(math.ceil(n * factor - 1e-9))
    kw = 4.0 / factor if factor < 1 else 4.0
    out = np.empty(out_n)
    for i in range(out_n):
        u = (i + 0.5) / factor - 0.5
        acc = wsum = 0.0
        for j in range(int(math.floor(u - kw / 2)) - 1, int(math.ceil(u + kw / 2)) + 2):
            d = u - j
            wt = factor * cubic(factor * d) if factor < 1 else cubic(d)
            acc += wt * v[min(max(j, 0), n - 1)]
            wsum += wt
        out[i] = acc / wsum
    return out


def naive_resize(img, factor):
    tmp = np.stack([naive_resize_1d(col, factor) for col in img.T], axis=1)
    return np.stack([naive_resize_1d(row, factor) for row in tmp])


# ---------------------------------------------------------------- bicubic


@pytest.mark.parametrize("factor", [0.25, 0.5, 2.0, 4.0, 1 / 3])
def test_bicubic_matches_naive(factor, rng):
    img = rng.random((13, 10)) * 255
    np.testing.assert_allclose(bicubic_resize(img, factor), naive_resize(img, factor), atol=1e-9)


def test_bicubic_identity_and_constant(rng):
    img = rng.random((9, 7, 3))
    np.testing.assert_allclose(bicubic_resize(img, 1.0), img, atol=1e-6)
    const = np.full((12, 8), 77.0)
    for f in (0.25, 0.5, 3.0, 4.0):
        np.testing.assert_allclose(bicubic_resize(const, f), 77.0, atol=1e-9)
        np.testing.assert_allclose(bicubic_resize(const, f, edge="symmetric"), 77.0, atol=1e-9)


def test_bicubic_translation_consistent(rng):
    img = rng.random((40, 40))
    up = bicubic_resize(img, 2.0)
    up_shift = bicubic_resize(np.roll(img, 1, axis=1), 2.0)
    np.testing.assert_allclose(up_shift[:, 8:-8], np.roll(up, 2, axis=1)[:, 8:-8], atol=1e-4)
    down = bicubic_resize(img, 0.25)
    down_shift = bicubic_resize(np.roll(img, 4, axis=0), 0.25)
    np.testing.assert_allclose(down_shift[3:-3], np.roll(down, 1, axis=0)[3:-3], atol=1e-4)


def test_bicubic_shapes_and_errors():
    assert bicubic_resize(np.zeros((10, 7, 3)), 0.25).shape == (3, 2, 3)
    assert bicubic_resize(np.zeros((3, 2)), 4).shape == (12, 8)
    with pytest.raises(ConfigurationError):
        bicubic_resize(np.zeros((4, 4)), 0)
    with pytest.raises(ConfigurationError):
        bicubic_resize(np.zeros((4, 4)), 2, edge="wrap")


def test_upscaler_wraps_chw(rng):
    lr = rng.random((3, 5, 6))
    out = bicubic_upscaler(4)(lr)
    assert out.shape == (3, 20, 24)
    np.testing.assert_allclose(out[1], bicubic_resize(lr[1], 4))


# ----------------------------------------------------------------- colour


def test_y_channel_values():
    px = lambda v: np.full((1, 1, 3), v, np.uint8)
    assert rgb_to_y(px(255), channel_axis=-1).item() == pytest.approx(235.0, abs=0.01)
    assert rgb_to_y(px(0), channel_axis=-1).item() == pytest.approx(16.0)
    assert rgb_to_y(px(128), channel_axis=-1).item() == pytest.approx(16 + 219.859 * 128 / 256, abs=1e-9)
    assert rgb_to_y(px(128), channel_axis=-1).item() == pytest.approx(125.93, abs=0.01)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=3, max_size=3))
def test_y_in_studio_range(rgb):
    y = rgb_to_y(np.array(rgb, float).reshape(3, 1, 1)).item()
    assert 16.0 - 1e-9 <= y <= 235.0 + 0.01


# ---------------------------------------------------------------- metrics


def test_psnr_examples(rng):
    a = rng.integers(0, 256, (20, 20)).astype(float)
    assert psnr(a, a) == PSNR_IDENTICAL == 99.0
    assert psnr(a, a + 1.0) == pytest.approx(20 * math.log10(255), abs=0.01)
    assert psnr(a, a + 1.0) == pytest.approx(48.13, abs=0.01)
    b = rng.integers(0, 256, (20, 20)).astype(float)
    mse = sum((a[i, j] - b[i, j]) ** 2 for i in range(2, 18) for j in range(2, 18)) / 256
    assert psnr(a, b, shave=2) == pytest.approx(10 * math.log10(255 ** 2 / mse), rel=1e-12)
    assert psnr(a, b) == psnr(b, a)


def test_psnr_monotone_in_noise(rng):
    a = rng.random((32, 32)) * 200 + 20
    noise = rng.uniform(-1, 1, a.shape)
    values = [psnr(a, a + amp * noise) for amp in (0.5, 1, 2, 4, 8)]
    assert all(x > y for x, y in zip(values, values[1:]))


def naive_ssim(a, b, size=11, sigma=1.5, L=255.0):
    g = gaussian_window(size, sigma)
    w = np.outer(g, g)
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_examples(rng):
    a = rng.integers(0, 256, (24, 20)).astype(float)
    b = np.clip(a + rng.normal(0, 20, a.shape), 0, 255)
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, 255 - a) < 1
    assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-6)
    with pytest.raises(ConfigurationError):
        ssim(a[:8, :8], a[:8, :8])


# --------------------------------------------------------------- ensemble


def test_dihedral_group(rng):
    x = rng.random((2, 4, 5))
    outs = {dihedral(x, c).tobytes() for c in range(8)}
    assert len(outs) == 8
    for c in range(8):
        np.testing.assert_array_equal(dihedral_inverse(dihedral(x, c), c), x)
    np.testing.assert_array_equal(dihedral(x, 0), x)


def duplicate(x):
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def test_ensemble_of_equivariant_model(rng):
    lr = rng.random((3, 5, 7))
    np.testing.assert_allclose(self_ensemble(duplicate, lr), duplicate(lr), atol=1e-12)


def test_ensemble_direct_sum_oracle(rng):
    w = rng.standard_normal((3, 3))

    def model(x):  # not equivariant: mixes along one spatial axis only
        return duplicate(x + 0.3 * np.roll(x, 1, axis=-1) * w.sum())

    lr = rng.random((3, 4, 6))
    total = np.zeros(duplicate(lr).shape)
    for k in range(8):
        total += dihedral_inverse(model(dihedral(lr, k)), k)
    got = self_ensemble(model, lr)
    np.testing.assert_allclose(got, total / 8, atol=1e-12)
    assert not np.allclose(got, model(lr))


def test_ensemble_on_real_model(rng):
    from slwsr.config import ModelConfig
    from slwsr.model import build_model

    model = build_model(ModelConfig(n_feats=4, scale=2))
    lr = rng.random((3, 6, 5)).astype(np.float32)
    total = sum(dihedral_inverse(model.predict(dihedral(lr, k)), k).astype(np.float64) for k in range(8))
    np.testing.assert_allclose(self_ensemble(model, lr), total / 8, atol=1e-6)


# --------------------------------------------------------------- pipeline


def test_round_trip_and_modcrop(tmp_path, rng):
    img = rng.integers(0, 256, (10, 11, 3)).astype(np.uint8)
    save_png(tmp_path / "a.png", img)
    np.testing.assert_array_equal(load_image(tmp_path / "a.png"), img)
    np.testing.assert_array_equal(to_hwc_u8(to_chw(img)), img)
    assert modcrop(img, 4).shape == (8, 8, 3)
    assert quantize(np.array([-3.2, 0.5, 1.5, 254.6, 300])).tolist() == [0, 0, 2, 255, 255]


def test_score_pair_uses_shaved_y(rng):
    hr = rng.integers(0, 256, (40, 40, 3)).astype(np.uint8)
    sr = hr.copy()
    sr[:4] = 0  # only the shaved border differs
    p, s = score_pair(sr, hr, 4)
    assert p == PSNR_IDENTICAL and s == pytest.approx(1.0)


def test_bicubic_on_fixtures(fixtures_dir):
    hr = [load_image(p) for p in sorted(fixtures_dir.glob("*.png"))]
    report = evaluate_images(bicubic_upscaler(4), hr, 4, names=["a", "b"])
    assert [s.name for s in report.images] == ["a", "b"]
    assert 25 < report.mean_psnr < 30 and 0.7 < report.mean_ssim < 0.95
    threaded = evaluate_images(bicubic_upscaler(4), hr, 4, names=["a", "b"], jobs=2)
    assert threaded.to_csv() == report.to_csv()


def test_report_mean_and_csv():
    r = EvalReport("set", "m", 4, True, [ImageScore("a", 30.0, 0.8), ImageScore("b", 32.0, 0.9)])
    assert r.mean_psnr == 31.0 and r.mean_ssim == pytest.approx(0.85)
    assert r.to_csv().splitlines()[-1] == "set,m,4,1,mean,31.0000,0.850000"
    assert "m+" in r.table()


def test_make_lr_shape(rng):
    hr = rng.integers(0, 256, (16, 12, 3)).astype(np.uint8)
    lr = make_lr(hr, 4)
    assert lr.shape == (4, 3, 3) and lr.dtype == np.uint8


def test_comparison_strip():
    crops = [np.zeros((4, 3, 3), np.uint8), np.ones((2, 5, 3), np.uint8)]
    strip = comparison_strip(crops, gap=2)
    assert strip.shape == (4, 10, 3)
    assert (strip[:2, 5:] == 1).all() and (strip[2:, 5:] == 255).all()
