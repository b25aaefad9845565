import numpy as np
import pytest

from codepth import losses
from codepth.autodiff import Tensor
from codepth.losses import LossWeights, combined_loss, photometric_l1, smoothness, ssim_loss

FULL = np.ones((6, 7))


def img(seed, c=3, h=6, w=7):
    return Tensor(np.random.default_rng(seed).random((1, c, h, w)))


def test_l1_cases():
    i = img(0)
    assert photometric_l1(i, i, FULL).item() == 0.0
    assert photometric_l1(Tensor(i.data + 0.5), i, FULL).item() == pytest.approx(0.5, abs=1e-6)


def test_l1_counts_only_valid_pixels():
    i = img(1)
    shifted = i.data.copy()
    shifted[..., :, 0] += 3.0
    mask = FULL.copy()
    mask[:, 0] = 0
    assert photometric_l1(Tensor(shifted), i, mask).item() == pytest.approx(0.0, abs=1e-6)


def test_l1_empty_mask():
    with pytest.raises(ValueError, match="no valid"):
        photometric_l1(img(0), img(1), np.zeros((6, 7)))


def test_ssim_identical_is_zero():
    i = img(2)
    assert ssim_loss(i, i, FULL).item() == pytest.approx(0.0, abs=1e-6)


def test_ssim_constant_zero_vs_one_oracle():
    # scalar SSIM with both variances zero: (C1 * C2) / ((1 + C1) * C2)
    c1 = 0.01**2
    ssim = c1 / (1.0 + c1)
    expected = (1.0 - ssim) / 2.0
    got = ssim_loss(Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.ones((1, 1, 5, 5))), np.ones((5, 5))).item()
    assert 0 < got <= 0.5
    assert got == pytest.approx(expected, rel=1e-6)


def test_ssim_needs_a_full_window():
    mask = np.ones((5, 5))
    mask[2, :] = 0
    mask[:, 2] = 0
    with pytest.raises(ValueError, match="windows"):
        ssim_loss(img(0, h=5, w=5), img(1, h=5, w=5), mask)


def test_smoothness_constant_disparity():
    assert smoothness(Tensor(np.full((1, 1, 6, 7), 3.0)), img(3)).item() == 0.0


def test_smoothness_ramp_on_flat_image():
    slope = 0.25
    d = 1.0 + slope * np.arange(7, dtype=np.float64)
    disp = Tensor(np.tile(d, (6, 1))[None, None])
    flat = Tensor(np.full((1, 3, 6, 7), 0.4))
    assert smoothness(disp, flat).item() == pytest.approx(slope / d.mean(), rel=1e-6)


def test_smoothness_suppressed_at_strong_edge():
    d = np.ones((1, 1, 6, 8))
    d[..., 4:] = 2.0
    edge = np.zeros((1, 3, 6, 8))
    edge[..., 4:] = 60.0
    flat = np.zeros((1, 3, 6, 8))
    at_edge = smoothness(Tensor(d), Tensor(edge)).item()
    no_edge = smoothness(Tensor(d), Tensor(flat)).item()
    assert no_edge > 0.05
    assert at_edge < 1e-20


def test_combined_perfect_reconstruction():
    i = img(4)
    disp = Tensor(np.full((1, 1, 6, 7), 2.0))
    assert combined_loss(i, i, disp, i, FULL).item() == pytest.approx(0.0, abs=1e-6)


def test_combined_weight_arithmetic(monkeypatch):
    monkeypatch.setattr(losses, "photometric_l1", lambda *a: Tensor(1.0))
    monkeypatch.setattr(losses, "ssim_loss", lambda *a: Tensor(0.0))
    monkeypatch.setattr(losses, "smoothness", lambda *a: Tensor(0.0))
    i = img(5)
    assert combined_loss(i, i, i, i, FULL).item() == pytest.approx(0.15)


def test_combined_zero_weights():
    out = combined_loss(img(6), img(7), Tensor(np.random.default_rng(1).random((1, 1, 6, 7)) + 0.5), img(8), FULL, LossWeights(0, 0, 0))
    assert out.item() == 0.0


def test_combined_is_the_weighted_sum():
    i_hat, i, src = img(9), img(10), img(11)
    disp = Tensor(np.random.default_rng(2).uniform(1, 3, (1, 1, 6, 7)))
    w = LossWeights()
    parts = (
        0.15 * photometric_l1(i_hat, i, FULL).item()
        + 0.85 * ssim_loss(i_hat, i, FULL).item()
        + 0.1 * smoothness(disp, src).item()
    )
    assert combined_loss(i_hat, i, disp, src, FULL, w).item() == pytest.approx(parts, rel=1e-6)


def test_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(beta_s=-0.1)
