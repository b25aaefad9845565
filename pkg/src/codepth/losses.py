"""Unsupervised reconstruction objective: L1 + SSIM + edge-aware smoothness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    beta_p: float = 0.15
    beta_ss: float = 0.85
    beta_s: float = 0.1

    def __post_init__(self):
        if min(self.beta_p, self.beta_ss, self.beta_s) < 0:
            raise ValueError("loss weights must be non-negative")


def _channel_mask(mask: np.ndarray, shape) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float32)
    if m.shape != tuple(shape):
        m = np.broadcast_to(m, shape)
    return m


def photometric_l1(i_hat: Tensor, i: Tensor, mask: np.ndarray) -> Tensor:
    """Mean absolute difference over valid pixels (and channels)."""
    if i_hat.shape != i.shape:
        raise ad.ShapeError(f"photometric_l1: shapes {i_hat.shape} and {i.shape} differ")
    m = _channel_mask(mask, i.shape)
    count = float(m.sum(dtype=np.float64))
    if count == 0:
        raise ValueError("photometric_l1: mask has no valid pixels")
    diff = ad.absolute(ad.sub(i_hat, i))
    return ad.mul(ad.sum_all(ad.mul(diff, Tensor(m))), 1.0 / count)


def ssim_map(x: Tensor, y: Tensor) -> Tensor:
    """Per-window SSIM with 3×3 uniform windows (valid windows only)."""
    mu_x = ad.box_filter3(x)
    mu_y = ad.box_filter3(y)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_x = ad.box_filter3(x * x) - mu_xx
    sigma_y = ad.box_filter3(y * y) - mu_yy
    sigma_xy = ad.box_filter3(x * y) - mu_xy
    num = (2.0 * mu_xy + SSIM_C1) * (2.0 * sigma_xy + SSIM_C2)
    den = (mu_xx + mu_yy + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return num / den


def window_mask(mask: np.ndarray) -> np.ndarray:
    """A 3×3 window is valid only when all nine pixels are valid."""
    m = np.asarray(mask, dtype=np.float32)
    h, w = m.shape[-2:]
    out = np.ones(m.shape[:-2] + (h - 2, w - 2), dtype=np.float32)
    for i in range(3):
        for j in range(3):
            out = np.minimum(out, m[..., i : i + h - 2, j : j + w - 2])
    return out


def ssim_loss(i_hat: Tensor, i: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of (1 - SSIM) / 2 over fully valid 3×3 windows."""
    if i_hat.shape != i.shape:
        raise ad.ShapeError(f"ssim_loss: shapes {i_hat.shape} and {i.shape} differ")
    s = ssim_map(i_hat, i)
    wm = _channel_mask(window_mask(np.broadcast_to(np.asarray(mask, dtype=np.float32), (1, 1) + i.shape[2:])), s.shape)
    count = float(wm.sum(dtype=np.float64))
    if count == 0:
        raise ValueError("ssim_loss: mask has no valid 3x3 windows")
    per = (1.0 - s) * 0.5
    return ad.mul(ad.sum_all(ad.mul(per, Tensor(wm))), 1.0 / count)


def smoothness(disp: Tensor, image: Tensor) -> Tensor:
    """Edge-aware first-order smoothness of the mean-normalised disparity."""
    norm = disp / ad.mean_all(disp)
    img = image.data
    wx = np.exp(-np.abs(img[:, :, :, 1:] - img[:, :, :, :-1]).mean(axis=1, keepdims=True))
    wy = np.exp(-np.abs(img[:, :, 1:, :] - img[:, :, :-1, :]).mean(axis=1, keepdims=True))
    dx = ad.absolute(norm[:, :, :, 1:] - norm[:, :, :, :-1])
    dy = ad.absolute(norm[:, :, 1:, :] - norm[:, :, :-1, :])
    return ad.mean_all(dx * Tensor(wx)) + ad.mean_all(dy * Tensor(wy))


def combined_loss(
    i_hat: Tensor,
    i: Tensor,
    disp: Tensor,
    i_src: Tensor,
    mask: np.ndarray,
    w: LossWeights = LossWeights(),
) -> Tensor:
    """``beta_p * L1 + beta_ss * SSIM + beta_s * smoothness(disp, i_src)``."""
    total = Tensor(0.0)
    if w.beta_p:
        total = total + w.beta_p * photometric_l1(i_hat, i, mask)
    if w.beta_ss:
        total = total + w.beta_ss * ssim_loss(i_hat, i, mask)
    if w.beta_s:
        total = total + w.beta_s * smoothness(disp, i_src)
    return total
