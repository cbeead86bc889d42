"""Self-supervised photometric and smoothness losses."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

SSIM_WEIGHT = 0.85
SMOOTHNESS_WEIGHT = 1e-3
_C1 = 0.01**2
_C2 = 0.03**2
_BIG = 1e3


class DegenerateWarpError(RuntimeError):
    """No pixel survived the validity and automasking tests."""


def _box3(x: Tensor) -> Tensor:
    """3x3 mean with reflection padding, channel by channel."""
    c, h, w = x.shape
    padded = T.pad2d(x, 1, "reflect").reshape(c, 1, h + 2, w + 2)
    kernel = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0))
    return T.conv2d(padded, kernel).reshape(c, h, w)


def ssim(x, y) -> Tensor:
    """Per-pixel SSIM map over 3x3 windows, shape [c,h,w]."""
    x, y = T.as_tensor(x), T.as_tensor(y)
    mu_x, mu_y = _box3(x), _box3(y)
    sigma_x = _box3(x * x) - mu_x * mu_x
    sigma_y = _box3(y * y) - mu_y * mu_y
    sigma_xy = _box3(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _C1) * (2 * sigma_xy + _C2)
    den = (mu_x * mu_x + mu_y * mu_y + _C1) * (sigma_x + sigma_y + _C2)
    return num / den


def photometric_error(target, warped, ssim_weight: float = SSIM_WEIGHT) -> Tensor:
    """Per-pixel a*(1 - SSIM)/2 + (1 - a)*L1, averaged over channels: [h,w]."""
    target, warped = T.as_tensor(target), T.as_tensor(warped)
    l1 = T.abs_(target - warped).mean(axis=0)
    if ssim_weight == 0:
        return l1 * (1.0 - ssim_weight)
    structure = ((1.0 - ssim(target, warped)) * 0.5).mean(axis=0)
    return structure * ssim_weight + l1 * (1.0 - ssim_weight)


def _min_over(errors: list[Tensor]) -> Tensor:
    out = errors[0]
    for e in errors[1:]:
        out = T.minimum(out, e)
    return out


def photometric_loss(target, warped_refs, masks, identity_refs=None,
                     ssim_weight: float = SSIM_WEIGHT) -> Tensor:
    """Minimum reprojection error over references, averaged over valid pixels.

    With ``identity_refs`` (the unwarped references) the stationary-pixel
    automask is applied: pixels where some unwarped reference already matches
    the target at least as well as every warped one are dropped.
    """
    if not warped_refs:
        raise ValueError("photometric_loss needs at least one warped reference")
    errors, valid = [], None
    for warped, mask in zip(warped_refs, masks):
        m = np.asarray(mask.data if isinstance(mask, Tensor) else mask) > 0.5
        err = photometric_error(target, warped, ssim_weight)
        errors.append(err * Tensor(m) + Tensor(np.where(m, 0.0, _BIG)))
        valid = m if valid is None else (valid | m)
    best = _min_over(errors)
    keep = valid
    if identity_refs is not None:
        with T.no_grad():
            ident = _min_over([photometric_error(target, r, ssim_weight) for r in identity_refs])
        keep = keep & ~(best.data >= ident.data)  # NaN stays in so divergence is visible
    count = int(keep.sum())
    if count == 0:
        raise DegenerateWarpError("no valid pixels remain for the photometric loss")
    return (best * Tensor(keep)).sum() / float(count)


def smoothness_loss(depth, image) -> Tensor:
    """Edge-aware first-order smoothness of mean-normalised disparity."""
    depth, image = T.as_tensor(depth), T.as_tensor(image)
    if depth.shape != image.shape[1:]:
        raise T.DimensionError(f"smoothness_loss: depth {depth.shape} vs image {image.shape}")
    disp = 1.0 / depth
    disp = disp / disp.mean()
    dx = T.abs_(disp[:, 1:] - disp[:, :-1])
    dy = T.abs_(disp[1:, :] - disp[:-1, :])
    ix = T.abs_(image[:, :, 1:] - image[:, :, :-1]).mean(axis=0)
    iy = T.abs_(image[:, 1:, :] - image[:, :-1, :]).mean(axis=0)
    return (dx * T.exp(-ix)).mean() + (dy * T.exp(-iy)).mean()
