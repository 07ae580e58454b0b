"""Training and inversion objectives.

All losses are pure tensor functions, differentiable with respect to
the output image (and any trainable backend parameters), and accept
Image objects, HxWx3 numpy rasters, or torch tensors (CHW or BCHW).
Pixel values are in [0, 1].

The elementwise absolute-difference losses use means rather than sums,
so loss magnitudes do not scale with resolution or embedding width.
The total objective is a fixed weighted sum of five components; the
adversarial generator-side term is tracked alongside but deliberately
not folded into that sum (it only participates in the synthetic-data
training phase, where it is added with unit weight).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DimensionError, InvalidLossError, ScaleError

# Per-scale exponents of the multi-scale structural similarity index.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass
class LossWeights:
    """Objective weights; *_opt entries drive the inversion objective."""

    lam_id: float = 1.0
    lam_lnd: float = 0.001
    lam_perc: float = 0.01
    lam_style: float = 0.1
    lam_rec: float = 1.0
    lam_perc_opt: float = 0.01
    lam_id_opt: float = 0.1
    lam_mse_opt: float = 0.0
    alpha: float = 0.84

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if v < 0.0:
                raise InvalidLossError(f"{f.name} must be >= 0, got {v}")
            setattr(self, f.name, v)
        if self.alpha > 1.0:
            raise InvalidLossError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass
class LossBundle:
    """One step's loss components plus their weighted total.

    Fields may hold floats or 0-d tensors; ``floats()`` gives the
    detached numeric view for logging.
    """

    perc: object
    style: object
    id: object
    lnd: object
    rec: object
    adv_g: object = 0.0
    total: object = field(default=0.0)

    def floats(self) -> dict:
        return {f.name: _scalar(getattr(self, f.name)) for f in fields(self)}


def _scalar(v) -> float:
    return float(v.detach()) if torch.is_tensor(v) else float(v)


def _to_bchw(x, what: str) -> torch.Tensor:
    from .imaging import Image

    if isinstance(x, Image):
        x = x.pixels
    if isinstance(x, np.ndarray):
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3:
            raise DimensionError(f"{what} must be HxWxC, got shape {x.shape}")
        t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
        return t.permute(2, 0, 1).unsqueeze(0)
    if not torch.is_tensor(x):
        raise DimensionError(f"{what} must be an Image, ndarray or tensor")
    if x.ndim == 3:
        return x.unsqueeze(0)
    if x.ndim != 4:
        raise DimensionError(f"{what} tensor must be CHW or BCHW, got {tuple(x.shape)}")
    return x


def _pair(gt, out) -> tuple[torch.Tensor, torch.Tensor]:
    a = _to_bchw(gt, "gt")
    b = _to_bchw(out, "out")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: gt {tuple(a.shape)} vs out {tuple(b.shape)}")
    if a.dtype != b.dtype:
        common = torch.promote_types(a.dtype, b.dtype)
        a, b = a.to(common), b.to(common)
    return a, b


def _resize_to(x: torch.Tensor, res: int) -> torch.Tensor:
    if x.shape[-2] == res and x.shape[-1] == res:
        return x
    return F.interpolate(x, size=(res, res), mode="bilinear", align_corners=False)


# ---------------------------------------------------------------------------
# Component losses.
# ---------------------------------------------------------------------------

def loss_perceptual(gt, out, feat_backend) -> torch.Tensor:
    """Sum over feature layers of the mean absolute feature difference."""
    a, b = _pair(gt, out)
    fa = feat_backend.features_t(a)
    fb = feat_backend.features_t(b)
    total = 0.0
    for la, lb in zip(fa, fb):
        total = total + (la - lb).abs().mean()
    return total


def _gram(feat: torch.Tensor) -> torch.Tensor:
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def loss_style(gt, out, feat_backend) -> torch.Tensor:
    """Gram-matrix discrepancy, summed absolute entries scaled by 1/c^2."""
    a, b = _pair(gt, out)
    fa = feat_backend.features_t(a)
    fb = feat_backend.features_t(b)
    total = 0.0
    for la, lb in zip(fa, fb):
        c = la.shape[1]
        diff = _gram(la) - _gram(lb)
        total = total + diff.abs().sum(dim=(1, 2)).mean() / (c * c)
    return total


def loss_identity(a, b, face_backend) -> torch.Tensor:
    """Mean absolute difference between the two face embeddings."""
    x, y = _pair(a, b)
    res = face_backend.input_resolution
    if res is not None:
        x, y = _resize_to(x, res), _resize_to(y, res)
    return (face_backend.embed_t(x) - face_backend.embed_t(y)).abs().mean()


def loss_landmark(gt, out, lnd_backend) -> torch.Tensor:
    """Euclidean distance between predicted landmark vectors (flat 136-d)."""
    from .errors import LandmarkBackendError

    x, y = _pair(gt, out)
    res = lnd_backend.input_resolution
    if res is not None:
        x, y = _resize_to(x, res), _resize_to(y, res)
    try:
        pa = lnd_backend.points_t(x)
        pb = lnd_backend.points_t(y)
    except DimensionError:
        raise
    except Exception as exc:  # noqa: BLE001 - surface backend failures uniformly
        raise LandmarkBackendError(f"landmark backend failed: {exc}") from exc
    return torch.linalg.vector_norm(pa - pb, dim=1).mean()


def _gaussian_kernel(dtype, device) -> torch.Tensor:
    half = (SSIM_WINDOW - 1) / 2.0
    coords = torch.arange(SSIM_WINDOW, dtype=dtype, device=device) - half
    g = torch.exp(-(coords**2) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


def _blur(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    # Separable depthwise 11x11 Gaussian, valid padding.
    c = x.shape[1]
    kh = kernel.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    kw = kernel.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    x = F.conv2d(x, kh, groups=c)
    return F.conv2d(x, kw, groups=c)


def _ssim_maps(x: torch.Tensor, y: torch.Tensor, c1: float, c2: float):
    kernel = _gaussian_kernel(x.dtype, x.device)
    mu_x = _blur(x, kernel)
    mu_y = _blur(y, kernel)
    var_x = _blur(x * x, kernel) - mu_x * mu_x
    var_y = _blur(y * y, kernel) - mu_y * mu_y
    cov = _blur(x * y, kernel) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * cov + c2) / (var_x + var_y + c2)
    return lum, cs


def ms_ssim_scales(min_side: int) -> int:
    """Largest usable pyramid depth: side >= 2^(s-1) * window at every scale."""
    s = 0
    while s < len(MS_SSIM_WEIGHTS) and min_side >= (2**s) * SSIM_WINDOW:
        s += 1
    if s == 0:
        raise ScaleError(
            f"images of side {min_side} are below the {SSIM_WINDOW}-pixel window"
        )
    return s


def ms_ssim(gt, out, scales: int | None = None) -> torch.Tensor:
    """Multi-scale structural similarity on [0, 1] images.

    Pyramid depth defaults to the deepest the resolution supports (at
    most 5); exponents are renormalized to sum to 1 over the scales
    actually used, so identical images score exactly 1 at any depth.
    """
    x, y = _pair(gt, out)
    min_side = min(x.shape[-2], x.shape[-1])
    max_scales = ms_ssim_scales(min_side)
    if scales is None:
        scales = max_scales
    elif scales > max_scales:
        raise ScaleError(
            f"{scales} scales need side >= {2**(scales-1) * SSIM_WINDOW}, have {min_side}"
        )
    c1, c2 = 0.01**2, 0.03**2
    weights = torch.tensor(MS_SSIM_WEIGHTS[:scales], dtype=x.dtype, device=x.device)
    weights = weights / weights.sum()

    vals = []
    for s in range(scales):
        lum, cs = _ssim_maps(x, y, c1, c2)
        if s + 1 < scales:
            vals.append(F.relu(cs.mean()))
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        else:
            vals.append(F.relu((lum * cs).mean()))
    stacked = torch.stack(vals)
    return torch.prod(stacked**weights)


def loss_reconstruction(gt, out, alpha: float = 0.84) -> torch.Tensor:
    """alpha * (1 - MS-SSIM) + (1 - alpha) * mean absolute difference.

    alpha = 0 skips the pyramid entirely, so the pure-l1 branch works on
    images too small for the 11-pixel window.
    """
    x, y = _pair(gt, out)
    l1 = (x - y).abs().mean()
    if alpha == 0.0:
        return l1
    return alpha * (1.0 - ms_ssim(x, y)) + (1.0 - alpha) * l1


def loss_total(perc, style, id, lnd, rec, weights: LossWeights | None = None, adv_g=0.0) -> LossBundle:
    """Weighted sum of the five components; adversarial term echoed only."""
    weights = weights or LossWeights()
    parts = {"perc": perc, "style": style, "id": id, "lnd": lnd, "rec": rec, "adv_g": adv_g}
    for name, v in parts.items():
        if not math.isfinite(_scalar(v)):
            raise InvalidLossError(f"component {name} is non-finite: {_scalar(v)}")
    # Accumulation order is part of the contract: with default weights and
    # all-ones components this parenthesization sums to the double 2.111.
    total = (
        weights.lam_id * id
        + weights.lam_lnd * lnd
        + weights.lam_perc * perc
        + weights.lam_rec * rec
        + weights.lam_style * style
    )
    return LossBundle(perc=perc, style=style, id=id, lnd=lnd, rec=rec, adv_g=adv_g, total=total)


def loss_opt(in_masked, out_masked, crop, out_crop, backends, weights: LossWeights | None = None) -> torch.Tensor:
    """Inversion objective: perceptual on masked pair + identity on crops.

    The identity term runs the periocular identity encoder on the crop
    pair.  An optional mean-squared-error term on the masked pair is off
    by default (lam_mse_opt = 0).
    """
    weights = weights or LossWeights()
    perc = loss_perceptual(in_masked, out_masked, backends["feat"])
    ident = loss_identity(crop, out_crop, backends["id"])
    total = weights.lam_perc_opt * perc + weights.lam_id_opt * ident
    if weights.lam_mse_opt != 0.0:
        a, b = _pair(in_masked, out_masked)
        total = total + weights.lam_mse_opt * (a - b).pow(2).mean()
    return total


def combine_opt(perc, ident, weights: LossWeights | None = None, mse=0.0):
    """The bare weighted combination of precomputed inversion components."""
    weights = weights or LossWeights()
    return (
        weights.lam_perc_opt * perc
        + weights.lam_id_opt * ident
        + weights.lam_mse_opt * mse
    )
