"""Image-quality metrics and biometric verification analysis.

Pixel metrics follow their classical definitions on the 0..255 scale
(l1, PSNR, and the structural-similarity constants), while total
variation stays on the [0, 1] scale.  The distribution distance is the
Frechet form between Gaussian fits of feature sets, with the matrix
square root taken by eigendecomposition and negative eigenvalues
clamped at zero.

Verification works on cosine similarities of embedding pairs: the
false-non-match rate at threshold t is the fraction of genuine pairs
below t, the false-match rate the fraction of impostor pairs at or
above it, with the equal-error rate linearly interpolated at the
crossing and accuracy reported at the best single threshold.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditioningError,
    DegenerateEmbeddingError,
    DimensionError,
    InsufficientPairsError,
    ScaleError,
)

PSNR_CAP = 99.0
PEAK = 255.0
# BT.601 luma coefficients.
_LUMA = (0.299, 0.587, 0.114)


def _raster(img, what: str) -> np.ndarray:
    from .imaging import Image

    px = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    return px.astype(np.float64, copy=False)


def _pair(gt, out):
    a = _raster(gt, "gt")
    b = _raster(out, "out")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def metric_l1(gt, out) -> float:
    """Mean over pixels of the per-pixel channel-summed absolute error, 0..255."""
    a, b = _pair(gt, out)
    diff = np.abs(a - b) * PEAK
    h, w = diff.shape[:2]
    return float(diff.sum() / (h * w))


def metric_psnr(gt, out) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for exact matches."""
    a, b = _pair(gt, out)
    mse = float(np.mean(((a - b) * PEAK) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(PEAK**2 / mse))


def _luminance(px: np.ndarray) -> np.ndarray:
    if px.ndim == 2:
        return px * PEAK
    if px.ndim == 3 and px.shape[2] == 3:
        return (px @ np.asarray(_LUMA)) * PEAK
    if px.ndim == 3 and px.shape[2] == 1:
        return px[:, :, 0] * PEAK
    raise DimensionError(f"expected HxW or HxWx3 raster, got shape {px.shape}")


def metric_ssim(gt, out) -> float:
    """Mean local structural similarity on 0..255 luminance."""
    import torch

    from .losses import SSIM_WINDOW, _ssim_maps

    a, b = _pair(gt, out)
    ya, yb = _luminance(a), _luminance(b)
    h, w = ya.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ScaleError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    ta = torch.from_numpy(ya)[None, None]
    tb = torch.from_numpy(yb)[None, None]
    c1, c2 = (0.01 * PEAK) ** 2, (0.03 * PEAK) ** 2
    with torch.no_grad():
        lum, cs = _ssim_maps(ta, tb, c1, c2)
        return float((lum * cs).mean())


def metric_tv(out) -> float:
    """Total variation on the [0, 1] scale, normalized per the two diff grids."""
    px = _raster(out, "out")
    if px.ndim == 2:
        px = px[:, :, None]
    h, w = px.shape[:2]
    if h < 2 or w < 2:
        raise DimensionError(f"total variation needs at least 2x2, got {h}x{w}")
    vdiff = np.abs(px[1:, :, :] - px[:-1, :, :]).sum()
    hdiff = np.abs(px[:, 1:, :] - px[:, :-1, :]).sum()
    return float(vdiff / ((h - 1) * w) + hdiff / (h * (w - 1)))


# ---------------------------------------------------------------------------
# Frechet distance between Gaussian feature fits.
# ---------------------------------------------------------------------------

def _sqrtm_spd(m: np.ndarray) -> np.ndarray:
    sym = (m + m.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_from_stats(mu1, sigma1, mu2, sigma2) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)) from explicit moments."""
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    sigma1 = np.asarray(sigma1, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise DimensionError("moment shapes disagree")
    a = _sqrtm_spd(sigma1)
    cross = _sqrtm_spd(a @ sigma2 @ a)
    return float(
        np.sum((mu1 - mu2) ** 2) + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(cross)
    )


def _fit_gaussian(feats: np.ndarray, shrinkage: float):
    mu = feats.mean(axis=0)
    sigma = np.cov(feats, rowvar=False)
    if sigma.ndim == 0:
        sigma = sigma.reshape(1, 1)
    if shrinkage > 0.0:
        d = sigma.shape[0]
        target = (np.trace(sigma) / d) * np.eye(d)
        sigma = (1.0 - shrinkage) * sigma + shrinkage * target
    return mu, sigma


def metric_fid(feats_gt, feats_out, shrinkage: float = 0.0) -> float:
    """Frechet distance between the Gaussian fits of two feature sets.

    Sample covariance needs n >= d + 1 per set for full rank; smaller
    sets must pass shrinkage > 0 (convex pull toward a scaled identity).
    """
    a = np.asarray(feats_gt, dtype=np.float64)
    b = np.asarray(feats_out, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"feature sets must be (n, d) with equal d, got {a.shape} / {b.shape}")
    d = a.shape[1]
    if shrinkage <= 0.0 and (a.shape[0] <= d or b.shape[0] <= d):
        raise ConditioningError(
            f"{min(a.shape[0], b.shape[0])} samples cannot give a full-rank "
            f"{d}x{d} covariance; pass shrinkage > 0"
        )
    mu1, s1 = _fit_gaussian(a, shrinkage)
    mu2, s2 = _fit_gaussian(b, shrinkage)
    return fid_from_stats(mu1, s1, mu2, s2)


# ---------------------------------------------------------------------------
# Verification.
# ---------------------------------------------------------------------------

def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"embedding lengths disagree: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbeddingError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


@dataclass
class PairRecord:
    path_a: str
    path_b: str
    genuine: bool


@dataclass
class PairList:
    records: list

    def __post_init__(self):
        if not self.records:
            raise InsufficientPairsError("pair list is empty")

    @classmethod
    def from_csv(cls, path) -> "PairList":
        records = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "path_a":
                    continue
                records.append(PairRecord(row[0], row[1], row[2].strip().lower() in ("1", "true", "yes")))
        return cls(records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path_a", "path_b", "genuine"])
            for r in self.records:
                writer.writerow([r.path_a, r.path_b, int(r.genuine)])


@dataclass
class VerificationCurves:
    thresholds: np.ndarray
    fnmr: np.ndarray
    fmr: np.ndarray
    eer: float = math.nan
    accuracy: float = math.nan
    best_threshold: float = math.nan

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.fnmr = np.asarray(self.fnmr, dtype=np.float64)
        self.fmr = np.asarray(self.fmr, dtype=np.float64)
        if not (self.thresholds.shape == self.fnmr.shape == self.fmr.shape):
            raise DimensionError("curve arrays must share one length")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "fnmr", "fmr"])
            for t, fn, fm in zip(self.thresholds, self.fnmr, self.fmr):
                writer.writerow([repr(float(t)), repr(float(fn)), repr(float(fm))])


def default_thresholds() -> np.ndarray:
    return np.linspace(-1.0, 1.0, 1001)


def curves_from_similarities(genuine, impostor, thresholds=None) -> VerificationCurves:
    """Error curves from raw similarity scores.

    Raises when one class is missing, attaching the curves computable
    from the class that is present (the error's ``curves`` attribute).
    """
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    gen = np.asarray(sorted(genuine), dtype=np.float64)
    imp = np.asarray(sorted(impostor), dtype=np.float64)

    fnmr = (
        np.searchsorted(gen, thresholds, side="left") / gen.size
        if gen.size
        else np.full(thresholds.shape, math.nan)
    )
    # direct count form (not 1 - below/n): hand counts like 2/3 must hold exactly
    fmr = (
        (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
        if imp.size
        else np.full(thresholds.shape, math.nan)
    )
    if gen.size == 0 or imp.size == 0:
        partial = VerificationCurves(thresholds, fnmr, fmr)
        raise InsufficientPairsError(
            "need at least one genuine and one impostor pair", curves=partial
        )

    eer = _interpolate_eer(thresholds, fnmr, fmr)

    # accuracy: genuine pairs correct at sim >= t, impostors at sim < t
    correct = (gen.size - np.searchsorted(gen, thresholds, side="left")) + np.searchsorted(
        imp, thresholds, side="left"
    )
    best = int(np.argmax(correct))
    accuracy = float(correct[best]) / (gen.size + imp.size)
    return VerificationCurves(
        thresholds, fnmr, fmr, eer=eer, accuracy=accuracy, best_threshold=float(thresholds[best])
    )


def _interpolate_eer(thresholds, fnmr, fmr) -> float:
    diff = fnmr - fmr  # non-decreasing
    idx = int(np.searchsorted(diff > 0, True))
    if idx == 0:
        return float((fnmr[0] + fmr[0]) / 2.0)
    if idx >= diff.size:
        return float((fnmr[-1] + fmr[-1]) / 2.0)
    d0, d1 = diff[idx - 1], diff[idx]
    if d1 == d0:
        frac = 0.0
    else:
        frac = -d0 / (d1 - d0)
    return float(fnmr[idx - 1] + frac * (fnmr[idx] - fnmr[idx - 1]))


def verification_curves(pairs: PairList, embed_fn, thresholds=None) -> VerificationCurves:
    """Curves over a pair list; ``embed_fn(path) -> vector``."""
    genuine, impostor = [], []
    for rec in pairs.records:
        sim = cosine_similarity(embed_fn(rec.path_a), embed_fn(rec.path_b))
        (genuine if rec.genuine else impostor).append(sim)
    return curves_from_similarities(genuine, impostor, thresholds)


def image_embedder(backend):
    """Adapt an encoder backend into a path -> embedding callable."""
    from .imaging import load_image, resize

    def embed(path):
        img = load_image(path)
        res = backend.input_resolution
        px = img.pixels
        if res is not None and px.shape[:2] != (res, res):
            px = resize(px, (res, res))
        return backend.embed(px)

    return embed


# ---------------------------------------------------------------------------
# Reports.
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    l1: float
    psnr: float
    ssim: float
    fid: float
    tv: float
    n_samples: int
    per_sample: list | None = field(default=None)

    def __post_init__(self):
        if not math.isnan(self.l1) and self.l1 < 0:
            raise DimensionError(f"l1 must be >= 0, got {self.l1}")
        if not math.isnan(self.ssim) and not -1.0 <= self.ssim <= 1.0:
            raise DimensionError(f"ssim must be in [-1, 1], got {self.ssim}")
        if not math.isnan(self.fid) and self.fid < -1e-6:
            raise DimensionError(f"fid must be >= -1e-6, got {self.fid}")
        if not math.isnan(self.tv) and self.tv < 0:
            raise DimensionError(f"tv must be >= 0, got {self.tv}")

    def to_json(self, path) -> None:
        payload = {
            "l1": self.l1,
            "psnr": self.psnr,
            "ssim": self.ssim,
            "fid": self.fid,
            "tv": self.tv,
            "n_samples": self.n_samples,
        }
        if self.per_sample is not None:
            payload["per_sample"] = self.per_sample
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "MetricReport":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(
            l1=data["l1"],
            psnr=data["psnr"],
            ssim=data["ssim"],
            fid=data["fid"],
            tv=data["tv"],
            n_samples=data["n_samples"],
            per_sample=data.get("per_sample"),
        )


def evaluate_pairs(image_pairs, fid_features=None, shrinkage: float = 0.0, keep_per_sample: bool = False) -> MetricReport:
    """Aggregate metrics over (gt, out) image pairs.

    ``fid_features`` is an optional pair (feats_gt, feats_out); without
    it the distribution distance is reported as NaN.
    """
    rows = []
    for gt, out in image_pairs:
        rows.append(
            {
                "l1": metric_l1(gt, out),
                "psnr": metric_psnr(gt, out),
                "ssim": metric_ssim(gt, out),
                "tv": metric_tv(out),
            }
        )
    if not rows:
        raise DimensionError("no image pairs to evaluate")
    fid = math.nan
    if fid_features is not None:
        fid = metric_fid(fid_features[0], fid_features[1], shrinkage=shrinkage)
    return MetricReport(
        l1=float(np.mean([r["l1"] for r in rows])),
        psnr=float(np.mean([r["psnr"] for r in rows])),
        ssim=float(np.mean([r["ssim"] for r in rows])),
        fid=fid,
        tv=float(np.mean([r["tv"] for r in rows])),
        n_samples=len(rows),
        per_sample=rows if keep_per_sample else None,
    )
