"""Style-code-to-image generators.

The toy backend is a committed fixed-seed network: a linear layer lifts
the 512-d style code to an 8x8x64 grid, then two nearest-upsample +
conv stages produce a 64x64 RGB image through a sigmoid.  It also owns
the noise-to-style path used to draw "real" style codes for the latent
critic and for dataset synthesis.

A TorchScript adapter slot accepts an exported pretrained generator;
the adapter clamps its output to [0, 1] instead of assuming a bounded
head.  Generator parameters are frozen in every backend: inversion and
training differentiate through them but never update them.
"""

from __future__ import annotations

import warnings

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionError
from .imaging import Image
from .latent import W_DIM, StyleW, _as_batch
from .tensorstore import load_module_state, state_digest

TOY_RESOLUTION = (64, 64)
# Full-rank noise: the latent critic's "real" style codes must span all
# of style space, or it separates real from mapped codes by rank alone.
TOY_NOISE_DIM = 512
TOY_GRID = (64, 8, 8)


class ToyGenerator(nn.Module):
    """Three-layer synthesis net plus an affine noise-to-style map."""

    def __init__(self, noise_dim: int = TOY_NOISE_DIM):
        super().__init__()
        c, h, w = TOY_GRID
        self.noise_dim = noise_dim
        self.noise_map = nn.Linear(noise_dim, W_DIM)
        self.fc = nn.Linear(W_DIM, c * h * w)
        self.conv1 = nn.Conv2d(c, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 3, 3, padding=1)

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        c, gh, gw = TOY_GRID
        h = self.fc(w).view(w.shape[0], c, gh, gw)
        h = F.interpolate(h, scale_factor=4, mode="nearest")
        h = torch.tanh(self.conv1(h))
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        return torch.sigmoid(self.conv2(h))

    def style_from_noise(self, noise: torch.Tensor) -> torch.Tensor:
        return self.noise_map(noise)


def init_generator(module: ToyGenerator, rs: np.random.RandomState) -> None:
    with torch.no_grad():
        for lin in (module.noise_map, module.fc):
            w = rs.normal(0.0, 1.0 / np.sqrt(lin.in_features), size=tuple(lin.weight.shape))
            lin.weight.copy_(torch.from_numpy(w.astype(np.float32)))
            b = rs.normal(0.0, 0.05, size=tuple(lin.bias.shape))
            lin.bias.copy_(torch.from_numpy(b.astype(np.float32)))
        for conv in (module.conv1, module.conv2):
            fan_in = conv.in_channels * 9
            w = rs.normal(0.0, 1.0 / np.sqrt(fan_in), size=tuple(conv.weight.shape))
            conv.weight.copy_(torch.from_numpy(w.astype(np.float32)))
            b = rs.normal(0.0, 0.05, size=tuple(conv.bias.shape))
            conv.bias.copy_(torch.from_numpy(b.astype(np.float32)))


class ToyGeneratorBackend:
    """Frozen committed generator at 64x64."""

    kind = "toy"
    latent_dim = W_DIM
    resolution = TOY_RESOLUTION

    def __init__(self, module: ToyGenerator):
        self.module = module
        self.noise_dim = module.noise_dim
        module.requires_grad_(False)
        module.train(False)

    @classmethod
    def from_archive(cls, path=None):
        if path is None:
            from .encoders import asset_path

            path = asset_path("generator")
        module = ToyGenerator()
        load_module_state(path, module)
        return cls(module)

    def generate_t(self, w: torch.Tensor) -> torch.Tensor:
        w = _as_batch(w, W_DIM, "style code")
        return self.module(w.to(next(self.module.parameters()).dtype))

    def noise_to_w_t(self, noise: torch.Tensor) -> torch.Tensor:
        noise = _as_batch(noise, self.noise_dim, "generator noise")
        return self.module.style_from_noise(
            noise.to(next(self.module.parameters()).dtype)
        )

    def digest(self) -> str:
        return state_digest(self.module)


class ScriptedGeneratorBackend:
    """TorchScript-exported pretrained generator (e.g. a 256x256 style net)."""

    kind = "scripted"
    latent_dim = W_DIM

    def __init__(self, path, resolution=(256, 256), noise_dim=512):
        self.module = torch.jit.load(str(path), map_location="cpu")
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.resolution = tuple(resolution)
        self.noise_dim = noise_dim

    def generate_t(self, w: torch.Tensor) -> torch.Tensor:
        w = _as_batch(w, W_DIM, "style code")
        return self.module(w).clamp(0.0, 1.0)

    def noise_to_w_t(self, noise: torch.Tensor) -> torch.Tensor:
        fn = getattr(self.module, "style_from_noise", None)
        if fn is None:
            raise DimensionError("scripted generator exports no noise-to-style path")
        return fn(_as_batch(noise, self.noise_dim, "generator noise"))

    def digest(self) -> str:
        return state_digest(self.module)


def get_generator_backend(weights_path=None, **kwargs):
    """Scripted adapter when an export is supplied and loads; toy otherwise."""
    if weights_path is not None:
        try:
            return ScriptedGeneratorBackend(weights_path, **kwargs)
        except Exception as exc:  # noqa: BLE001 - fallback is the contract
            warnings.warn(
                f"scripted generator unavailable ({exc}); using toy backend",
                RuntimeWarning,
                stacklevel=2,
            )
    return ToyGeneratorBackend.from_archive()


def generate(w, backend) -> Image:
    """Render one style code to an Image; backend parameters untouched."""
    if isinstance(w, StyleW):
        w = w.values
    w = np.asarray(w, dtype=np.float32).reshape(-1)
    if w.shape[0] != W_DIM:
        raise DimensionError(f"style code must have length {W_DIM}, got {w.shape[0]}")
    with torch.no_grad():
        img = backend.generate_t(torch.from_numpy(w))
    px = img[0].permute(1, 2, 0).cpu().numpy().astype(np.float32)
    return Image(np.clip(px, 0.0, 1.0))


def sample_prior(count: int, seed: int, backend) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw standard-Gaussian noise, map to style codes, render images.

    Returns (noise (count, noise_dim), styles (count, 512), images
    (count, H, W, 3)) as float32 arrays, deterministic in the seed.
    Persistence is the dataset-synthesis step's job.
    """
    if count < 1:
        raise DimensionError(f"count must be >= 1, got {count}")
    rs = np.random.RandomState(seed)
    noise = rs.standard_normal(size=(count, backend.noise_dim)).astype(np.float32)
    # Render in fixed-size chunks: upsample intermediates for a 1e4-draw
    # batch would need gigabytes. Chunking is part of the op's definition,
    # so results for a given seed do not depend on the caller's count.
    chunk = 128
    styles = np.empty((count, W_DIM), dtype=np.float32)
    h, w_px = backend.resolution
    images = np.empty((count, h, w_px, 3), dtype=np.float32)
    with torch.no_grad():
        for lo in range(0, count, chunk):
            hi = min(lo + chunk, count)
            s = backend.noise_to_w_t(torch.from_numpy(noise[lo:hi]))
            styles[lo:hi] = s.cpu().numpy()
            images[lo:hi] = backend.generate_t(s).permute(0, 2, 3, 1).cpu().numpy()
    return noise, styles, images
