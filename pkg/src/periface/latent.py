"""Mapping network into the generator's style space, and the latent critic.

The mapper turns the 2560-d concatenated code into a 512-d style vector
through n_layers fully connected layers (n_layers in {2, 4, 8}) with
LeakyReLU(0.2) between them and a linear last layer.  The critic scores
512-d style vectors with a raw logit; sigmoids live inside the loss
functions as log-sigmoid forms, which keeps them finite for any logit.

The critic objective is the non-saturating GAN loss with an R1 penalty
on real samples.  All three terms are individually nonnegative, which
the term-level helper exposes for property tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoders import LATENT_DIM
from .errors import DimensionError, EmptyBatchError

W_DIM = 512
MAPPER_DEPTHS = (2, 4, 8)
LEAK = 0.2
DEFAULT_R1_GAMMA = 10.0


@dataclass
class StyleW:
    """512-d style-space code."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.shape[0] != W_DIM:
            raise DimensionError(f"style code must have length {W_DIM}, got {v.shape[0]}")
        if not np.isfinite(v).all():
            raise DimensionError("style code contains non-finite values")
        self.values = v


class MapperNetwork(nn.Module):
    """n_layers-deep MLP from the concatenated code to style space."""

    def __init__(self, n_layers: int = 4, hidden: int = 512):
        super().__init__()
        if n_layers not in MAPPER_DEPTHS:
            raise DimensionError(f"mapper depth must be one of {MAPPER_DEPTHS}, got {n_layers}")
        self.n_layers = n_layers
        dims = [LATENT_DIM] + [hidden] * (n_layers - 1) + [W_DIM]
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(n_layers)
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = z
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i + 1 < self.n_layers:
                h = F.leaky_relu(h, LEAK)
        return h


class LatentDiscriminator(nn.Module):
    """Four fully connected layers from a style code to a single raw logit."""

    def __init__(self, hidden: int = 512):
        super().__init__()
        dims = [W_DIM, hidden, hidden, hidden, 1]
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(4)
        )

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        h = w
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < 3:
                h = F.leaky_relu(h, LEAK)
        return h.squeeze(-1)


def _init_mlp(module: nn.Module, rs: np.random.RandomState, bias_scale: float = 0.02) -> None:
    with torch.no_grad():
        for layer in module.layers:
            w = rs.normal(0.0, 1.0 / np.sqrt(layer.in_features), size=tuple(layer.weight.shape))
            layer.weight.copy_(torch.from_numpy(w.astype(np.float32)))
            b = rs.normal(0.0, bias_scale, size=tuple(layer.bias.shape))
            layer.bias.copy_(torch.from_numpy(b.astype(np.float32)))


def build_mapper(n_layers: int = 4, seed: int = 0) -> MapperNetwork:
    mapper = MapperNetwork(n_layers)
    _init_mlp(mapper, np.random.RandomState([seed, 101]))
    return mapper


def build_discriminator(seed: int = 0) -> LatentDiscriminator:
    disc = LatentDiscriminator()
    _init_mlp(disc, np.random.RandomState([seed, 202]))
    return disc


def _as_batch(w, dim: int, what: str) -> torch.Tensor:
    """Coerce StyleW / array / tensor inputs to a (B, dim) float tensor."""
    if isinstance(w, StyleW):
        w = w.values
    elif isinstance(w, (list, tuple)) and w and isinstance(w[0], StyleW):
        w = np.stack([s.values for s in w])
    if isinstance(w, np.ndarray):
        w = torch.from_numpy(np.ascontiguousarray(w, dtype=np.float32))
    if not torch.is_tensor(w):
        w = torch.as_tensor(w, dtype=torch.float32)
    if w.ndim == 1:
        w = w.unsqueeze(0)
    if w.ndim != 2 or w.shape[1] != dim:
        raise DimensionError(f"{what} must be (B, {dim}), got {tuple(w.shape)}")
    if w.shape[0] == 0:
        raise EmptyBatchError(f"{what} batch is empty")
    return w


def map_to_w_t(z: torch.Tensor, mapper: MapperNetwork) -> torch.Tensor:
    """Differentiable batch mapping (B, 2560) -> (B, 512)."""
    z = _as_batch(z, LATENT_DIM, "latent z")
    return mapper(z.to(next(mapper.parameters()).dtype))


def map_to_w(z, mapper: MapperNetwork) -> StyleW:
    from .encoders import LatentZ

    if isinstance(z, LatentZ):
        z = z.values
    with torch.no_grad():
        out = map_to_w_t(torch.as_tensor(np.asarray(z, dtype=np.float32)), mapper)
    return StyleW(out[0].cpu().numpy().astype(np.float64))


def discriminate_w_t(w: torch.Tensor, disc: LatentDiscriminator) -> torch.Tensor:
    w = _as_batch(w, W_DIM, "style code")
    return disc(w.to(next(disc.parameters()).dtype))


def discriminate_w(w, disc: LatentDiscriminator) -> float:
    with torch.no_grad():
        return float(discriminate_w_t(w, disc)[0])


def adv_loss_d_terms(real_w, fake_w, disc: LatentDiscriminator, gamma: float = DEFAULT_R1_GAMMA):
    """(real term, fake term, R1 penalty) of the critic objective.

    real term  = E[-log sigmoid(D(real))]  = E[softplus(-D(real))]
    fake term  = E[-log(1 - sigmoid(D(fake)))] = E[softplus(D(fake))]
    R1 penalty = (gamma/2) E[|grad_w D(real)|^2]

    Each term is nonnegative for finite logits and gamma >= 0.  The R1
    gradient graph is retained, so the result can be backpropagated into
    the critic parameters.
    """
    real = _as_batch(real_w, W_DIM, "real style code").to(next(disc.parameters()).dtype)
    fake = _as_batch(fake_w, W_DIM, "fake style code")

    real = real.detach().requires_grad_(True)
    logits_real = disc(real)
    term_real = F.softplus(-logits_real).mean()
    term_fake = F.softplus(discriminate_w_t(fake, disc)).mean()

    if gamma != 0.0:
        (grad,) = torch.autograd.grad(
            logits_real.sum(), real, create_graph=True
        )
        penalty = 0.5 * gamma * grad.pow(2).sum(dim=1).mean()
    else:
        penalty = torch.zeros((), dtype=term_real.dtype)
    return term_real, term_fake, penalty


def adv_loss_d(real_w, fake_w, disc: LatentDiscriminator, gamma: float = DEFAULT_R1_GAMMA) -> torch.Tensor:
    term_real, term_fake, penalty = adv_loss_d_terms(real_w, fake_w, disc, gamma)
    return term_real + term_fake + penalty


def adv_loss_g(fake_w, disc: LatentDiscriminator) -> torch.Tensor:
    """Non-saturating generator-side term E[-log sigmoid(D(fake))]."""
    logits = discriminate_w_t(fake_w, disc)
    return F.softplus(-logits).mean()
