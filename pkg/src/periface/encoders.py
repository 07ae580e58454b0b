"""Identity, attribute, perceptual-feature and landmark encoders.

Two families of backends satisfy the same small interface:

* toy backends: tiny fixed-seed networks whose weights ship with the
  package, so every forward pass and gradient in the test suite is
  reproducible on a laptop with no downloads;
* adapters: torchvision architectures loaded from user-supplied weight
  archives, registered by config key.  When torchvision or the archive
  is missing, construction falls back to the toy backend with a warning
  instead of failing.

A backend exposes ``input_resolution`` (int, or None for fully
convolutional), ``output_dim``, ``trainable``, and one of ``embed_t``
(dense codes), ``features_t`` (per-layer maps) or ``points_t``
(landmark vectors), each operating on a float B x 3 x H x W tensor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np
import torch
from torch import nn

from .errors import DimensionError
from .tensorstore import load_module_state, state_digest

HIDDEN_WIDTH = 64

ID_RESOLUTION = 16
AT_RESOLUTION = 32
FACE_RESOLUTION = 16
LND_RESOLUTION = 16

ID_DIM = 512
AT_DIM = 2048
LATENT_DIM = ID_DIM + AT_DIM
LND_DIM = 136


def _check_vector(values, length, what):
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.shape[0] != length:
        raise DimensionError(f"{what} must have length {length}, got {v.shape[0]}")
    if not np.isfinite(v).all():
        raise DimensionError(f"{what} contains non-finite values")
    return v


@dataclass
class IdentityCode:
    """512-d embedding of the periocular crop."""

    values: np.ndarray

    def __post_init__(self):
        self.values = _check_vector(self.values, ID_DIM, "identity code")


@dataclass
class AttributeCode:
    """2048-d embedding of the masked input image."""

    values: np.ndarray

    def __post_init__(self):
        self.values = _check_vector(self.values, AT_DIM, "attribute code")


@dataclass
class LatentZ:
    """Concatenated identity + attribute code, identity first."""

    values: np.ndarray

    def __post_init__(self):
        self.values = _check_vector(self.values, LATENT_DIM, "latent z")


def concat_latent(id_code: IdentityCode, at_code: AttributeCode) -> LatentZ:
    """[identity || attributes], identity occupying indices 0..511."""
    return LatentZ(np.concatenate([id_code.values, at_code.values]))


def to_batch_t(img) -> torch.Tensor:
    """HxWx3 raster (Image or ndarray) -> 1x3xHxW float32 tensor."""
    from .imaging import Image

    px = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float32)
    if px.ndim != 3 or px.shape[2] != 3:
        raise DimensionError(f"expected HxWx3 raster, got shape {px.shape}")
    t = torch.from_numpy(np.ascontiguousarray(px, dtype=np.float32))
    return t.permute(2, 0, 1).unsqueeze(0)


# ---------------------------------------------------------------------------
# Toy architectures.
# ---------------------------------------------------------------------------

class DenseEncoder(nn.Module):
    """Two-layer tanh MLP over the flattened raster."""

    def __init__(self, resolution: int, out_dim: int, hidden: int = HIDDEN_WIDTH):
        super().__init__()
        self.resolution = resolution
        self.fc1 = nn.Linear(3 * resolution * resolution, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.tanh(self.fc1(x.flatten(1))))


class ConvFeatureEncoder(nn.Module):
    """Small conv net exposing two tanh feature maps for perceptual losses."""

    def __init__(self, widths=(8, 16)):
        super().__init__()
        self.conv1 = nn.Conv2d(3, widths[0], 3, padding=1)
        self.conv2 = nn.Conv2d(widths[0], widths[1], 3, stride=2, padding=1)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        f1 = torch.tanh(self.conv1(x))
        f2 = torch.tanh(self.conv2(f1))
        return [f1, f2]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)[-1]


def init_dense(module: DenseEncoder, rs: np.random.RandomState) -> None:
    """Seeded init; first-layer bias is zero so a zero image embeds to fc2.bias."""
    with torch.no_grad():
        for lin in (module.fc1, module.fc2):
            w = rs.normal(0.0, 1.0 / np.sqrt(lin.in_features), size=tuple(lin.weight.shape))
            lin.weight.copy_(torch.from_numpy(w.astype(np.float32)))
        module.fc1.bias.zero_()
        b2 = rs.normal(0.0, 0.1, size=tuple(module.fc2.bias.shape))
        module.fc2.bias.copy_(torch.from_numpy(b2.astype(np.float32)))


def init_conv(module: ConvFeatureEncoder, rs: np.random.RandomState) -> None:
    with torch.no_grad():
        for conv in (module.conv1, module.conv2):
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            w = rs.normal(0.0, 1.0 / np.sqrt(fan_in), size=tuple(conv.weight.shape))
            conv.weight.copy_(torch.from_numpy(w.astype(np.float32)))
            b = rs.normal(0.0, 0.1, size=tuple(conv.bias.shape))
            conv.bias.copy_(torch.from_numpy(b.astype(np.float32)))


# ---------------------------------------------------------------------------
# Backend wrappers.
# ---------------------------------------------------------------------------

class ToyEncoderBackend:
    """Dense toy backend producing a fixed-length embedding."""

    kind = "toy"

    def __init__(self, module: DenseEncoder, output_dim: int, trainable: bool = False, name: str = "toy"):
        self.module = module
        self.output_dim = output_dim
        self.trainable = trainable
        self.name = name
        module.requires_grad_(trainable)
        module.train(False)

    @property
    def input_resolution(self) -> int:
        return self.module.resolution

    @classmethod
    def from_archive(cls, path, trainable: bool = False, name: str = "toy"):
        tensors_meta = _peek_meta(path)
        module = DenseEncoder(
            int(tensors_meta["resolution"]),
            int(tensors_meta["out_dim"]),
            hidden=int(tensors_meta.get("hidden", HIDDEN_WIDTH)),
        )
        load_module_state(path, module)
        return cls(module, int(tensors_meta["out_dim"]), trainable=trainable, name=name)

    def _check(self, x: torch.Tensor) -> torch.Tensor:
        res = self.input_resolution
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"{self.name}: expected Bx3xHxW, got {tuple(x.shape)}")
        if x.shape[2] != res or x.shape[3] != res:
            raise DimensionError(
                f"{self.name}: expected {res}x{res} input, got {x.shape[2]}x{x.shape[3]}"
            )
        return x.to(next(self.module.parameters()).dtype)

    def embed_t(self, x: torch.Tensor) -> torch.Tensor:
        return self.module(self._check(x))

    def embed(self, img) -> np.ndarray:
        with torch.no_grad():
            return self.embed_t(to_batch_t(img))[0].detach().cpu().numpy().astype(np.float64)

    def digest(self) -> str:
        return state_digest(self.module)

    def parameters(self):
        return self.module.parameters()


class ToyLandmarkEncoderBackend(ToyEncoderBackend):
    """Dense toy backend read as 68 (x, y) points, flat 136-vector."""

    def points_t(self, x: torch.Tensor) -> torch.Tensor:
        return self.embed_t(x)


class ToyFeatureBackend:
    """Convolutional toy backend exposing 2 feature maps."""

    kind = "toy"
    input_resolution = None  # fully convolutional
    trainable = False

    def __init__(self, module: ConvFeatureEncoder, name: str = "toy-features"):
        self.module = module
        self.name = name
        self.n_layers = 2
        module.requires_grad_(False)
        module.train(False)

    @classmethod
    def from_archive(cls, path, name: str = "toy-features"):
        module = ConvFeatureEncoder()
        load_module_state(path, module)
        return cls(module, name=name)

    def features_t(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"{self.name}: expected Bx3xHxW, got {tuple(x.shape)}")
        return self.module.features(x.to(next(self.module.parameters()).dtype))

    def digest(self) -> str:
        return state_digest(self.module)


def _peek_meta(path) -> dict:
    from .tensorstore import load_tensors

    _, meta = load_tensors(path)
    return meta


# ---------------------------------------------------------------------------
# The operations named in the public API.
# ---------------------------------------------------------------------------

def encode_identity(crop, backend) -> IdentityCode:
    """Embed a periocular crop; the backend stays frozen."""
    if backend.output_dim != ID_DIM:
        raise DimensionError(f"identity backend must output {ID_DIM}-d, got {backend.output_dim}")
    return IdentityCode(backend.embed(crop))


def encode_attributes(masked, backend) -> AttributeCode:
    """Embed the masked full image into the attribute code."""
    if backend.output_dim != AT_DIM:
        raise DimensionError(f"attribute backend must output {AT_DIM}-d, got {backend.output_dim}")
    return AttributeCode(backend.embed(masked))


# ---------------------------------------------------------------------------
# Asset loading and the adapter registry.
# ---------------------------------------------------------------------------

ASSET_FILES = {
    "id": "toy_id_encoder.ntw",
    "face": "toy_face_encoder.ntw",
    "at": "toy_at_encoder.ntw",
    "feat": "toy_feat_encoder.ntw",
    "lnd": "toy_lnd_encoder.ntw",
    "generator": "toy_generator.ntw",
}


def asset_path(name: str):
    return resources.files("periface").joinpath("assets", ASSET_FILES[name])


def load_toy_encoders() -> dict:
    """All frozen toy encoders plus a trainable attribute encoder.

    The attribute encoder starts from its committed pretrained-style
    init; callers flip nothing else to trainable.
    """
    return {
        "id": ToyEncoderBackend.from_archive(asset_path("id"), name="toy-id"),
        "face": ToyEncoderBackend.from_archive(asset_path("face"), name="toy-face"),
        "at": ToyEncoderBackend.from_archive(asset_path("at"), trainable=True, name="toy-at"),
        "feat": ToyFeatureBackend.from_archive(asset_path("feat")),
        "lnd": ToyLandmarkEncoderBackend.from_archive(asset_path("lnd"), name="toy-lnd"),
    }


class _TorchvisionAdapter:
    """Shared plumbing: build a torchvision trunk, load weights from an archive."""

    kind = "adapter"
    trainable = False

    # ImageNet statistics; adapter inputs are [0,1] RGB.
    _MEAN = (0.485, 0.456, 0.406)
    _STD = (0.229, 0.224, 0.225)

    def _normalize(self, x: torch.Tensor) -> torch.Tensor:
        mean = torch.tensor(self._MEAN, dtype=x.dtype).view(1, 3, 1, 1)
        std = torch.tensor(self._STD, dtype=x.dtype).view(1, 3, 1, 1)
        return (x - mean) / std

    def digest(self) -> str:
        return state_digest(self.module)


class VGGFeatureAdapter(_TorchvisionAdapter):
    """VGG-19 trunk exposing the first activation of each conv block."""

    input_resolution = None
    _TAPS = (1, 6, 11, 20, 29)

    def __init__(self, weights_path):
        from torchvision.models import vgg19

        self.module = vgg19(weights=None).features.eval()
        load_module_state(weights_path, self.module)
        self.module.requires_grad_(False)
        self.n_layers = len(self._TAPS)
        self.name = "vgg19-features"

    def features_t(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = self._normalize(x)
        out = []
        for i, layer in enumerate(self.module):
            h = layer(h)
            if i in self._TAPS:
                out.append(h)
        return out


class InceptionAttributeAdapter(_TorchvisionAdapter):
    """InceptionV3 pooled features as the 2048-d attribute code."""

    input_resolution = 299
    output_dim = AT_DIM

    def __init__(self, weights_path, trainable: bool = True):
        from torchvision.models import inception_v3

        net = inception_v3(weights=None, aux_logits=True, init_weights=False)
        net.fc = nn.Identity()
        load_module_state(weights_path, net)
        net.eval()
        self.module = net
        self.trainable = trainable
        net.requires_grad_(trainable)
        self.name = "inception-at"

    def embed_t(self, x: torch.Tensor) -> torch.Tensor:
        return self.module(self._normalize(x))

    def embed(self, img) -> np.ndarray:
        with torch.no_grad():
            return self.embed_t(to_batch_t(img))[0].cpu().numpy().astype(np.float64)

    def parameters(self):
        return self.module.parameters()


class ResNetIdentityAdapter(_TorchvisionAdapter):
    """ResNet-50 trunk with a 512-d head, stand-in for a margin-softmax face net."""

    input_resolution = 112
    output_dim = ID_DIM

    def __init__(self, weights_path):
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        net.fc = nn.Linear(net.fc.in_features, ID_DIM)
        load_module_state(weights_path, net)
        net.eval()
        net.requires_grad_(False)
        self.module = net
        self.name = "resnet-id"

    def embed_t(self, x: torch.Tensor) -> torch.Tensor:
        return self.module(self._normalize(x))

    def embed(self, img) -> np.ndarray:
        with torch.no_grad():
            return self.embed_t(to_batch_t(img))[0].cpu().numpy().astype(np.float64)


class ResNetLandmarkAdapter(_TorchvisionAdapter):
    """ResNet-18 trunk regressing 68 (x, y) coordinates."""

    input_resolution = 112
    output_dim = LND_DIM

    def __init__(self, weights_path):
        from torchvision.models import resnet18

        net = resnet18(weights=None)
        net.fc = nn.Linear(net.fc.in_features, LND_DIM)
        load_module_state(weights_path, net)
        net.eval()
        net.requires_grad_(False)
        self.module = net
        self.name = "resnet-lnd"

    def points_t(self, x: torch.Tensor) -> torch.Tensor:
        return self.module(self._normalize(x))


_ADAPTERS = {
    "id": ResNetIdentityAdapter,
    "face": ResNetIdentityAdapter,
    "at": InceptionAttributeAdapter,
    "feat": VGGFeatureAdapter,
    "lnd": ResNetLandmarkAdapter,
}


def get_encoder_backend(role: str, weights_path=None, **kwargs):
    """Backend for a role in {id, face, at, feat, lnd}.

    With a weights archive, builds the torchvision adapter; otherwise
    (or when torchvision / the archive is unavailable) warns and returns
    the committed toy backend for that role.
    """
    if role not in _ADAPTERS:
        raise DimensionError(f"unknown encoder role {role!r}")
    if weights_path is not None:
        try:
            return _ADAPTERS[role](weights_path, **kwargs)
        except Exception as exc:  # noqa: BLE001 - fallback is the contract
            warnings.warn(
                f"adapter for role {role!r} unavailable ({exc}); using toy backend",
                RuntimeWarning,
                stacklevel=2,
            )
    return load_toy_encoders()[role]
