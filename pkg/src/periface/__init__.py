"""Periocular-conditioned face synthesis and inpainting toolkit."""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "cli",
    "config",
    "encoders",
    "errors",
    "generator",
    "imaging",
    "inversion",
    "latent",
    "losses",
    "metrics",
    "pipeline",
    "tensorstore",
)


def __getattr__(name):
    # Lazy submodule access keeps `import periface` cheap; the heavy
    # torch-backed modules load on first touch.
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
