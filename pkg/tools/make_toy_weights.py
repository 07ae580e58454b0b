#!/usr/bin/env python3
"""Regenerate the committed toy weight archives.

Writes every archive under src/periface/assets/.  Initialization draws
from fixed-seed numpy RandomState streams, so reruns are byte-identical;
the archives are committed and this script only needs to run when an
architecture changes.
"""

import pathlib
import sys

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from periface.encoders import (  # noqa: E402
    ConvFeatureEncoder,
    DenseEncoder,
    init_conv,
    init_dense,
)
from periface.generator import ToyGenerator, init_generator  # noqa: E402
from periface.tensorstore import save_module_state  # noqa: E402

ASSETS = ROOT / "src" / "periface" / "assets"


def dense(name, seed, resolution, out_dim, role):
    module = DenseEncoder(resolution, out_dim)
    init_dense(module, np.random.RandomState(seed))
    meta = {"resolution": resolution, "out_dim": out_dim, "hidden": 64, "role": role}
    save_module_state(ASSETS / name, module, meta=meta)
    print(f"wrote {name} ({role}, {resolution}x{resolution} -> {out_dim})")


def main():
    ASSETS.mkdir(parents=True, exist_ok=True)

    dense("toy_id_encoder.ntw", 7001, 16, 512, "id")
    dense("toy_face_encoder.ntw", 7002, 16, 512, "face")
    dense("toy_at_encoder.ntw", 7003, 32, 2048, "at")
    dense("toy_lnd_encoder.ntw", 7004, 16, 136, "lnd")

    feat = ConvFeatureEncoder()
    init_conv(feat, np.random.RandomState(7005))
    save_module_state(ASSETS / "toy_feat_encoder.ntw", feat, meta={"role": "feat"})
    print("wrote toy_feat_encoder.ntw (feat, conv 3->8->16)")

    gen = ToyGenerator()
    init_generator(gen, np.random.RandomState(7006))
    save_module_state(ASSETS / "toy_generator.ntw", gen, meta={"role": "generator", "resolution": 64})
    print("wrote toy_generator.ntw (generator, 512 -> 64x64x3)")


if __name__ == "__main__":
    main()
