import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from periface import encoders, generator, imaging, pipeline
from periface.config import RunConfig


@pytest.fixture(scope="session")
def toy_backends():
    backends = encoders.load_toy_encoders()
    backends["generator"] = generator.ToyGeneratorBackend.from_archive()
    return backends


@pytest.fixture(scope="session")
def toy_generator(toy_backends):
    return toy_backends["generator"]


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory, toy_generator):
    root = tmp_path_factory.mktemp("synth")
    manifest = pipeline.synthesize_stylegandb(12, 42, backend=toy_generator, out_dir=root)
    return root, manifest


@pytest.fixture()
def rng():
    return np.random.RandomState(1234)


@pytest.fixture()
def small_image(rng):
    return imaging.Image(rng.uniform(size=(16, 16, 3)).astype(np.float32))


def make_config(data_dir, out_dir, **kw):
    base = dict(
        phase="stylegandb",
        batch_size=4,
        steps=10,
        lr=1e-3,
        seed=0,
        mapper_layers=2,
        checkpoint_every=500,
        data_dir=str(data_dir),
        out_dir=str(out_dir),
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, synth_dataset, toy_generator):
    """A short phase-1 run with one mid-run checkpoint, shared across tests.

    Training updates the attribute encoder in place, so this uses its own
    encoder set instead of the shared read-only one.
    """
    data_dir, manifest = synth_dataset
    out_dir = tmp_path_factory.mktemp("run")
    cfg = make_config(data_dir, out_dir, steps=10, checkpoint_every=5)
    checkpoints = []
    rows = []
    for ckpt in pipeline.train(
        cfg, manifest, out_dir,
        backends=encoders.load_toy_encoders(),
        generator_backend=toy_generator,
    ):
        checkpoints.append(ckpt)
        rows.extend(ckpt.losses)
    return cfg, out_dir, checkpoints, rows
