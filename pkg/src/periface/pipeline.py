"""Dataset synthesis, two-phase training, checkpointing, end-to-end inpainting.

Training updates exactly three parameter groups: the attribute encoder,
the mapping network, and the latent critic (the critic only in the
synthetic-data phase; the real-image phase freezes it and logs its
generator-side term as a diagnostic).  The identity encoder and the
generator are loaded frozen and their digests must not move across a
run.

Determinism contract: batch indices at step k come from a RandomState
seeded with (seed, k), so a resumed run draws exactly the batches an
uninterrupted run would have drawn; together with restored optimizer
moments this makes resume losses bit-for-bit reproducible.  Checkpoint
and dataset archives are written through the sorted named-tensor
container, so identical state produces identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import pathlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .config import RunConfig
from .encoders import (
    AT_RESOLUTION,
    DenseEncoder,
    ID_RESOLUTION,
    load_toy_encoders,
)
from .errors import (
    ConfigError,
    EmptyDatasetError,
    InvalidLossError,
    IOFailureError,
)
from .generator import ToyGeneratorBackend, generate, sample_prior
from .imaging import (
    Image,
    MarginConfig,
    StubLandmarkBackend,
    StubPoseBackend,
    apply_mask,
    build_periocular_mask,
    crop_periocular,
    filter_sample,
    load_image,
    load_mask,
    resize,
    save_image,
    save_mask,
)
from .inversion import InversionConfig, InversionResult, evaluate_objective, invert
from .latent import (
    LatentDiscriminator,
    MapperNetwork,
    StyleW,
    adv_loss_d,
    adv_loss_g,
    build_discriminator,
    build_mapper,
)
from .losses import (
    loss_identity,
    loss_landmark,
    loss_perceptual,
    loss_reconstruction,
    loss_style,
    loss_total,
)
from .tensorstore import load_tensors, save_tensors

LOG_COLUMNS = ("step", "l_perc", "l_style", "l_id", "l_lnd", "l_rec", "l_adv_g", "l_total")
TRAIN_FRACTION = 0.9


# ---------------------------------------------------------------------------
# Manifests.
# ---------------------------------------------------------------------------

@dataclass
class ManifestRecord:
    gt: str
    mask: str
    crop: str
    w: str | None = None
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "val"):
            raise ConfigError(f"split must be train or val, got {self.split!r}")


@dataclass
class DatasetManifest:
    root: str
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def resolve(self, rel: str) -> str:
        return os.path.join(self.root, rel)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def save(self) -> str:
        payload = {
            "meta": self.meta,
            "records": [
                {"gt": r.gt, "mask": r.mask, "crop": r.crop, "w": r.w, "split": r.split}
                for r in self.records
            ],
        }
        path = os.path.join(self.root, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = str(path)
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        records = [ManifestRecord(**rec) for rec in payload["records"]]
        return cls(root=os.path.dirname(path) or ".", records=records, meta=payload.get("meta", {}))

    def validate_files(self) -> None:
        for r in self.records:
            for rel in (r.gt, r.mask, r.crop, r.w):
                if rel is not None and not os.path.exists(self.resolve(rel)):
                    raise IOFailureError(f"manifest references missing file {rel}")


def _assign_splits(count: int, seed: int) -> list:
    order = np.random.RandomState([seed, 9]).permutation(count)
    n_train = int(round(count * TRAIN_FRACTION))
    train_idx = set(order[:n_train].tolist())
    return ["train" if i in train_idx else "val" for i in range(count)]


# ---------------------------------------------------------------------------
# Dataset synthesis from the frozen generator.
# ---------------------------------------------------------------------------

def synthesize_stylegandb(count: int, seed: int, backend=None, out_dir=".", landmark_backend=None) -> DatasetManifest:
    """Render a synthetic dataset with known style codes.

    Per sample: ground-truth PNG, periocular mask, identity crop, and
    the true style code; a manifest records everything with a 90/10
    train/val split.  Images are rendered one at a time so regenerating
    any stored code reproduces its stored image byte for byte.
    """
    backend = backend or ToyGeneratorBackend.from_archive()
    landmark_backend = landmark_backend or StubLandmarkBackend()
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    noise, styles, _ = sample_prior(count, seed, backend)
    written = []
    records = []
    splits = _assign_splits(count, seed)
    try:
        for i in range(count):
            img = generate(styles[i], backend)
            lnd = landmark_backend.detect(img)
            mask = build_periocular_mask(lnd, img.dims)
            crop = crop_periocular(
                img, lnd, MarginConfig(crop_size=(ID_RESOLUTION, ID_RESOLUTION))
            )

            names = {
                "gt": f"gt_{i:05d}.png",
                "mask": f"mask_{i:05d}.png",
                "crop": f"crop_{i:05d}.png",
                "w": f"w_{i:05d}.ntw",
            }
            save_image(out / names["gt"], img)
            written.append(out / names["gt"])
            save_mask(out / names["mask"], mask)
            written.append(out / names["mask"])
            save_image(out / names["crop"], crop)
            written.append(out / names["crop"])
            save_tensors(out / names["w"], {"w": styles[i]}, meta={"index": i})
            written.append(out / names["w"])
            records.append(ManifestRecord(split=splits[i], **names))

        save_tensors(out / "prior.ntw", {"noise": noise, "styles": styles}, meta={"seed": seed})
        written.append(out / "prior.ntw")
        manifest = DatasetManifest(
            root=str(out),
            records=records,
            meta={"kind": "synthetic", "count": count, "seed": seed},
        )
        manifest.save()
        return manifest
    except (OSError, IOFailureError) as exc:
        for path in written:
            try:
                os.unlink(path)
            except OSError:
                pass
        raise IOFailureError(f"dataset synthesis failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Real-image ingestion.
# ---------------------------------------------------------------------------

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def ingest_real_dataset(
    image_dir,
    out_dir,
    landmark_backend=None,
    pose_backend=None,
    resolution=(64, 64),
    seed: int = 0,
) -> DatasetManifest:
    """Resize, landmark, filter and mask a directory of face images.

    Rejections (pose beyond the frontal limit, missing landmarks,
    unreadable files) go to ``rejections.csv`` next to the outputs.
    Real images carry no style codes.
    """
    landmark_backend = landmark_backend or StubLandmarkBackend()
    pose_backend = pose_backend or StubPoseBackend()
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    paths = sorted(
        p for p in pathlib.Path(image_dir).iterdir()
        if p.suffix.lower() in _IMAGE_EXTS
    )
    rejections = []
    accepted = []
    for p in paths:
        try:
            img = load_image(p)
        except Exception:  # noqa: BLE001 - unreadable files are skip-with-log
            rejections.append((p.name, "unreadable"))
            continue
        px = resize(img.pixels, resolution)
        img = Image(px, provenance=str(p))
        try:
            lnd = landmark_backend.detect(img)
        except Exception:  # noqa: BLE001
            lnd = None
        pose = pose_backend.estimate(img)
        if not filter_sample(pose, lnd):
            reason = "no-landmarks" if lnd is None else "pose-beyond-limit"
            rejections.append((p.name, reason))
            continue
        accepted.append((p, img, lnd))

    with open(out / "rejections.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "reason"])
        writer.writerows(rejections)

    if not accepted:
        raise EmptyDatasetError(f"no usable images in {image_dir}")

    records = []
    splits = _assign_splits(len(accepted), seed)
    for i, (src, img, lnd) in enumerate(accepted):
        mask = build_periocular_mask(lnd, img.dims)
        crop = crop_periocular(img, lnd, MarginConfig(crop_size=(ID_RESOLUTION, ID_RESOLUTION)))
        names = {
            "gt": f"gt_{i:05d}.png",
            "mask": f"mask_{i:05d}.png",
            "crop": f"crop_{i:05d}.png",
        }
        save_image(out / names["gt"], img)
        save_mask(out / names["mask"], mask)
        save_image(out / names["crop"], crop)
        records.append(ManifestRecord(split=splits[i], **names))

    manifest = DatasetManifest(
        root=str(out),
        records=records,
        meta={"kind": "real", "count": len(records), "seed": seed, "rejected": len(rejections)},
    )
    manifest.save()
    return manifest


# ---------------------------------------------------------------------------
# Checkpoints.
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    path: str
    step: int
    config_hash: str
    val_loss: float = math.nan
    losses: list = field(default_factory=list)


def _optimizer_payload(opt, prefix, tensors, meta) -> None:
    sd = opt.state_dict()
    meta[f"{prefix}.param_groups"] = sd["param_groups"]
    scalars = {}
    for idx, state in sd["state"].items():
        for key, value in state.items():
            if torch.is_tensor(value):
                tensors[f"{prefix}.{idx}.{key}"] = value.detach().cpu().numpy()
            else:
                scalars[f"{idx}.{key}"] = value
    meta[f"{prefix}.scalars"] = scalars


def _optimizer_restore(opt, prefix, tensors, meta) -> None:
    groups = meta.get(f"{prefix}.param_groups")
    if groups is None:
        return
    state: dict = {}
    for name, arr in tensors.items():
        if not name.startswith(f"{prefix}."):
            continue
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = torch.from_numpy(arr)
    for flat_key, value in meta.get(f"{prefix}.scalars", {}).items():
        idx, key = flat_key.split(".", 1)
        state.setdefault(int(idx), {})[key] = value
    opt.load_state_dict({"state": state, "param_groups": groups})


def save_checkpoint(path, mapper, at_module, disc, opt_g, opt_d, step, config: RunConfig, val_loss=math.nan) -> None:
    tensors = {}
    for prefix, module in (("mapper", mapper), ("at", at_module), ("disc", disc)):
        for key, value in module.state_dict().items():
            tensors[f"{prefix}.{key}"] = value.detach().cpu().numpy()
    meta = {
        "step": int(step),
        "config_hash": config.hash(),
        "phase": config.phase,
        "mapper.n_layers": config.mapper_layers,
        "val_loss": float(val_loss),
    }
    _optimizer_payload(opt_g, "optg", tensors, meta)
    if opt_d is not None:
        _optimizer_payload(opt_d, "optd", tensors, meta)
    save_tensors(path, tensors, meta=meta)


def load_checkpoint_modules(path):
    """(mapper, at_module, disc, tensors, meta) with module states restored."""
    tensors, meta = load_tensors(path)
    mapper = MapperNetwork(int(meta["mapper.n_layers"]))
    at_module = DenseEncoder(AT_RESOLUTION, 2048)
    disc = LatentDiscriminator()
    for prefix, module in (("mapper", mapper), ("at", at_module), ("disc", disc)):
        state = {
            name.split(".", 1)[1]: torch.from_numpy(arr)
            for name, arr in tensors.items()
            if name.startswith(f"{prefix}.") and not name.startswith(("optg.", "optd."))
        }
        module.load_state_dict(state)
    return mapper, at_module, disc, tensors, meta


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------

def _load_split(manifest: DatasetManifest, name: str, need_w: bool):
    records = manifest.split(name)
    if not records:
        return None
    gts, masks, crops, ws = [], [], [], []
    for r in records:
        gts.append(load_image(manifest.resolve(r.gt)).pixels)
        masks.append(load_mask(manifest.resolve(r.mask)).bits)
        crops.append(load_image(manifest.resolve(r.crop)).pixels)
        if need_w:
            if r.w is None:
                raise ConfigError(
                    "synthetic-phase training needs stored style codes; "
                    "this manifest has none"
                )
            ws.append(load_tensors(manifest.resolve(r.w))[0]["w"])
    bundle = {
        "gt": torch.from_numpy(np.stack(gts)).permute(0, 3, 1, 2),
        "mask": torch.from_numpy(np.stack(masks).astype(np.float32)).permute(0, 3, 1, 2),
        "crop": torch.from_numpy(np.stack(crops)).permute(0, 3, 1, 2),
    }
    if need_w:
        bundle["w"] = torch.from_numpy(np.stack(ws))
    return bundle


def _forward_losses(batch, mapper, backends, gen, weights):
    masked = batch["gt"] * batch["mask"]
    at_in = F.interpolate(masked, size=(AT_RESOLUTION, AT_RESOLUTION), mode="bilinear", align_corners=False)
    with torch.no_grad():
        e_id = backends["id"].embed_t(batch["crop"])
    e_at = backends["at"].embed_t(at_in)
    z = torch.cat([e_id, e_at], dim=1)
    w_fake = mapper(z)
    out = gen.generate_t(w_fake)

    perc = loss_perceptual(batch["gt"], out, backends["feat"])
    style = loss_style(batch["gt"], out, backends["feat"])
    ident = loss_identity(batch["gt"], out, backends["face"])
    lnd = loss_landmark(batch["gt"], out, backends["lnd"])
    rec = loss_reconstruction(batch["gt"], out, weights.alpha)
    return w_fake, (perc, style, ident, lnd, rec)


def train(config: RunConfig, manifest: DatasetManifest, out_dir, resume=None, backends=None, generator_backend=None):
    """Generator of checkpoints over a seeded training run.

    ``resume`` is a checkpoint path; its config hash must match.
    Yields a Checkpoint every ``config.checkpoint_every`` steps and at
    the final step, carrying the per-step loss rows since the previous
    yield.
    """
    manifest.validate_files()
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    backends = backends or load_toy_encoders()
    gen = generator_backend or ToyGeneratorBackend.from_archive()
    phase1 = config.phase == "stylegandb"

    mapper = build_mapper(config.mapper_layers, seed=config.seed)
    disc = build_discriminator(seed=config.seed)
    at_module = backends["at"].module

    trainable = list(mapper.parameters()) + list(at_module.parameters())
    for p in trainable:
        p.requires_grad_(True)
    opt_g = torch.optim.Adam(trainable, lr=config.lr, betas=(config.beta1, config.beta2))
    if phase1:
        disc.requires_grad_(True)
        opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    else:
        disc.requires_grad_(False)
        opt_d = None

    start_step = 0
    if resume is not None:
        r_mapper, r_at, r_disc, tensors, meta = load_checkpoint_modules(resume)
        if meta["config_hash"] != config.hash():
            raise ConfigError("checkpoint was written under a different config")
        mapper.load_state_dict(r_mapper.state_dict())
        at_module.load_state_dict(r_at.state_dict())
        disc.load_state_dict(r_disc.state_dict())
        _optimizer_restore(opt_g, "optg", tensors, meta)
        if opt_d is not None:
            _optimizer_restore(opt_d, "optd", tensors, meta)
        start_step = int(meta["step"])

    data = _load_split(manifest, "train", need_w=phase1)
    if data is None:
        raise EmptyDatasetError("manifest has no training records")
    val = _load_split(manifest, "val", need_w=False)
    n = data["gt"].shape[0]

    log_path = out / "train_log.csv"
    new_log = not log_path.exists()
    log_fh = open(log_path, "a", newline="", encoding="utf-8")
    log = csv.writer(log_fh)
    if new_log:
        log.writerow(LOG_COLUMNS)

    def _validation_loss() -> float:
        if val is None:
            return math.nan
        with torch.no_grad():
            _, parts = _forward_losses(val, mapper, backends, gen, config.weights)
            bundle = loss_total(*parts, weights=config.weights)
            return float(bundle.total)

    rows_since = []
    try:
        for step in range(start_step + 1, config.steps + 1):
            idx = np.random.RandomState([config.seed, step]).randint(0, n, size=config.batch_size)
            sel = torch.from_numpy(idx)
            batch = {k: v[sel] for k, v in data.items()}

            try:
                w_fake, parts = _forward_losses(batch, mapper, backends, gen, config.weights)
                if phase1:
                    adv_g = adv_loss_g(w_fake, disc)
                else:
                    with torch.no_grad():
                        adv_g = adv_loss_g(w_fake, disc)
                bundle = loss_total(*parts, weights=config.weights, adv_g=adv_g)
            except InvalidLossError:
                diag = out / f"checkpoint_diag_{step:06d}.ntw"
                save_checkpoint(diag, mapper, at_module, disc, opt_g, opt_d, step, config)
                raise

            objective = bundle.total + adv_g if phase1 else bundle.total
            opt_g.zero_grad()
            objective.backward()
            opt_g.step()

            if phase1:
                widx = np.random.RandomState([config.seed, step, 1]).randint(0, n, size=config.batch_size)
                real_w = data["w"][torch.from_numpy(widx)]
                d_loss = adv_loss_d(real_w, w_fake.detach(), disc, gamma=config.adv_gamma)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

            vals = bundle.floats()
            row = {
                "step": step,
                "l_perc": vals["perc"],
                "l_style": vals["style"],
                "l_id": vals["id"],
                "l_lnd": vals["lnd"],
                "l_rec": vals["rec"],
                "l_adv_g": vals["adv_g"],
                "l_total": vals["total"],
            }
            log.writerow([repr(row[c]) if c != "step" else step for c in LOG_COLUMNS])
            log_fh.flush()
            rows_since.append(row)

            if step % config.checkpoint_every == 0 or step == config.steps:
                val_loss = _validation_loss()
                path = out / f"checkpoint_{step:06d}.ntw"
                save_checkpoint(path, mapper, at_module, disc, opt_g, opt_d, step, config, val_loss)
                yield Checkpoint(
                    path=str(path),
                    step=step,
                    config_hash=config.hash(),
                    val_loss=val_loss,
                    losses=rows_since,
                )
                rows_since = []
    finally:
        log_fh.close()


# ---------------------------------------------------------------------------
# End-to-end inpainting.
# ---------------------------------------------------------------------------

def run_inpaint(
    input_image,
    checkpoint_path,
    backend=None,
    inversion_cfg=None,
    iters=None,
    weights=None,
    backends=None,
    landmark_backend=None,
    out_dir=None,
):
    """Full path: mask, encode, map, render, refine.

    Returns (final image, inversion result).  ``iters=0`` skips the
    refinement entirely; the warm-start render is the output.  With
    ``out_dir`` set, both the pre- and post-refinement renders plus the
    loss trace are written there.
    """
    from .losses import LossWeights

    backends = backends or load_toy_encoders()
    gen = backend or ToyGeneratorBackend.from_archive()
    landmark_backend = landmark_backend or StubLandmarkBackend()
    weights = weights or LossWeights()
    cfg = inversion_cfg or InversionConfig()
    if iters is not None and iters > 0:
        cfg = InversionConfig(
            max_iters=iters, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
            tolerance=cfg.tolerance, record_trace=cfg.record_trace,
        )

    mapper, at_module, _, _, _ = load_checkpoint_modules(checkpoint_path)
    mapper.requires_grad_(False)
    at_module.requires_grad_(False)

    img = input_image if isinstance(input_image, Image) else Image(np.asarray(input_image))
    if img.dims != tuple(gen.resolution):
        img = Image(resize(img.pixels, gen.resolution))

    lnd = landmark_backend.detect(img)
    mask = build_periocular_mask(lnd, img.dims)
    in_masked = apply_mask(img, mask)
    id_res = backends["id"].input_resolution
    crop = crop_periocular(img, lnd, MarginConfig(crop_size=(id_res, id_res)))

    with torch.no_grad():
        e_id = backends["id"].embed_t(torch.from_numpy(crop.pixels).permute(2, 0, 1)[None])
        at_in = F.interpolate(
            torch.from_numpy(in_masked.pixels).permute(2, 0, 1)[None],
            size=(AT_RESOLUTION, AT_RESOLUTION), mode="bilinear", align_corners=False,
        )
        e_at = at_module(at_in)
        z = torch.cat([e_id, e_at], dim=1)
        w_init = mapper(z)[0]

    w_init = StyleW(w_init.numpy().astype(np.float64))
    pre = generate(w_init, gen)

    if iters == 0:
        initial = evaluate_objective(w_init, in_masked, crop, mask, gen, weights, backends)
        result = InversionResult(w_star=w_init, loss_trace=[initial], iterations_run=0)
        final = pre
    else:
        result = invert(w_init, in_masked, crop, mask, gen, weights, cfg, backends=backends)
        final = generate(result.w_star, gen)

    if out_dir is not None:
        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_image(out / "pre_optimization.png", pre)
        save_image(out / "post_optimization.png", final)
        save_tensors(out / "w_star.ntw", {"w": result.w_star.values.astype(np.float32)})
        if cfg.record_trace:
            with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iteration", "loss"])
                for i, v in enumerate(result.loss_trace):
                    writer.writerow([i, repr(float(v))])
    return final, result
