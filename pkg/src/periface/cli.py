"""Command-line surface.

Exit codes: 0 success, 1 domain error, 2 usage error.  Diagnostics go
to stderr; machine-readable results go to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys

from .errors import PerifaceError

log = logging.getLogger("periface")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="periface",
        description="Periocular-conditioned face synthesis and inpainting toolkit.",
    )
    parser.add_argument("--config", help="run configuration file (key = value lines)")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument(
        "--log-level",
        default="warning",
        choices=("debug", "info", "warning", "error"),
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="render a synthetic dataset from the frozen generator")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="preprocess a directory of real face images")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)

    p = sub.add_parser("train", help="train the mapper and attribute encoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)

    p = sub.add_parser("inpaint", help="reconstruct a full face from its periocular region")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--trace-out", default=None)

    p = sub.add_parser("evaluate", help="image metrics between two directories")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--fid-shrinkage", type=float, default=0.0,
                   help="enable the distribution metric with covariance shrinkage > 0")
    p.add_argument("--per-sample", action="store_true")

    p = sub.add_parser("verify", help="verification curves over an image pair list")
    p.add_argument("--pairs", required=True)
    p.add_argument("--curves-out", required=True)
    p.add_argument("--plot", default=None)

    return parser


def _cmd_synth(args, seed: int) -> int:
    from .pipeline import synthesize_stylegandb

    manifest = synthesize_stylegandb(args.count, seed, out_dir=args.out)
    print(pathlib.Path(manifest.root) / "manifest.json")
    return 0


def _cmd_ingest(args, seed: int) -> int:
    from .pipeline import ingest_real_dataset

    manifest = ingest_real_dataset(
        args.dir, args.out, resolution=(args.resolution, args.resolution), seed=seed
    )
    log.info("ingested %d records (%d rejected)", len(manifest.records), manifest.meta.get("rejected", 0))
    print(pathlib.Path(manifest.root) / "manifest.json")
    return 0


def _cmd_train(args, config) -> int:
    from .pipeline import DatasetManifest, train

    manifest = DatasetManifest.load(args.manifest)
    last = None
    for ckpt in train(config, manifest, args.out, resume=args.resume):
        log.info("checkpoint at step %d: %s", ckpt.step, ckpt.path)
        last = ckpt
    print(last.path)
    return 0


def _cmd_inpaint(args, seed: int) -> int:
    from .imaging import load_image
    from .inversion import InversionConfig
    from .pipeline import run_inpaint

    cfg = InversionConfig(
        max_iters=args.iters if args.iters else 100,
        lr=args.lr,
        tolerance=args.tolerance,
    )
    final, result = run_inpaint(
        load_image(args.input),
        args.checkpoint,
        inversion_cfg=cfg,
        iters=args.iters,
        out_dir=args.out,
    )
    if args.trace_out:
        import csv

        with open(args.trace_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss"])
            for i, v in enumerate(result.loss_trace):
                writer.writerow([i, repr(float(v))])
    log.info("refined for %d iterations, best loss %.6g", result.iterations_run, min(result.loss_trace))
    print(pathlib.Path(args.out) / "post_optimization.png")
    return 0


def _matched_images(gt_dir, out_dir):
    gt = pathlib.Path(gt_dir)
    out = pathlib.Path(out_dir)
    names = sorted(
        {p.name for p in gt.iterdir() if p.suffix.lower() == ".png"}
        & {p.name for p in out.iterdir() if p.suffix.lower() == ".png"}
    )
    return [(gt / n, out / n) for n in names]


def _cmd_evaluate(args) -> int:
    from .imaging import load_image, resize
    from .metrics import evaluate_pairs

    matched = _matched_images(args.gt_dir, args.out_dir)
    if not matched:
        raise PerifaceError("no matching image names between the two directories")
    pairs = [(load_image(a), load_image(b)) for a, b in matched]

    fid_features = None
    if args.fid_shrinkage > 0.0:
        from .encoders import AT_RESOLUTION, load_toy_encoders

        at = load_toy_encoders()["at"]
        def feats(images):
            return [at.embed(resize(img.pixels, (AT_RESOLUTION, AT_RESOLUTION))) for img in images]
        fid_features = (feats([a for a, _ in pairs]), feats([b for _, b in pairs]))

    report = evaluate_pairs(
        pairs,
        fid_features=fid_features,
        shrinkage=args.fid_shrinkage,
        keep_per_sample=args.per_sample,
    )
    report.to_json(args.report)
    log.info("evaluated %d pairs", report.n_samples)
    print(args.report)
    return 0


def _cmd_verify(args) -> int:
    from .encoders import load_toy_encoders
    from .metrics import InsufficientPairsError, PairList, image_embedder, verification_curves

    pairs = PairList.from_csv(args.pairs)
    embed = image_embedder(load_toy_encoders()["id"])
    try:
        curves = verification_curves(pairs, embed)
    except InsufficientPairsError as exc:
        if exc.curves is not None:
            exc.curves.to_csv(args.curves_out)
        raise
    curves.to_csv(args.curves_out)
    if args.plot:
        emit_curves_plot(curves, args.plot)
    print(json.dumps({"eer": curves.eer, "accuracy": curves.accuracy,
                      "best_threshold": curves.best_threshold}, sort_keys=True))
    return 0


def emit_curves_plot(curves, path) -> None:
    """Static error-curve figure: both rates vs threshold, plus the ROC."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(curves.thresholds, curves.fnmr, label="FNMR")
    ax1.plot(curves.thresholds, curves.fmr, label="FMR")
    if not (curves.eer != curves.eer):  # skip marker when EER is NaN
        ax1.axhline(curves.eer, color="gray", linestyle=":", linewidth=1)
        ax1.plot([curves.best_threshold], [curves.eer], "ko", markersize=4, label=f"EER={curves.eer:.3f}")
    ax1.set_xlabel("threshold")
    ax1.set_ylabel("rate")
    ax1.legend()
    ax2.plot(curves.fmr, 1.0 - curves.fnmr)
    ax2.set_xlabel("FMR")
    ax2.set_ylabel("1 - FNMR")
    ax2.set_title("ROC")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2

    try:
        if args.command == "synth":
            return _cmd_synth(args, args.seed if args.seed is not None else 0)
        if args.command == "ingest":
            return _cmd_ingest(args, args.seed if args.seed is not None else 0)
        if args.command == "train":
            from .config import RunConfig, load_config

            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            config = load_config(args.config, overrides) if args.config else RunConfig(**({"seed": args.seed} if args.seed is not None else {}))
            return _cmd_train(args, config)
        if args.command == "inpaint":
            return _cmd_inpaint(args, args.seed if args.seed is not None else 0)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "verify":
            return _cmd_verify(args)
    except PerifaceError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 1
    parser.print_usage(sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
