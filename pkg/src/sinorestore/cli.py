"""``sino-restore``: simulate, interpolate, reconstruct and evaluate from one JSON config.

Stages hand off through files in the output directory, so each can run on
its own once the previous stages' outputs exist.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import NumericalFailure
from .config import U64_MAX, ConfigError, load_config
from .metrics import UndefinedCNR, cnr, fbp_reconstruct, rmse, ssim, write_report
from .simulator import NoiseSpec, add_noise, compute_weights, forward_project, make_phantom, subsample_views
from .solver import run, write_diagnostics
from .volume import VolumeFormatError, load_mask, load_volume, save_mask, save_volume

logger = logging.getLogger(__name__)

# Image labels in report order, with the sinogram each is reconstructed from.
ARMS = (("x_full", "y_noisy"), ("x_half", "measured"), ("x_proposed", "y_hat"))
GROUND_TRUTH = "x_true"


def _load(out, name):
    path = out / name
    if not path.with_suffix(".json").is_file():
        raise ConfigError(f"missing stage input {path}.raw/.json; run the earlier stages first")
    try:
        return load_volume(path)
    except VolumeFormatError as exc:
        raise ConfigError(str(exc)) from None


def _write_resolved(cfg):
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(cfg.resolved, indent=2, sort_keys=True) + "\n"
    (cfg.output_dir / "resolved-config.json").write_text(text)


def cmd_simulate(cfg):
    """Phantom, noiseless and noisy sinograms, measured views, mask and a sibling reference."""
    out = cfg.output_dir
    _write_resolved(cfg)
    image = make_phantom(cfg.phantom)
    y_true = forward_project(image, cfg.geometry)
    y_noisy = add_noise(y_true, cfg.noise)
    measured, mask = subsample_views(y_noisy, cfg.subsample)
    save_volume(image, out / GROUND_TRUTH)
    save_volume(y_true, out / "y_true")
    save_volume(y_noisy, out / "y_noisy")
    save_volume(measured, out / "measured")
    save_mask(mask, out / "mask.json")
    if not isinstance(cfg.reference, Path):
        # the reference is a normal-dose scan of a different head
        z_true = forward_project(make_phantom(cfg.reference), cfg.geometry)
        z = add_noise(z_true, NoiseSpec.preset("low-noise", seed=cfg.resolved["derived_seeds"]["reference"]))
        save_volume(z, out / "reference")
    logger.info("simulated %s views of a %s phantom", cfg.geometry.n_theta, cfg.phantom.dims)


def _reference(cfg):
    if isinstance(cfg.reference, Path):
        try:
            return load_volume(cfg.reference)
        except VolumeFormatError as exc:
            raise ConfigError(f"reference volume: {exc}") from None
    return _load(cfg.output_dir, "reference")


def cmd_interpolate(cfg):
    """Restore the full-view sinogram y_hat from the measured views."""
    out = cfg.output_dir
    _write_resolved(cfg)
    measured = _load(out, "measured")
    if not (out / "mask.json").is_file():
        raise ConfigError(f"missing stage input {out / 'mask.json'}")
    mask = load_mask(out / "mask.json")
    z = _reference(cfg)
    y_hat, diagnostics = run(measured, mask, compute_weights(measured), z, cfg.restore)
    save_volume(y_hat, out / "y_hat")
    write_diagnostics(diagnostics, out / "diagnostics.csv")
    logger.info("interpolated %d views in %d iterations", mask.n_theta - mask.n_measured, len(diagnostics))


def cmd_reconstruct(cfg):
    """FBP images from every sinogram present: all views, measured views, restored views."""
    out = cfg.output_dir
    _write_resolved(cfg)
    done = 0
    for label, sino_name in ARMS:
        if not (out / sino_name).with_suffix(".json").is_file():
            continue
        sino = _load(out, sino_name)
        geom = cfg.geometry
        if sino_name == "measured":
            geom = geom.subset(load_mask(out / "mask.json"))
        save_volume(fbp_reconstruct(sino, geom, cfg.image_dims), out / label)
        done += 1
    if done == 0:
        raise ConfigError(f"no sinograms to reconstruct in {out}")


def _preview(img, window, level, path):
    mid = img[:, :, img.shape[2] // 2]
    lo = level - window / 2
    scaled = np.clip((mid - lo) / window, 0.0, 1.0)
    # x runs left to right, y bottom to top
    pixels = np.rint(255.0 * scaled.T[::-1]).astype(np.uint8)
    Image.fromarray(pixels).save(path)


def evaluate_images(truth, images, roi, window=None, level=None, out=None):
    """Report rows for labelled `images` against `truth`; optional PNG previews into `out`."""
    span = float(truth.max() - truth.min())
    dynamic_range = span if span > 0 else 1.0
    rows = []
    for label, img in images:
        try:
            c = cnr(img, roi)
        except UndefinedCNR:
            c = float("nan")
        rows.append({"image_label": label, "rmse": rmse(img, truth), "ssim": ssim(img, truth, dynamic_range), "cnr": c})
        if out is not None:
            _preview(img, window, level, out / f"{label}.png")
    return rows


def cmd_evaluate(cfg):
    """RMSE, SSIM and CNR of each reconstruction against the phantom."""
    out = cfg.output_dir
    _write_resolved(cfg)
    if not (out / GROUND_TRUTH).with_suffix(".json").is_file():
        raise ConfigError(f"missing ground truth {out / GROUND_TRUTH}; run simulate first")
    truth = _load(out, GROUND_TRUTH)
    images = [(label, _load(out, label)) for label, _ in ARMS if (out / label).with_suffix(".json").is_file()]
    if not images:
        raise ConfigError(f"no reconstructions to evaluate in {out}")
    rows = evaluate_images(truth, images, cfg.roi, cfg.window, cfg.level, out)
    _preview(truth, cfg.window, cfg.level, out / f"{GROUND_TRUTH}.png")
    write_report(rows, out / "report.csv")
    return rows


def cmd_pipeline(cfg):
    cmd_simulate(cfg)
    cmd_interpolate(cfg)
    cmd_reconstruct(cfg)
    return cmd_evaluate(cfg)


COMMANDS = {
    "simulate": cmd_simulate,
    "interpolate": cmd_interpolate,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def _seed(text):
    value = int(text)
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="sino-restore", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    parser.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=_seed, help="unsigned 64-bit seed (overrides seed)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"sino-restore: error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"sino-restore: numerical failure at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
