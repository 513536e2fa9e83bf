"""``dzcodec`` command-line interface.

Every command exits 0 on success. Failures print exactly one line,
``error: <kind>: <message>``, to stderr and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import selftest as _selftest
from .codec import EncodeJob, decode_image, encode_image, rd_sweep, write_rd_csv
from .data import extract_patches, synthetic_images, synthetic_patches
from .errors import CodecError, ConfigurationError
from .imageio import load_ppm, save_ppm
from .model import load_model, save_model
from .quant import QuantConfig
from .training import TrainConfig, isometry_check, loss_gradcheck, train

log = logging.getLogger("dzcodec")

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_corpus(directory) -> list:
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ConfigurationError(f"no PPM/PGM images in {directory}")
    return [load_ppm(p) for p in paths]


def _train_config(args) -> TrainConfig:
    base = TrainConfig.from_file(args.config).to_dict() if args.config else {}
    for key in ("lambda1", "lambda2", "alpha", "steps", "seed", "metric"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    if base.get("metric") == "ssim" and not args.config:
        return TrainConfig.for_metric("ssim", **{k: v for k, v in base.items() if k != "metric"})
    return TrainConfig(**base)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _corpus_patches(images, patch_size, count, seed):
    per = -(-count // len(images))
    return np.concatenate([
        extract_patches(img.normalized()[None], patch_size, per, seed + i) for i, img in enumerate(images)
    ])[:count]


def cmd_train(args):
    cfg = _train_config(args)
    if args.dir:
        images = _load_corpus(args.dir)
        if len({img.channels for img in images}) != 1:
            raise ConfigurationError("training images mix grayscale and colour")
        if images[0].channels != cfg.channels:
            cfg = TrainConfig(**{**cfg.to_dict(), "channels": images[0].channels})
        patches = _corpus_patches(images, cfg.patch_size, args.patches, cfg.seed)
    else:
        patches = synthetic_patches(args.patches, cfg.patch_size, cfg.channels, seed=cfg.seed)
    log.info("training on %d patches for %d steps", len(patches), cfg.steps)
    model, em, tlog = train(patches, cfg, progress_every=args.progress)
    digest = save_model(args.out, model, em)
    if args.log:
        tlog.write_csv(args.log)
    print(f"model {args.out} hash {digest:016x}")


def cmd_encode(args):
    model, em = load_model(args.model)
    img = load_ppm(args.inp)
    cs = encode_image(EncodeJob(img, model, em, QuantConfig(args.q, args.offset), args.zero_center))
    data = cs.to_bytes()
    Path(args.out).write_bytes(data)
    bpp = 8 * len(data) / (img.width * img.height)
    print(f"{args.out} bytes {len(data)} bpp {bpp:.6g}")


def cmd_decode(args):
    model, em = load_model(args.model)
    img = decode_image(Path(args.inp).read_bytes(), model, em)
    save_ppm(args.out, img)
    print(f"{args.out} {img.width}x{img.height}x{img.channels}")


def cmd_rdsweep(args):
    model, em = load_model(args.model)
    images = _load_corpus(args.dir)
    kwargs = {}
    if args.q_list:
        kwargs["q_list"] = args.q_list
    if args.offsets:
        kwargs["offsets"] = args.offsets
    rows = rd_sweep(images, model, em, **kwargs)
    _emit(write_rd_csv(rows), args.out)


def cmd_isometry(args):
    model, em = load_model(args.model)
    cfg = TrainConfig(
        lambda1=args.lambda1 or 5.0,
        lambda2=0.2 if args.lambda2 is None else args.lambda2,
        alpha=args.alpha or 0.2,
        patch_size=model.patch_size,
        channels=model.channels,
        latent_dim=model.latent_dim,
    )
    if args.dir:
        samples = _corpus_patches(_load_corpus(args.dir), model.patch_size, args.samples, args.seed)
    else:
        images = synthetic_images(max(1, args.samples // 16), 64, 64, model.channels, seed=args.seed)
        samples = extract_patches(images, model.patch_size, args.samples, args.seed)
    report = isometry_check(model, em, samples, "mse", cfg)
    result = report.as_dict()
    result["within_bounds"] = report.within()
    _emit(json.dumps(result, indent=2) + "\n", args.out)


def cmd_gradcheck(args):
    report = loss_gradcheck(tolerance=args.tolerance, seed=args.seed)
    _emit(f"max_relative_error {report.max_error:.3e} tolerance {report.tolerance:g} "
          f"{'pass' if report.passed else 'FAIL'}\n", args.out)
    if not report.passed:
        raise CheckFailed(f"gradient check max error {report.max_error:.3e} exceeds {report.tolerance:g}")


def cmd_selftest(args):
    results = _selftest.run(seed=args.seed)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in results]
    _emit("\n".join(lines) + "\n", args.out)
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        raise CheckFailed("failed: " + ", ".join(failed))


class CheckFailed(CodecError):
    kind = "check-failed"


def _float_list(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dzcodec", description="Variable-rate learned image codec with a dead-zone quantizer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on synthetic patches or a PPM/PGM directory")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--config", help="key=value training config file")
    t.add_argument("--dir", help="directory of PPM/PGM training images")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lambda1", type=float)
    t.add_argument("--lambda2", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--metric", choices=("mse", "ssim"))
    t.add_argument("--patches", type=int, default=20000, help="number of training patches")
    t.add_argument("--log", help="write the training log CSV here")
    t.add_argument("--progress", type=int, default=0, help="log every N steps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="compress a PPM/PGM image")
    e.add_argument("--model", required=True)
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--q", type=float, default=1.0)
    e.add_argument("--offset", type=float, default=0.45)
    e.add_argument("--zero-center", action="store_true", help="quantize around 0 instead of the medians")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="decompress a bitstream to PPM/PGM")
    d.add_argument("--model", required=True)
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    r = sub.add_parser("rdsweep", help="rate-distortion sweep over Q and offset")
    r.add_argument("--model", required=True)
    r.add_argument("--dir", required=True)
    r.add_argument("--out", help="CSV path (stdout if omitted)")
    r.add_argument("--q-list", type=_float_list, help="comma-separated step sizes")
    r.add_argument("--offsets", type=_float_list, help="comma-separated dead-zone offsets")
    r.set_defaults(func=cmd_rdsweep)

    i = sub.add_parser("isometry-check", help="measure the decoder Gram matrix")
    i.add_argument("--model", required=True)
    i.add_argument("--dir", help="sample patches from these images instead of synthetic ones")
    i.add_argument("--samples", type=int, default=50)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--lambda1", type=float)
    i.add_argument("--lambda2", type=float)
    i.add_argument("--alpha", type=float)
    i.add_argument("--out")
    i.set_defaults(func=cmd_isometry)

    g = sub.add_parser("gradcheck", help="finite-difference check of the training loss")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-5)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("selftest", help="quantizer, coder and metric property checks")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except CodecError as exc:
        print(f"error: {exc.kind}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
