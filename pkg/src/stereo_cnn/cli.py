"""Command-line entry points: synth, extract, train, predict, eval."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as cfgmod
from .costvolume import CostVolume, save_volume
from .dataset import NEGATIVE, POSITIVE, ExampleSet, extract_examples, load_examples, save_examples
from .imaging import DisparityMap, load_disparity_png, load_image, normalize_image, save_disparity_png, save_image
from .neuralnet import accuracy, init_params, load_model, save_model, sgd_train
from .pipeline import evaluate, predict
from .synthetic import make_synthetic_pair, random_two_plane_scene, two_plane

IMAGE_SUFFIXES = (".png", ".pgm")


class CommandError(Exception):
    pass


def _settings(args, **overrides):
    settings = cfgmod.load_settings(getattr(args, "config", None), overrides)
    sys.stderr.write("# effective config\n" + settings.dumps())
    return settings


def _list_images(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise CommandError(f"not a directory: {directory}")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


# --- synth ---------------------------------------------------------------------


def cmd_synth(args) -> None:
    if args.scene == "constant":
        disp = args.disparity
        left, right, gt = make_synthetic_pair(args.seed, args.width, args.height, disp, args.dot_sigma)
    elif args.scene == "two-plane":
        rect = tuple(int(v) for v in args.rect.split(","))
        if len(rect) != 4:
            raise CommandError("--rect needs x0,y0,x1,y1")
        disp = two_plane(args.width, args.height, args.background, args.foreground, rect)
        left, right, gt = make_synthetic_pair(args.seed, args.width, args.height, disp, args.dot_sigma)
    else:
        left, right, gt = random_two_plane_scene(args.seed, args.width, args.height, args.d_max, args.dot_sigma)
    out = Path(args.out_dir)
    name = args.name or f"{args.seed:06d}"
    for sub in ("left", "right", "gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    save_image(out / "left" / f"{name}.png", left)
    save_image(out / "right" / f"{name}.png", right)
    save_disparity_png(out / "gt" / f"{name}.png", gt)
    print(f"wrote {name}.png to {out}/{{left,right,gt}}; {int(gt.valid.sum())} valid ground-truth pixels")


# --- extract ---------------------------------------------------------------------


def cmd_extract(args) -> None:
    settings = _settings(args, n=args.n, seed=args.seed)
    lefts = _list_images(Path(args.left_dir))
    rights = _list_images(Path(args.right_dir))
    gts = _list_images(Path(args.gt_dir))
    names = sorted(set(lefts) & set(rights) & set(gts))
    if not names:
        raise CommandError(f"found 0 aligned image pairs in {args.left_dir}, {args.right_dir}, {args.gt_dir}")
    for name in sorted((set(lefts) | set(rights) | set(gts)) - set(names)):
        sys.stderr.write(f"warning: {name} is missing from one of the directories, skipped\n")

    base = settings.sampling()
    sets = []
    for i, name in enumerate(names):
        try:
            left = load_image(lefts[name])
            right = load_image(rights[name])
            gt = load_disparity_png(gts[name])
        except ValueError as exc:
            raise CommandError(str(exc)) from exc
        if not (left.data.shape == right.data.shape == gt.values.shape):
            raise CommandError(f"{name}: left, right and ground truth sizes differ")
        params = type(base)(base.n, base.n_lo, base.n_hi, base.p_hi, base.seed + i)
        sets.append(extract_examples(normalize_image(left), normalize_image(right), gt, params))
    examples = ExampleSet.concat(sets)
    save_examples(args.out_file, examples)
    pos = int(np.sum(examples.labels == POSITIVE))
    neg = int(np.sum(examples.labels == NEGATIVE))
    print(f"pairs {len(names)} positive {pos} negative {neg}")


# --- train ---------------------------------------------------------------------


def split_held_out(examples: ExampleSet, fraction: float, seed: int):
    """Deterministic split into (train, held_out)."""
    order = np.random.default_rng([seed, 17]).permutation(len(examples))
    k = int(round(fraction * len(examples)))
    return examples[np.sort(order[k:])], examples[np.sort(order[:k])]


def cmd_train(args) -> None:
    settings = _settings(
        args,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        held_out=args.held_out,
        decay_epochs=args.decay_epochs and cfgmod.parse_value("decay_epochs", args.decay_epochs),
    )
    examples = load_examples(args.examples_file)
    if examples.patch_size != settings.n:
        sys.stderr.write(f"note: using patch size {examples.patch_size} from the example cache\n")
        settings = replace(settings, n=examples.patch_size)
    train, held = split_held_out(examples, settings.held_out, settings.seed)
    if len(train) == 0:
        raise CommandError("no training examples left after the held-out split")
    held = held if len(held) else None

    def progress(epoch, lr, loss, acc):
        print(f"epoch {epoch} lr {lr:.6g} loss {loss:.6f} held_out_acc {acc:.4f}", flush=True)

    arch = settings.architecture()
    init = init_params(arch, settings.seed)
    if held is not None:
        print(f"init held_out_acc {accuracy(init, held):.4f}")
    try:
        params = sgd_train(train, settings.schedule(), arch, init=init, held_out=held, progress=progress)
    except FloatingPointError as exc:
        raise CommandError(f"training diverged: {exc}") from exc
    save_model(args.model_out, params)
    print(f"saved {params.count()} parameters to {args.model_out}")


# --- predict ---------------------------------------------------------------------


def _dump_stage(directory: Path, name: str, value) -> None:
    if isinstance(value, CostVolume):
        save_volume(directory / f"{name}.vol", value)
    elif isinstance(value, DisparityMap):
        np.save(directory / f"{name}.npy", value.values)
    else:
        np.save(directory / f"{name}.npy", np.asarray(value))


def save_visualization(path, disp: DisparityMap, d_max: float) -> None:
    """Colour-mapped disparity, warmer colours for larger disparities."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import colormaps
    from PIL import Image

    scaled = np.clip(disp.values / max(d_max, 1e-9), 0, 1)
    rgb = (colormaps["jet"](scaled)[..., :3] * 255).astype(np.uint8)
    Image.fromarray(rgb).save(path)


def cmd_predict(args) -> None:
    settings = _settings(args, backend="sad" if args.sad else None, d_max=args.d_max)
    model = None
    if settings.backend == "cnn":
        if not args.model:
            raise CommandError("predict needs --model or --sad")
        if not Path(args.model).is_file():
            raise CommandError(f"model file not found: {args.model}")
        try:
            model = load_model(args.model)
        except ValueError as exc:
            raise CommandError(str(exc)) from exc
    try:
        left, right = load_image(args.left), load_image(args.right)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    conf = settings.pipeline()
    result = predict(left, right, model, conf, debug=bool(args.dump_intermediate))
    if args.dump_intermediate:
        disp, stages = result
        out = Path(args.dump_intermediate)
        out.mkdir(parents=True, exist_ok=True)
        for name, value in stages.items():
            _dump_stage(out, name, value)
    else:
        disp = result
    disp = DisparityMap(np.clip(disp.values, 0, None), disp.valid)
    save_disparity_png(args.out_png, disp)
    if args.vis:
        save_visualization(args.vis, disp, conf.d_max)
    print(f"wrote {args.out_png} ({disp.width}x{disp.height})")


# --- eval ---------------------------------------------------------------------


def cmd_eval(args) -> None:
    try:
        pred = load_disparity_png(args.pred_png)
        gt = load_disparity_png(args.gt_png)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    if pred.values.shape != gt.values.shape:
        raise CommandError(
            f"size mismatch: prediction {pred.width}x{pred.height}, ground truth {gt.width}x{gt.height}"
        )
    # An invalid prediction pixel decodes to 0 and is scored as such.
    try:
        err = evaluate(pred, gt, args.threshold)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    print(f"{err:.2f}")


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereo-cnn", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, help="BLAS threads (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a random-dot stereo pair with ground truth")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--scene", choices=("constant", "two-plane", "random-two-plane"), default="random-two-plane")
    p.add_argument("--disparity", type=int, default=0, help="constant scene disparity")
    p.add_argument("--background", type=int, default=2)
    p.add_argument("--foreground", type=int, default=6)
    p.add_argument("--rect", default="32,32,64,64", help="two-plane foreground x0,y0,x1,y1")
    p.add_argument("--d-max", type=int, default=12, help="random-two-plane disparity bound")
    p.add_argument("--dot-sigma", type=float, default=1.0)
    p.add_argument("--name", default=None, help="file stem (default: zero-padded seed)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="build a training example cache")
    for name in ("left_dir", "right_dir", "gt_dir", "out_file"):
        p.add_argument(name)
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the matching network")
    p.add_argument("examples_file")
    p.add_argument("model_out")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--decay-epochs", default=None, help="comma-separated, e.g. 12,15")
    p.add_argument("--held-out", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="compute a disparity map")
    p.add_argument("left")
    p.add_argument("right")
    p.add_argument("out_png")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--model")
    group.add_argument("--sad", action="store_true", help="use the SAD cost instead of a network")
    p.add_argument("--config")
    p.add_argument("--d-max", type=int, default=None)
    p.add_argument("--vis", default=None, help="also write a colour-mapped PNG here")
    p.add_argument("--dump-intermediate", default=None, metavar="DIR")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="percentage of pixels off by more than a threshold")
    p.add_argument("pred_png")
    p.add_argument("gt_png")
    p.add_argument("--threshold", type=float, default=3.0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads or os.cpu_count() or 1
    try:
        with threadpool_limits(limits=threads):
            args.func(args)
    except (CommandError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"stereo-cnn {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
