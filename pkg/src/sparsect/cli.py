"""Command-line entry point: ``sparsect <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .baselines import DivergenceError, wls_tv_reconstruct
from .fbp import FilterError, default_pad_len, fbp_reconstruct, filter_to_csv, make_filter
from .geometry import GeometryError, check_upsampling
from .metrics import hu_window, psnr, ssim
from .phantoms import load_split, write_dataset
from .tensorio import TensorFormatError, read_tensor, write_tensor
from .training import TrainingError, load_checkpoint, prepare, save_checkpoint, train
from .upsample import enhance
from .wnet import reconstruct

log = logging.getLogger("sparsect")

FILTER_CHOICES = ("ramlak", "cosine", "shepp-logan", "learned")
USER_ERRORS = (
    cfgmod.ConfigError,
    GeometryError,
    FilterError,
    TensorFormatError,
    TrainingError,
    DivergenceError,
    ValueError,
    OSError,
)


class UsageError(ValueError):
    pass


# -- argument plumbing --------------------------------------------------------


def _common(p: argparse.ArgumentParser, geometry: bool = True) -> None:
    p.add_argument("--config", help="INI run configuration (flags override it)")
    p.add_argument("--seed", type=int, help="master seed (default: config or 0)")
    if geometry:
        p.add_argument("--views", type=int, help="number of sparse views k (default 16)")
        p.add_argument("--detectors", type=int, help="detector elements (default 96)")
        p.add_argument("--size", type=int, help="image side length (default 64)")
        p.add_argument("--upsample-factor", type=int, help="dense/sparse view ratio C (default 4)")


def _batch_io(p: argparse.ArgumentParser, what: str) -> None:
    p.add_argument("input", nargs="?", help=f"{what} tensor file")
    p.add_argument("--data", help="dataset directory; process a whole split instead of one file")
    p.add_argument("--split", default="test", help="dataset split for --data (default: test)")
    p.add_argument("--out", required=True, help="output file, or directory with --data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsect", description="Sparse-view CT reconstruction with a dual-domain WNet."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a phantom dataset")
    _common(p)
    p.add_argument("--n-train", type=int, help="training phantoms before augmentation (200)")
    p.add_argument("--n-val", type=int, help="validation phantoms before augmentation (40)")
    p.add_argument("--n-test", type=int, help="test phantoms (40)")
    p.add_argument("--out", required=True, help="dataset directory")

    p = sub.add_parser("fbp", help="filtered backprojection of a sinogram")
    _common(p)
    _batch_io(p, "sinogram")
    p.add_argument("--filter", choices=FILTER_CHOICES, default="ramlak",
                   help="reconstruction filter (default: ramlak)")
    p.add_argument("--checkpoint", help="checkpoint holding the learned filter")
    p.add_argument("--role", default="y_k", choices=("y_k", "y_K"),
                   help="sinogram role used with --data (default: y_k)")

    p = sub.add_parser("enhance", help="geometry-aware upsampling with measurement consensus")
    _common(p)
    _batch_io(p, "sparse sinogram")

    p = sub.add_parser("train", help="round-robin WNet training")
    _common(p, geometry=False)
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="CSV training log (default: <out>.csv)")
    p.add_argument("--jump-epochs", type=int, help="epochs per jump-start phase (5)")
    p.add_argument("--joint-epochs", type=int, help="joint fine-tuning epochs (20)")
    p.add_argument("--batch-size", type=int, help="minibatch size (4)")

    p = sub.add_parser("infer", help="reconstruct sparse sinograms with a trained WNet")
    _common(p, geometry=False)
    _batch_io(p, "sparse sinogram")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")

    p = sub.add_parser("wls-tv", help="least squares with total variation baseline")
    _common(p)
    _batch_io(p, "sinogram")
    p.add_argument("--lam", type=float, help="TV weight (default: config or 1.0)")
    p.add_argument("--iters", type=int, help="iterations (default 250)")
    p.add_argument("--step", type=float, help="initial step (default 1/||A||^2)")

    p = sub.add_parser("eval", help="PSNR and SSIM per slice, written as CSV")
    p.add_argument("--data", help="dataset directory providing x_full references")
    p.add_argument("--split", default="test", help="dataset split (default: test)")
    p.add_argument("--method", action="append", default=[], metavar="NAME=DIR",
                   help="reconstructions named <sample_id>.sct in DIR; repeatable")
    p.add_argument("--pair", action="append", default=[], metavar="PRED:REF",
                   help="score one prediction file against one reference; repeatable")
    p.add_argument("--data-range", type=float, default=1.0, help="PSNR/SSIM range (1.0)")
    p.add_argument("--out", required=True, help="metrics CSV")

    p = sub.add_parser("plot-filter", help="write learned and analytic filters as CSV")
    p.add_argument("--checkpoint", help="trained checkpoint (omit for analytic filters only)")
    p.add_argument("--pad-len", type=int, help="padding length without a checkpoint (128)")
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("export-png", help="window an image and save 8-bit grayscale PNG")
    p.add_argument("input", help="image tensor file")
    p.add_argument("--window", default="0:1", help="display window lo:hi (default 0:1)")
    p.add_argument("--out", required=True, help="PNG path")
    return parser


def _run_config(args) -> cfgmod.RunConfig:
    ov = {"run.seed": getattr(args, "seed", None)}
    for flag, key in (("views", "views"), ("detectors", "detectors"), ("size", "size"),
                      ("upsample_factor", "upsample_factor")):
        ov[f"geometry.{key}"] = getattr(args, flag, None)
    for flag in ("n_train", "n_val", "n_test"):
        ov[f"dataset.{flag}"] = getattr(args, flag, None)
    for flag in ("jump_epochs", "joint_epochs", "batch_size"):
        ov[f"train.{flag}"] = getattr(args, flag, None)
    for flag in ("lam", "iters", "step"):
        ov[f"wls_tv.{flag}"] = getattr(args, flag, None)
    return cfgmod.load_config(getattr(args, "config", None), ov)


def _inputs(args):
    """Yield (name, array, output path) for single-file or dataset mode."""
    if args.data:
        if args.input:
            raise UsageError("give either an input file or --data, not both")
        role = getattr(args, "role", "y_k")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        samples = load_split(args.data, args.split)
        if not samples:
            raise UsageError(f"split {args.split!r} of {args.data} is empty")
        for s in samples:
            yield s.sample_id, getattr(s, role), out / f"{s.sample_id}.sct"
    else:
        if not args.input:
            raise UsageError("an input file or --data is required")
        yield Path(args.input).stem, read_tensor(args.input), Path(args.out)


def _sinogram_geometry(run: cfgmod.RunConfig, y):
    """Desk detector layout with as many angles as the sinogram has rows."""
    g_k, _, _ = run.desk.geometries()
    if y.ndim != 2:
        raise UsageError(f"expected a 2-D sinogram, got shape {y.shape}")
    if y.shape[1] != g_k.n_detectors:
        raise UsageError(
            f"sinogram has {y.shape[1]} detector columns, configuration expects {g_k.n_detectors}"
        )
    return g_k.with_angles(y.shape[0])


# -- commands -----------------------------------------------------------------


def cmd_synth(args):
    run = _run_config(args)
    root = write_dataset(run.dataset, args.out)
    (Path(root) / "run.ini").write_text(cfgmod.dump_config(run))
    print(f"wrote dataset to {root}")


def cmd_fbp(args):
    run = _run_config(args)
    kind = args.filter.replace("-", "_")
    learned = None
    if kind == "learned":
        if not args.checkpoint:
            raise UsageError("--filter learned needs --checkpoint")
        state, _, _ = load_checkpoint(args.checkpoint)
        learned = state.params.learned_filter()
    elif args.checkpoint:
        raise UsageError("--checkpoint is only used with --filter learned")
    for _, y, out in _inputs(args):
        g = _sinogram_geometry(run, y)
        w = learned if learned is not None else make_filter(kind, default_pad_len(g.n_detectors))
        write_tensor(out, fbp_reconstruct(np.asarray(y, dtype=np.float64), g, w))


def cmd_enhance(args):
    run = _run_config(args)
    g_k, g_K, _ = run.desk.geometries()
    for _, y, out in _inputs(args):
        if y.shape != g_k.sinogram_shape:
            raise UsageError(f"sparse sinogram shape {y.shape} != {g_k.sinogram_shape}")
        write_tensor(out, enhance(np.asarray(y, dtype=np.float64), g_k, g_K))


def cmd_train(args):
    run = _run_config(args)
    root = Path(args.data)
    if (root / "run.ini").exists() and not args.config:
        run = cfgmod.load_config(root / "run.ini", {
            "run.seed": args.seed,
            "train.jump_epochs": args.jump_epochs,
            "train.joint_epochs": args.joint_epochs,
            "train.batch_size": args.batch_size,
        })
    g_k, g_K, _ = run.desk.geometries()
    samples = load_split(root, "train", verify=True)
    if not samples:
        raise UsageError(f"no training samples in {root}")
    if samples[0].y_k.shape != g_k.sinogram_shape:
        raise UsageError("dataset geometry does not match the run configuration")
    data = prepare(samples, g_k, g_K, np.dtype(run.train.dtype))
    log_path = Path(args.log) if args.log else Path(f"{args.out}.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phase", "epoch", "mean_loss", "wall_time_s"])

        def on_epoch(phase, epoch, loss, seconds, _state):
            writer.writerow([phase, epoch, repr(loss), f"{seconds:.3f}"])
            fh.flush()

        state = train(data, g_k, g_K, run.train, on_epoch_end=on_epoch)
    save_checkpoint(args.out, state, run.train, run.desk)
    print(f"wrote checkpoint {args.out} and log {log_path}")


def cmd_infer(args):
    state, tcfg, desk = load_checkpoint(args.checkpoint)
    g_k, g_K, _ = desk.geometries()
    for _, y, out in _inputs(args):
        if y.shape != g_k.sinogram_shape:
            raise UsageError(f"sparse sinogram shape {y.shape} != {g_k.sinogram_shape}")
        write_tensor(out, reconstruct(state.params, y, g_k, g_K, tcfg.wnet))


def cmd_wls_tv(args):
    run = _run_config(args)
    p = run.wls_tv
    for _, y, out in _inputs(args):
        g = _sinogram_geometry(run, y)
        write_tensor(out, wls_tv_reconstruct(y, g, p.lam, p.iters, p.step))


def cmd_eval(args):
    rows = []
    if args.method:
        if not args.data:
            raise UsageError("--method needs --data for the references")
        refs = {s.sample_id: s.x_full for s in load_split(args.data, args.split)}
        if not refs:
            raise UsageError(f"split {args.split!r} of {args.data} is empty")
        for spec in args.method:
            name, sep, folder = spec.partition("=")
            if not sep or not name or not folder:
                raise UsageError(f"--method expects NAME=DIR, got {spec!r}")
            for sid, ref in refs.items():
                rows.append((name, sid, read_tensor(Path(folder) / f"{sid}.sct"), ref))
    for spec in args.pair:
        pred, sep, ref = spec.partition(":")
        if not sep:
            raise UsageError(f"--pair expects PRED:REF, got {spec!r}")
        rows.append(("pair", Path(pred).stem, read_tensor(pred), read_tensor(ref)))
    if not rows:
        raise UsageError("nothing to evaluate; give --method or --pair")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "slice_id", "psnr", "ssim"])
        for name, sid, x, ref in rows:
            p = psnr(x, ref, args.data_range)
            s = ssim(x, ref, args.data_range)
            writer.writerow([name, sid, repr(p), repr(s)])
    for name in dict.fromkeys(r[0] for r in rows):
        sel = [(psnr(x, r, args.data_range), ssim(x, r, args.data_range))
               for n, _, x, r in rows if n == name]
        ps, ss = np.array(sel).T
        with np.errstate(invalid="ignore"):  # identical pairs give infinite PSNR
            print(
                f"{name}: PSNR {ps.mean():.2f} +- {ps.std():.2f}  SSIM {ss.mean():.4f} +- {ss.std():.4f}"
            )


def cmd_plot_filter(args):
    if args.checkpoint:
        state, _, _ = load_checkpoint(args.checkpoint)
        main = state.params.learned_filter()
    else:
        main = make_filter("ramlak", args.pad_len or default_pad_len(96))
    pad = main.pad_len
    extra = {k: make_filter(k, pad) for k in ("ramlak", "cosine", "shepp_logan")}
    if main.kind == "ramlak":
        extra.pop("ramlak")
    Path(args.out).write_text(filter_to_csv(main, extra))


def parse_window(text: str) -> tuple[float, float]:
    lo, sep, hi = text.partition(":")
    try:
        lo_v, hi_v = float(lo), float(hi)
    except ValueError:
        raise UsageError(f"--window expects lo:hi, got {text!r}") from None
    if not sep or not hi_v > lo_v:
        raise UsageError(f"--window needs lo < hi, got {text!r}")
    return lo_v, hi_v


def cmd_export_png(args):
    from PIL import Image as PILImage

    lo, hi = parse_window(args.window)
    x = read_tensor(args.input)
    if x.ndim != 2:
        raise UsageError(f"expected a 2-D image, got shape {x.shape}")
    img = np.round(hu_window(x, lo, hi) * 255.0).astype(np.uint8)
    PILImage.fromarray(img, mode="L").save(args.out, format="PNG")


COMMANDS = {
    "synth": cmd_synth,
    "fbp": cmd_fbp,
    "enhance": cmd_enhance,
    "train": cmd_train,
    "infer": cmd_infer,
    "wls-tv": cmd_wls_tv,
    "eval": cmd_eval,
    "plot-filter": cmd_plot_filter,
    "export-png": cmd_export_png,
}


def _thread_limit():
    raw = os.environ.get("SPARSECT_THREADS")
    if raw is None:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise UsageError(f"SPARSECT_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            COMMANDS[args.command](args)
    except USER_ERRORS as exc:
        print(f"sparsect {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
