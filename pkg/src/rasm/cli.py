"""Command-line entry point: ``rasm <command> ...``.

Exit status is 0 on success, 1 when a command fails at run time (missing
files, corrupt inputs, refused overwrites) and 2 for usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from rasm import __version__, dataset, imaging, plotting, synth
from rasm.errors import RasmError
from rasm.labelcodec import MAX_LABEL_LEN, build_vocabulary, load_display_map, to_display
from rasm.metrics import evaluate as evaluate_pairs, levenshtein
from rasm.nncore.network import Network, NetworkConfig
from rasm.pipeline import process_page
from rasm.trainer import (CSVLogger, EarlyStopping, LearningRateScheduler, ModelCheckpoint,
                          TrainConfig, load_checkpoint, recognize, train)

log = logging.getLogger("rasm")


class CommandError(Exception):
    """A run-time failure reported to the user with exit status 1."""


def resolve_seed(value: int | None) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("RASM_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise CommandError(f"RASM_SEED must be an integer, got {env!r}") from exc


def guard(paths, force: bool) -> None:
    """Refuse to replace existing files unless ``force`` is set."""
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise CommandError("refusing to overwrite " + ", ".join(existing) + " (use --force)")


def need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"no such file: {p}")
    return p


def _dump(result, where, force: bool) -> None:
    if where is None:
        return
    names = ["01_gray", "02_filtered", "03_binary", "04_deskewed", "05_deskewed_binary", "06_segmented"]
    guard([Path(where) / f"{n}.png" for n in names], force)
    for p in result.dump(where):
        log.info("wrote %s", p)


def _page(path, args):
    result = process_page(imaging.read_image(need_file(path)))
    _dump(result, args.dump_intermediate, args.force)
    return result


# ------------------------------------------------------------------ commands

def cmd_stats(args) -> int:
    path = need_file(args.manifest)
    manifest = dataset.load_manifest(path)
    report = dataset.audit(manifest, args.max_len, dataset.count_extension_rewrites(path))
    sys.stdout.write(report.to_text())
    if args.outdir:
        out = Path(args.outdir)
        targets = [out / "audit.txt", out / "audit.json", out / "token_lengths.png"]
        guard(targets, args.force)
        out.mkdir(parents=True, exist_ok=True)
        report.write(targets[0], targets[1])
        plotting.length_histogram([len(r.tokens) for r in manifest], targets[2], args.max_len)
    return 0


def cmd_preprocess(args) -> int:
    guard([args.out], args.force)
    result = _page(args.image, args)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    imaging.write_png(result.deskewed_binary, args.out)
    print(f"skew\t{result.angle:.2f}")
    print(f"wrote\t{args.out}")
    return 0


def cmd_segment(args) -> int:
    result = _page(args.image, args)
    out = Path(args.outdir)
    targets = [out / f"line_{i + 1:02d}.png" for i in range(len(result.bands))]
    guard(targets, args.force)
    out.mkdir(parents=True, exist_ok=True)
    print(f"skew\t{result.angle:.2f}")
    print("line\ttop\tbottom\tfile")
    for i, (band, crop, target) in enumerate(zip(result.bands, result.lines(), targets), 1):
        imaging.write_png(crop, target)
        print(f"{i}\t{band.top}\t{band.bottom}\t{target}")
    return 0


def _load_json(path) -> dict:
    try:
        data = json.loads(need_file(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CommandError(f"{path}: expected a JSON object")
    return data


def cmd_train(args) -> int:
    cfg = _load_json(args.config)
    net_cfg = dict(cfg.get("network", {}))
    try:
        train_cfg = TrainConfig(**cfg.get("training", {}))
    except TypeError as exc:
        raise CommandError(f"{args.config}: {exc}") from exc
    seed = resolve_seed(args.seed)
    if seed is not None:
        net_cfg["seed"] = seed
        train_cfg.seed = seed
    max_len = int(net_cfg.get("max_label_len", MAX_LABEL_LEN))

    manifest = dataset.clean(dataset.load_manifest(need_file(args.manifest)), max_len)
    val_manifest = (dataset.clean(dataset.load_manifest(need_file(args.val_manifest)), max_len)
                    if args.val_manifest else manifest)
    if len(manifest) == 0 or len(val_manifest) == 0:
        raise CommandError("no usable rows to train or validate on")
    vocab = build_vocabulary([r.tokens for r in manifest], load_display_map())
    net_cfg["num_classes"] = vocab.num_classes
    try:
        config = NetworkConfig.from_dict(net_cfg)
    except TypeError as exc:
        raise CommandError(f"{args.config}: {exc}") from exc
    net = Network(config)

    out = Path(args.outdir)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    log_path = Path(args.log) if args.log else out / "training_log.csv"
    figure = out / "loss_curves.png"
    guard([ckpt, log_path, figure], args.force)
    if args.force:
        for p in (ckpt, log_path):
            p.unlink(missing_ok=True)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    shape = dict(height=config.input_height, width=config.input_width, max_len=max_len)
    train_stream = dataset.BatchStream(manifest, vocab, train_cfg.batch_size, args.prefetch, **shape)
    val_stream = dataset.BatchStream(val_manifest, vocab, train_cfg.batch_size, args.prefetch, **shape)
    callbacks = [LearningRateScheduler(), ModelCheckpoint(ckpt, vocab), CSVLogger(log_path), EarlyStopping()]
    history = train(net, train_stream, val_stream, train_cfg, callbacks, vocab)
    if not history:
        print("epochs\t0")
        return 0
    plotting.loss_curves(history, figure)
    best = min(history, key=lambda r: r.val_loss)
    print(f"epochs\t{len(history)}")
    print(f"final_train_loss\t{history[-1].train_loss:.6f}")
    print(f"best_val_loss\t{best.val_loss:.6f}")
    print(f"best_epoch\t{best.epoch}")
    print(f"checkpoint\t{ckpt}")
    print(f"log\t{log_path}")
    return 0


def cmd_eval(args) -> int:
    net, vocab, meta = load_checkpoint(need_file(args.checkpoint))
    manifest = dataset.load_manifest(need_file(args.manifest))
    manifest = manifest.subset(r for r in manifest if r.tokens)
    if len(manifest) == 0:
        raise CommandError("manifest has no annotated rows")
    cfg = net.config
    stream = dataset.BatchStream(manifest, vocab, 16, height=cfg.input_height, width=cfg.input_width,
                                 max_len=max(MAX_LABEL_LEN, max(len(r.tokens) for r in manifest)))
    refs = {r.image_path: r.tokens for r in manifest}
    rows = []
    for batch in stream:
        for path, tokens in zip(batch.paths, recognize(net, vocab, batch.images, args.beam)):
            ref = refs[path]
            rows.append((path, to_display(ref, vocab), to_display(tokens, vocab),
                         levenshtein(list(ref), list(tokens))))
    if not rows:
        raise CommandError("no line image could be read")
    result = evaluate_pairs((r[1], r[2]) for r in rows)
    print(result.report())
    if args.outdir:
        out = Path(args.outdir)
        targets = [out / "eval.txt", out / "eval.json", out / "predictions.tsv", out / "line_errors.png"]
        guard(targets, args.force)
        out.mkdir(parents=True, exist_ok=True)
        targets[0].write_text(result.report() + "\n", encoding="utf-8")
        targets[1].write_text(json.dumps(result.as_dict(), indent=2) + "\n", encoding="utf-8")
        with targets[2].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t")
            w.writerow(["image", "reference", "prediction", "token_edit_distance"])
            w.writerows(rows)
        plotting.error_histogram([r[3] for r in rows], targets[3])
    return 0


def cmd_infer(args) -> int:
    net, vocab, _ = load_checkpoint(need_file(args.checkpoint))
    result = _page(args.image, args)
    cfg = net.config
    if not result.bands:
        return 0
    images = np.stack([imaging.resize_distortion_free(c, cfg.input_height, cfg.input_width)
                       for c in result.lines()])
    for tokens in recognize(net, vocab, images, args.beam):
        print(to_display(tokens, vocab))
    return 0


def cmd_synth(args) -> int:
    out = Path(args.outdir)
    guard([out / "manifest.csv", out / "pages.csv"], args.force)
    seed = resolve_seed(args.seed)
    manifest = synth.generate(args.count, out, seed=0 if seed is None else seed, width=args.width)
    print(f"lines\t{len(manifest)}")
    print(f"manifest\t{out / 'manifest.csv'}")
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (falls back to RASM_SEED)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    page = argparse.ArgumentParser(add_help=False)
    page.add_argument("image")
    page.add_argument("--dump-intermediate", metavar="DIR", default=None,
                      help="write every preprocessing stage as PNG into DIR")

    parser = argparse.ArgumentParser(prog="rasm", description="Offline handwritten Arabic line recognition.")
    parser.add_argument("--version", action="version", version=f"rasm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("stats", parents=[common], help="audit a transcription manifest")
    p.add_argument("manifest")
    p.add_argument("--outdir", default=None, help="also write audit.txt, audit.json and a histogram")
    p.add_argument("--max-len", type=int, default=MAX_LABEL_LEN)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("preprocess", parents=[common, page], help="filter, binarize and deskew a page")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("segment", parents=[common, page], help="cut a page into line images")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", parents=[common], help="train a recognizer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True, help="JSON with 'network' and 'training' objects")
    p.add_argument("--outdir", required=True)
    p.add_argument("--val-manifest", default=None, help="validation rows (default: the training rows)")
    p.add_argument("--checkpoint", default=None, help="checkpoint path (default OUTDIR/model.ckpt)")
    p.add_argument("--log", default=None, help="CSV log path (default OUTDIR/training_log.csv)")
    p.add_argument("--prefetch", type=int, default=2, help="batches prepared ahead (0 disables)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--outdir", default=None, help="also write eval.txt, eval.json, predictions and a figure")
    p.add_argument("--beam", type=int, default=0, help="beam width (0 for greedy)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common, page], help="transcribe every line of a page")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--beam", type=int, default=0, help="beam width (0 for greedy)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("synth", parents=[common], help="render synthetic lines with a manifest")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--width", type=int, default=256)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, RasmError, OSError, ValueError) as exc:
        print(f"rasm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
