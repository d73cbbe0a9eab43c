"""``owleyes`` command line: synth, train, eval, detect, localize, explore.

Exit codes: 0 ok, 2 usage, 3 IO, 4 format or validation, 5 numeric failure.
"""

import argparse
import json
import logging
import shlex
import subprocess
import sys
from pathlib import Path

import numpy as np

from owleyes import __version__
from owleyes.errors import OwlEyesError

log = logging.getLogger("owleyes")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4, 5


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _notify(cmd, path):
    """Run the user's delivery hook with the report path appended."""
    if not cmd:
        return
    argv = shlex.split(cmd) + [str(path)]
    res = subprocess.run(argv, check=False)
    if res.returncode != 0:
        log.warning("notify command exited with status %d", res.returncode)


def cmd_make_corpus(args):
    from owleyes.corpus import make_toy_corpus

    paths = make_toy_corpus(args.out, args.count, args.seed, args.width, args.height)
    print(f"wrote {len(paths)} screens to {args.out}")


def cmd_synth(args):
    from owleyes.synth import generate_dataset

    cats = [c.strip() for c in args.categories.split(",")] if args.categories else None
    m = generate_dataset(args.corpus, args.out, args.count, cats, master_seed=args.seed, workers=args.workers)
    filled = sum(m.header["filled"].values())
    print(f"wrote {len(m)} rows ({filled} bug, {len(m) - filled} clean) to {Path(args.out) / 'manifest.jsonl'}")


def cmd_train(args):
    from owleyes.checkpoint import save_checkpoint
    from owleyes.manifest import DatasetManifest
    from owleyes.model import TrainHyper, build_model, profile, train
    from owleyes.plotting import plot_training_history

    manifest = DatasetManifest.read(args.manifest)
    dtype = np.float64 if args.dtype == "float64" else np.float32
    model = build_model(profile(args.profile), args.seed, dtype)
    hyper = TrainHyper(epochs=args.epochs, batch_size=args.batch, lr=args.lr, momentum=args.momentum, seed=args.seed)

    def report(epoch, h):
        print(f"epoch {epoch:3d}  loss {h.loss[-1]:.4f}  acc {h.accuracy[-1]:.3f}", flush=True)
        return args.stop_at is not None and h.accuracy[-1] >= args.stop_at

    model, history = train(model, manifest, hyper, on_epoch=report)
    out = save_checkpoint(model, args.out)
    stem = out.with_suffix("")
    _write_json(history.to_dict(), f"{stem}.history.json")
    if len(history):
        plot_training_history(history, f"{stem}.history.png")
    print(f"saved checkpoint {out}")


def cmd_eval(args):
    from owleyes.checkpoint import load_checkpoint
    from owleyes.manifest import DatasetManifest
    from owleyes.model import evaluate

    metrics = evaluate(load_checkpoint(args.model), DatasetManifest.read(args.manifest))
    _write_json(metrics.to_dict(), args.json)


def cmd_detect(args):
    from owleyes.plotting import plot_detection_summary
    from owleyes.report import emit_report_html, emit_report_json, report_json, run_detect_batch

    doc = run_detect_batch(args.model, args.input, args.threshold, args.overlays is not None, args.overlays)
    written = []
    if args.json:
        written.append(emit_report_json(doc, args.json))
        plot_detection_summary(doc, Path(args.json).with_suffix("").as_posix() + "_probabilities.png")
    if args.html:
        written.append(emit_report_html(doc, args.html))
    if not written:
        sys.stdout.write(report_json(doc))
    for s in doc.skipped:
        log.warning("skipped %s (%s)", s["path"], s["reason"])
    print(f"{doc.num_issues} issues in {doc.num_screens} screens", file=sys.stderr)
    for path in written:
        _notify(args.notify_cmd, path)


def cmd_localize(args):
    from owleyes.checkpoint import load_checkpoint
    from owleyes.imaging import load_image, save_png
    from owleyes.localize import grad_cam, heatmap_to_region, render_overlay
    from owleyes.model import predict

    model = load_checkpoint(args.model)
    img = load_image(args.image)
    verdict = predict(model, img)
    hm = grad_cam(model, img, args.target)
    save_png(render_overlay(img, hm, args.alpha), args.out)
    if args.heatmap:
        hm.dump(args.heatmap)
    _write_json({
        "image": Path(args.image).as_posix(),
        "verdict": "bug" if verdict.is_bug else "clean",
        "bug_probability": round(verdict.bug_probability, 6),
        "region": heatmap_to_region(hm, args.threshold).to_list(),
        "zero_saliency": hm.zero_saliency,
        "overlay_path": Path(args.out).as_posix(),
    }, None)


def cmd_explore(args):
    from owleyes.explorer import explore, load_app_graph

    g = load_app_graph(Path(args.graph).read_text(encoding="utf-8"))
    trace = explore(g, args.strategy, args.budget, args.seed)
    d = trace.to_dict()
    d["screenshots"] = [g.screens[s].screenshot for s in trace.visited]
    d["hierarchies"] = [g.screens[s].hierarchy for s in trace.visited]
    _write_json(d, args.out)


def _unit_interval(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return v


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="owleyes", description="Detect and localize UI display issues in screenshots.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-corpus", help="draw a toy screenshot corpus with view hierarchies")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=_positive_int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=_positive_int, default=128)
    s.add_argument("--height", type=_positive_int, default=192)
    s.set_defaults(func=cmd_make_corpus)

    s = sub.add_parser("synth", help="generate a labelled issue dataset from a clean corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=_positive_int, required=True, help="number of bug samples (as many clean are added)")
    s.add_argument("--categories", help="comma-separated subset, default all five")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=None, help="process count (default OWLEYES_THREADS or CPU count)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a detector on a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--profile", choices=["canonical", "desk"], default="desk")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--batch", type=_positive_int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    s.add_argument("--stop-at", type=_unit_interval, default=None, help="stop once train accuracy reaches this")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="precision, recall and F1 on a manifest")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--json", help="write metrics here instead of stdout")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("detect", help="classify a folder of screenshots and write a report")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--json")
    s.add_argument("--html")
    s.add_argument("--overlays", metavar="DIR", help="write heatmap overlays for issues into DIR")
    s.add_argument("--threshold", type=_unit_interval, default=0.5, help="heatmap level bounding the region")
    s.add_argument("--notify-cmd", help="command run with each written report path appended")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("localize", help="Grad-CAM overlay for one screenshot")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True, help="overlay PNG path")
    s.add_argument("--threshold", type=_unit_interval, default=0.5)
    s.add_argument("--target", type=int, choices=[0, 1], default=1)
    s.add_argument("--alpha", type=float, default=0.4)
    s.add_argument("--heatmap", help="also dump the heatmap as JSON here")
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("explore", help="traverse a simulated app screen graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--strategy", choices=["dfs", "bfs", "random"], default="dfs")
    s.add_argument("--budget", type=_positive_int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_explore)
    return p


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, OwlEyesError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, ArithmeticError):
        return EXIT_NUMERIC
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return EXIT_FORMAT
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        code = exit_code_for(exc)
        if code == 1:
            raise
        print(f"owleyes: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
