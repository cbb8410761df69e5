"""Command-line entry point.

Exit codes: 0 ok, 1 usage error, 2 data or format error, 3 acceptance
check failed.
"""

from __future__ import annotations

import json
import logging
import os
import sys

import click

from . import cost, metrics, synth
from . import graph as G
from . import pipeline as P
from .imageio import ImageFormatError, read_image, write_image
from .train import TrainConfig, init_weights, train
from .weights import WeightFormatError, read_weights, write_weights

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
DATA_ERRORS = (WeightFormatError, ImageFormatError, G.GraphError, G.WeightError, P.StageError,
               OSError, ValueError, KeyError, json.JSONDecodeError)


class CheckFailed(click.ClickException):
    exit_code = EXIT_CHECK


def _emit(text, out):
    if out:
        with open(out, "w") as f:
            f.write(text if text.endswith("\n") else text + "\n")
    else:
        click.echo(text)


def _load_model(model, weights_path):
    g = G.build_model(model)
    return g, read_weights(weights_path)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Weld radiograph sign recognition: cost analysis, training, inference, evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--model", type=click.Choice(sorted(G.MODELS)), required=True)
@click.option("--input", "input_size", type=int, default=None, help="Square input side (default per model).")
@click.option("--json", "as_json", is_flag=True, help="Full JSON report.")
@click.option("--table", is_flag=True, help="Per-layer TSV table.")
@click.option("--check", type=click.Choice(["paper"]), default=None,
              help="Compare totals with the published figures; exit 3 on mismatch.")
@click.option("--count-cheap-ops", is_flag=True, help="Also count BN, pooling and activation FLOPs.")
@click.option("--plot", type=click.Path(dir_okay=False), default=None, help="Write a per-layer cost PNG.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def analyze(model, input_size, as_json, table, check, count_cheap_ops, plot, out):
    """Static Params / FLOPs / Madds / size report."""
    g = G.build_model(model)
    shape = (input_size, input_size, 3) if input_size else None
    report = cost.analyze(g, shape, count_cheap_ops=count_cheap_ops)
    payload = report.to_dict()
    rows, ok = [], True
    if check:
        ref = cost.PAPER_REFERENCE.get(model)
        if ref is None:
            raise click.UsageError(f"no published reference for {model}")
        rows, ok = cost.compare_to_reference(report, ref)
        payload["check"] = {"passed": ok, "rows": [r.__dict__ for r in rows]}
    if as_json:
        text = json.dumps(payload, indent=2)
    else:
        parts = [cost.format_table(report)] if table else []
        parts.append(cost.format_summary(report))
        for r in rows:
            parts.append(f"check\t{r.metric}\t{r.value:.6g}\texpected {r.expected:.6g} {r.tolerance}\t"
                         f"rel_err {r.rel_error:.2%}\t{'PASS' if r.passed else 'FAIL'}")
        text = "\n".join(parts)
    _emit(text, out)
    if plot:
        from .plotting import cost_figure
        cost_figure(report, plot)
    if not ok:
        raise CheckFailed("published-figure check failed")


@cli.command("init-weights")
@click.option("--model", type=click.Choice(sorted(G.MODELS)), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def init_weights_cmd(model, seed, out):
    """Write deterministic randomly initialized weights for a model."""
    g = G.build_model(model)
    write_weights(out, init_weights(g, seed))


@cli.command("synth")
@click.argument("kind", type=click.Choice(["orientation", "scenes", "pipeline"]))
@click.option("--n", "count", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--start", type=int, default=0, help="First sample index (orientation).")
@click.option("--rotation", type=click.IntRange(0, 3), default=None,
              help="Quarter turns clockwise for pipeline images (default: index % 4).")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def synth_cmd(kind, count, seed, start, rotation, out):
    """Generate a synthetic dataset directory."""
    if count < 1:
        raise click.UsageError("--n must be >= 1")
    if kind == "orientation":
        synth.write_orientation_dataset(synth.gen_orientation_dataset(count, seed, start=start), out)
    elif kind == "scenes":
        synth.write_scene_dataset(synth.gen_scene_dataset(count, seed), out)
    else:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "labels.jsonl"), "w") as f:
            for i in range(start, start + count):
                label = i % 4 if rotation is None else rotation
                rel = f"mark_{i:06d}.pgm"
                write_image(os.path.join(out, rel), synth.pipeline_image(seed, i, label))
                f.write(json.dumps({"image": rel, "label": label}) + "\n")
    click.echo(f"wrote {count} {kind} samples to {out}")


@cli.command("train-cls")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--val", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--model", type=click.Choice(["grnet", "grnet-mini"]), default="grnet-mini", show_default=True)
@click.option("--epochs", type=int, default=80, show_default=True)
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--batch", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--micro-batch", type=int, default=None,
              help="Accumulate gradients over chunks of this size to bound memory.")
@click.option("--label-smoothing", type=float, default=0.1, show_default=True)
@click.option("--stop-at", type=float, default=None, help="Stop once validation accuracy reaches this.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Weight file to write.")
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None, help="JSON training log.")
@click.option("--plot", type=click.Path(dir_okay=False), default=None, help="Training-curve PNG.")
def train_cls(data, val, model, epochs, lr, batch, seed, micro_batch, label_smoothing, stop_at, out, log_path,
              plot):
    """Train the orientation classifier."""
    try:
        cfg = TrainConfig(lr0=lr, epochs=epochs, batch_size=batch, seed=seed,
                          label_smoothing=label_smoothing, stop_at_accuracy=stop_at, micro_batch=micro_batch)
    except ValueError as e:
        raise click.UsageError(str(e))
    g = G.build_model(model)
    train_data = synth.read_orientation_dataset(data)
    val_data = synth.read_orientation_dataset(val) if val else None
    weights, history = train(g, train_data, cfg, val_data,
                             on_epoch=lambda e: click.echo(json.dumps(e), err=True))
    write_weights(out, weights)
    log = {"model": model, "config": cfg.to_dict(), "epochs": history,
           "final": history[-1], "best": max(e.get("val_accuracy", e["train_accuracy"]) for e in history)}
    if log_path:
        with open(log_path, "w") as f:
            json.dump(log, f, indent=2)
    if plot:
        from .plotting import training_figure
        training_figure(history, plot)
    click.echo(json.dumps(log["final"]))


@cli.command()
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", type=click.Choice(["grnet", "grnet-mini"]), default="grnet-mini", show_default=True)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.argument("images", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
def classify(weights, model, config, images):
    """Orientation class per image (JSON lines)."""
    cfg = P.load_config(config)
    g, w = _load_model(model, weights)
    for path in images:
        cls, conf, _ = P.classify_orientation(read_image(path), g, w, cfg)
        click.echo(json.dumps({"image": path, "class": cls, "confidence": conf, "rotation": 90 * cls}))


@cli.command()
@click.option("--weights", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", type=click.Choice([m for m in G.MODELS if m.startswith("gynet")]), default="gynet",
              show_default=True)
@click.option("--conf", type=float, default=None, help="Confidence threshold (default from config).")
@click.option("--iou", type=float, default=None, help="NMS IoU threshold (default from config).")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.argument("images", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
def recognize(weights, model, conf, iou, config, out, images):
    """Detections per image as JSON lines."""
    cfg = P.load_config(config, conf_threshold=conf, nms_iou=iou)
    names = P.load_class_names()
    g, w = _load_model(model, weights)
    lines = []
    for path in images:
        name = os.path.splitext(os.path.basename(path))[0]
        dets, _ = P.recognize(read_image(path), g, w, cfg, name)
        lines.extend(json.dumps(d.to_json(names)) for d in dets)
    _emit("\n".join(lines), out)


@cli.command("pipeline")
@click.option("--cls-weights", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--det-weights", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--cls-model", type=click.Choice(["grnet", "grnet-mini"]), default="grnet-mini", show_default=True)
@click.option("--det-model", type=click.Choice([m for m in G.MODELS if m.startswith("gynet")]), default="gynet",
              show_default=True)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--json", "as_json", is_flag=True, help="Pretty-print (one object per image otherwise).")
@click.option("--no-timings", is_flag=True, help="Omit stage timings (byte-identical reruns).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.argument("images", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
def pipeline_cmd(cls_weights, det_weights, cls_model, det_model, config, as_json, no_timings, out, images):
    """Classify orientation, redirect, then detect signs."""
    cfg = P.load_config(config)
    names = P.load_class_names()
    try:
        cls_m = _load_model(cls_model, cls_weights)
    except WeightFormatError as e:
        raise P.StageError("load classifier weights", e) from e
    try:
        det_m = _load_model(det_model, det_weights)
    except WeightFormatError as e:
        raise P.StageError("load detector weights", e) from e
    results = [P.run_pipeline(path, cls_m, det_m, cfg).to_dict(names, timings=not no_timings)
               for path in images]
    if as_json:
        text = json.dumps(results[0] if len(results) == 1 else results, indent=2)
    else:
        text = "\n".join(json.dumps(r) for r in results)
    _emit(text, out)


@cli.command("eval")
@click.option("--pred", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--gt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--iou", type=float, default=metrics.IOU_THRESHOLD, show_default=True)
@click.option("--plot", type=click.Path(dir_okay=False), default=None, help="PR-curve PNG.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def eval_cmd(pred, gt, iou, plot, out):
    """Precision, recall, per-class AP and mAP of a detection file."""
    if not 0 < iou <= 1:
        raise click.UsageError("--iou must be in (0, 1]")
    with open(pred) as f:
        dets = metrics.read_detections(f)
    with open(gt) as f:
        gts = metrics.read_ground_truth(f)
    report, curves = metrics.evaluate(dets, gts, iou)
    _emit(json.dumps(report, indent=2), out)
    if plot:
        from .plotting import pr_figure
        pr_figure(curves, plot, P.load_class_names())


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="weldsign", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except CheckFailed as e:
        click.echo(f"error: {e.message}", err=True)
        return EXIT_CHECK
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_DATA
    except DATA_ERRORS as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
