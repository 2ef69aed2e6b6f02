"""Operator command line: every workflow as a subcommand.

Configuration sources, highest priority first: explicit flags, environment
variables prefixed RIDER_SCOPE_, the TOML file given via --config (one
section per subcommand), built-in defaults. Exit codes: 0 success, 1 usage
error, 2 runtime error (with a machine-readable summary on stderr).
"""

from __future__ import annotations

import json
import socket
import sys
import urllib.error
import urllib.request
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .backbones import MobileNetV2Backbone, SyntheticBackbone, load_synthetic_backbone
from .classifier import DEFAULT_THRESHOLD, RiderClassifier, init_head, load_head, save_head
from .dataset import (
    SegmentStore,
    build_manifest,
    harvest_segments,
    import_web_images,
    read_manifest,
    training_set_from_records,
    write_manifest,
)
from .detector import DetectorConfig, load_detector
from .errors import RiderScopeError
from .imaging import load_frame
from .labels import CLASS_LABELS
from .metrics import evaluate_detections, format_report, read_ground_truth, read_predictions
from .pipeline import AnnotatedImageSink, JsonlPredictionSink, process_sequence
from .trainer import RiderModel, TrainConfig, train_two_phase

_FRAME_SUFFIXES = (".png", ".jpg", ".jpeg")


def _normalize_section(command: click.Command, section: dict) -> dict:
    """Map flag-style TOML keys (confidence_threshold) onto parameter names."""
    alias = {}
    for parameter in command.params:
        for opt in parameter.opts:
            if opt.startswith("--"):
                alias[opt[2:].replace("-", "_")] = parameter.name
    return {alias.get(key, key): value for key, value in section.items()}


def _load_config_file(ctx: click.Context, param: click.Parameter, value: str | None):
    if value is None:
        return None
    path = Path(value)
    if not path.exists():
        raise click.UsageError(f"config file not found: {path}")
    with path.open("rb") as fh:
        data = tomllib.load(fh)
    default_map = {}
    for key, section in data.items():
        if isinstance(section, dict) and key in cli.commands:
            default_map[key] = _normalize_section(cli.commands[key], section)
        else:
            default_map[key] = section
    ctx.default_map = default_map
    return value


@click.group()
@click.option("--config", type=str, default=None, callback=_load_config_file, is_eager=True,
              expose_value=False, help="TOML config file, one section per subcommand.")
@click.option("--seed", type=int, default=0, show_default=True, help="Single source of all randomness.")
@click.pass_context
def cli(ctx: click.Context, seed: int) -> None:
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed


def _iter_frames(input_dir: Path):
    files = sorted(p for p in input_dir.rglob("*") if p.suffix.lower() in _FRAME_SUFFIXES)
    for path in files:
        rel = path.relative_to(input_dir).with_suffix("")
        yield load_frame(path, frame_id=rel.as_posix())


def _interaction_from_path(frame_id: str) -> str:
    return frame_id.split("/", 1)[0]


def _detector_options(fn):
    fn = click.option("--backend", type=click.Choice(["replay", "pretrained_yolo"]),
                      default="replay", show_default=True)(fn)
    fn = click.option("--replay", "replay_path", type=str, default=None,
                      help="Replay manifest (JSON Lines) for the replay backend.")(fn)
    fn = click.option("--weights", "weights_path", type=str, default=None,
                      help="Darknet .weights file for the pretrained backend.")(fn)
    fn = click.option("--net-config", "net_config_path", type=str, default=None,
                      help="Darknet .cfg file (defaults to the weights path with .cfg).")(fn)
    fn = click.option("--confidence-threshold", type=float, default=0.5, show_default=True)(fn)
    fn = click.option("--nms-threshold", type=float, default=0.45, show_default=True)(fn)
    return fn


def _classifier_options(fn):
    fn = click.option("--backbone", type=click.Choice(["synthetic", "mobilenet_v2"]),
                      default="synthetic", show_default=True)(fn)
    fn = click.option("--backbone-weights", type=str, default=None,
                      help="State-dict file for the mobilenet_v2 backbone.")(fn)
    fn = click.option("--backbone-checkpoint", type=str, default=None,
                      help="Saved synthetic backbone (.npz).")(fn)
    fn = click.option("--backbone-layers", type=int, default=154, show_default=True,
                      help="Trainable layer count of the synthetic backbone.")(fn)
    fn = click.option("--head", "head_path", type=str, default=None,
                      help="Head checkpoint JSON; a seeded fresh head is used when omitted.")(fn)
    fn = click.option("--threshold", type=float, default=DEFAULT_THRESHOLD, show_default=True,
                      help="Rider decision threshold on the classifier score.")(fn)
    return fn


def _build_detector(backend, replay_path, weights_path, net_config_path,
                    confidence_threshold, nms_threshold):
    config = DetectorConfig(
        backend_kind=backend,
        weights_path=weights_path,
        config_path=net_config_path,
        replay_path=replay_path,
        confidence_threshold=confidence_threshold,
        nms_threshold=nms_threshold,
    )
    return load_detector(config)


def _build_backbone(backbone, backbone_weights, backbone_checkpoint, backbone_layers, seed):
    if backbone == "mobilenet_v2":
        if not backbone_weights:
            raise click.UsageError("--backbone mobilenet_v2 needs --backbone-weights")
        return MobileNetV2Backbone(backbone_weights)
    if backbone_checkpoint:
        return load_synthetic_backbone(backbone_checkpoint)
    return SyntheticBackbone(num_layers=backbone_layers, seed=seed)


def _build_classifier(backbone, backbone_weights, backbone_checkpoint, backbone_layers,
                      head_path, threshold, seed):
    net = _build_backbone(backbone, backbone_weights, backbone_checkpoint, backbone_layers, seed)
    head = load_head(head_path) if head_path else init_head(seed=seed)
    return RiderClassifier(net, head, threshold=threshold)


def _write_run_config(output_dir: Path, command: str, params: dict) -> None:
    doc = {"schema_version": 1, "command": command, "config": params}
    (output_dir / "run_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


@cli.command()
@click.option("--input", "input_dir", type=str, required=True, help="Directory of frame images.")
@click.option("--output", "output_dir", type=str, required=True)
@click.option("--save-images/--no-save-images", default=True, show_default=True,
              help="Write annotated PNGs next to the predictions file.")
@_detector_options
@_classifier_options
@click.pass_context
def detect(ctx, input_dir, output_dir, save_images, backend, replay_path, weights_path,
           net_config_path, confidence_threshold, nms_threshold, backbone, backbone_weights,
           backbone_checkpoint, backbone_layers, head_path, threshold) -> None:
    """Run the two-stage pipeline over frames; write predictions and images."""
    seed = ctx.obj["seed"]
    input_path = Path(input_dir)
    if not input_path.is_dir():
        raise click.UsageError(f"input directory not found: {input_path}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    detector = _build_detector(backend, replay_path, weights_path, net_config_path,
                               confidence_threshold, nms_threshold)
    classifier = _build_classifier(backbone, backbone_weights, backbone_checkpoint,
                                   backbone_layers, head_path, threshold, seed)

    sinks = [JsonlPredictionSink(out / "predictions.jsonl")]
    if save_images:
        sinks.append(AnnotatedImageSink(out / "annotated"))

    def fan_out(frame, annotated):
        for sink in sinks:
            sink(frame, annotated)

    summary = process_sequence(_iter_frames(input_path), detector, classifier, sink=fan_out)
    sinks[0].close()
    _write_run_config(out, "detect", {
        "input": str(input_path), "backend": backend, "replay": replay_path,
        "weights": weights_path, "confidence_threshold": confidence_threshold,
        "nms_threshold": nms_threshold, "backbone": backbone, "threshold": threshold,
        "seed": seed,
    })
    click.echo(json.dumps({
        "frames_processed": summary.frames_processed,
        "frames_failed": summary.frames_failed,
        "annotations": summary.annotations_total,
        "dropped_regions": summary.dropped_regions,
        "output": str(out),
    }))
    if summary.frames_failed:
        raise RiderScopeError(f"{summary.frames_failed} frame(s) failed: {summary.errors[:5]}")


@cli.command()
@click.option("--input", "input_dir", type=str, required=True, help="Directory of frame images.")
@click.option("--store", "store_dir", type=str, required=True, help="Segment store directory.")
@click.option("--suggest-with-head", "suggest_head", type=str, default=None,
              help="Optional head checkpoint; scores pending crops for triage ordering.")
@_detector_options
@click.option("--backbone-layers", type=int, default=154, show_default=True)
@click.pass_context
def harvest(ctx, input_dir, store_dir, suggest_head, backend, replay_path, weights_path,
            net_config_path, confidence_threshold, nms_threshold, backbone_layers) -> None:
    """Stage unlabeled person crops from frames into the segment store."""
    seed = ctx.obj["seed"]
    input_path = Path(input_dir)
    if not input_path.is_dir():
        raise click.UsageError(f"input directory not found: {input_path}")
    detector = _build_detector(backend, replay_path, weights_path, net_config_path,
                               confidence_threshold, nms_threshold)
    classifier = None
    if suggest_head:
        classifier = RiderClassifier(SyntheticBackbone(num_layers=backbone_layers, seed=seed),
                                     load_head(suggest_head))
    store = SegmentStore(store_dir)
    summary = harvest_segments(_iter_frames(input_path), detector, store,
                               interaction_for=_interaction_from_path, classifier=classifier)
    click.echo(json.dumps({
        "frames": summary.frames, "staged": summary.staged, "duplicates": summary.duplicates,
        "dropped_regions": summary.dropped_regions, "detector_errors": summary.detector_errors,
    }))


@cli.command("import-web")
@click.option("--input", "input_dir", type=str, required=True)
@click.option("--label", type=click.Choice(CLASS_LABELS), required=True)
@click.option("--store", "store_dir", type=str, required=True)
@click.option("--imported-by", type=str, default="web_import", show_default=True)
def import_web(input_dir, label, store_dir, imported_by) -> None:
    """Import a directory of pre-labeled images (deduplicated by content)."""
    store = SegmentStore(store_dir)
    count = import_web_images(input_dir, label, store, imported_by=imported_by)
    click.echo(json.dumps({"imported": count}))


@cli.command("build-manifest")
@click.option("--store", "store_dir", type=str, required=True)
@click.option("--output", "output_path", type=str, default=None,
              help="Manifest path (default: <store>/manifest.jsonl).")
@click.option("--balance/--no-balance", default=True, show_default=True)
@click.option("--train-fraction", type=float, default=0.85, show_default=True)
@click.pass_context
def build_manifest_cmd(ctx, store_dir, output_path, balance, train_fraction) -> None:
    """Balance the labeled store and split it into train/test by interaction."""
    seed = ctx.obj["seed"]
    store = SegmentStore(store_dir)
    manifest = build_manifest(store, balance=balance, train_fraction=train_fraction, seed=seed)
    path = Path(output_path) if output_path else store.root / "manifest.jsonl"
    write_manifest(manifest, path)
    meta = {
        "schema_version": 1,
        "records": len(manifest.records),
        "counts": manifest.counts,
        "config": {"balance": balance, "train_fraction": train_fraction, "seed": seed},
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    click.echo(json.dumps({"manifest": str(path), "records": len(manifest.records),
                           "counts": manifest.counts}))


@cli.command()
@click.option("--manifest", "manifest_path", type=str, required=True)
@click.option("--store", "store_dir", type=str, default=None,
              help="Store root holding the crop files (default: manifest directory).")
@click.option("--output", "output_dir", type=str, required=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--frozen-epochs", type=int, default=10, show_default=True)
@click.option("--finetune-epochs", type=int, default=15, show_default=True)
@click.option("--lr-frozen", type=float, default=1e-4, show_default=True)
@click.option("--lr-finetune", type=float, default=1e-5, show_default=True)
@click.option("--unfreeze-from-layer", type=int, default=100, show_default=True)
@click.option("--dropout-rate", type=float, default=0.3, show_default=True)
@click.option("--backbone-layers", type=int, default=154, show_default=True)
@click.pass_context
def train(ctx, manifest_path, store_dir, output_dir, batch_size, frozen_epochs, finetune_epochs,
          lr_frozen, lr_finetune, unfreeze_from_layer, dropout_rate, backbone_layers) -> None:
    """Run the two-phase protocol on a manifest; write report and checkpoints."""
    seed = ctx.obj["seed"]
    manifest_file = Path(manifest_path)
    manifest = read_manifest(manifest_file)
    store_root = Path(store_dir) if store_dir else manifest_file.parent
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    config = TrainConfig(
        batch_size=batch_size, frozen_epochs=frozen_epochs, finetune_epochs=finetune_epochs,
        lr_frozen=lr_frozen, lr_finetune=lr_finetune, unfreeze_from_layer=unfreeze_from_layer,
        dropout_rate=dropout_rate, seed=seed,
    )
    train_records = manifest.split_records("train")
    test_records = manifest.split_records("test")
    train_set = training_set_from_records(train_records, store_root)
    test_set = training_set_from_records(test_records, store_root) if test_records else None

    backbone = SyntheticBackbone(num_layers=backbone_layers, seed=seed)
    model = RiderModel(backbone=backbone, head=init_head(seed=seed, dropout_rate=dropout_rate))
    report = train_two_phase(model, train_set, config, test_set)

    head_path = out / "head_final.json"
    save_head(model.head, head_path)
    backbone_path = out / "backbone_final.npz"
    backbone.save(backbone_path)
    report.head_checkpoint = str(head_path)
    report.backbone_checkpoint = str(backbone_path)
    (out / "train_report.json").write_text(json.dumps(report.to_json_dict(), indent=2))
    _write_run_config(out, "train", config.to_json_dict())
    last = report.phases[-1].epochs[-1] if report.phases[-1].epochs else None
    click.echo(json.dumps({
        "epochs_recorded": report.epochs_recorded,
        "final_test_accuracy": last.test_accuracy if last else None,
        "head_checkpoint": str(head_path),
    }))


@cli.command("eval")
@click.option("--predictions", "predictions_path", type=str, required=True)
@click.option("--ground-truth", "ground_truth_path", type=str, required=True)
@click.option("--output", "output_path", type=str, default=None, help="Report JSON path.")
@click.option("--iou-threshold", type=float, default=0.5, show_default=True)
def eval_cmd(predictions_path, ground_truth_path, output_path, iou_threshold) -> None:
    """Score a prediction file against ground truth (classifier + pipeline views)."""
    predictions = read_predictions(predictions_path)
    ground_truth = read_ground_truth(ground_truth_path)
    report = evaluate_detections(predictions, ground_truth, iou_threshold=iou_threshold)
    report.config = {"predictions": str(predictions_path), "ground_truth": str(ground_truth_path),
                     "iou_threshold": iou_threshold}
    click.echo(format_report(report))
    if output_path:
        Path(output_path).write_text(json.dumps(report.to_json_dict(), indent=2))


@cli.command()
@click.option("--store", "store_dir", type=str, required=True)
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--lease-seconds", type=float, default=300.0, show_default=True)
@click.option("--queue-order", type=click.Choice(["confident", "uncertain"]),
              default="confident", show_default=True)
@click.option("--ui-dist", type=str, default=None, help="Built triage UI to host at /.")
def serve(store_dir, host, port, lease_seconds, queue_order, ui_dist) -> None:
    """Start the labeling service (and triage UI, when a bundle is given)."""
    import uvicorn

    from .service import ServiceSettings, create_app

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as exc:
        raise RiderScopeError(f"cannot bind {host}:{port}: {exc}") from exc
    finally:
        probe.close()

    store = SegmentStore(store_dir)
    default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    ui_path = Path(ui_dist) if ui_dist else (default_ui if default_ui.is_dir() else None)
    settings = ServiceSettings(lease_seconds=lease_seconds, queue_order=queue_order, ui_dist=ui_path)
    app = create_app(store, settings)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def _http_json(method: str, url: str, payload: dict | None = None) -> dict:
    data = json.dumps(payload).encode("utf-8") if payload is not None else None
    request = urllib.request.Request(url, data=data, method=method,
                                     headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(request, timeout=30) as response:
            return json.loads(response.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        raise RiderScopeError(f"{method} {url} -> HTTP {exc.code}: {exc.read().decode('utf-8', 'replace')}") from exc
    except OSError as exc:
        raise RiderScopeError(f"cannot reach service at {url}: {exc}") from exc


@cli.command()
@click.option("--url", type=str, default="http://127.0.0.1:8321", show_default=True)
def stats(url) -> None:
    """Thin client: print the labeling service's progress stats."""
    click.echo(json.dumps(_http_json("GET", f"{url.rstrip('/')}/api/stats"), indent=2))


@cli.command("label")
@click.argument("segment_id")
@click.argument("label", type=click.Choice(CLASS_LABELS))
@click.option("--url", type=str, default="http://127.0.0.1:8321", show_default=True)
@click.option("--reviewer", type=str, default="cli", show_default=True)
def label_cmd(segment_id, label, url, reviewer) -> None:
    """Thin client: commit one label decision through the service."""
    payload = {"segment_id": segment_id, "label": label, "reviewer": reviewer}
    click.echo(json.dumps(_http_json("POST", f"{url.rstrip('/')}/api/labels", payload)))


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False, auto_envvar_prefix="RIDER_SCOPE",
                 obj={})
        return 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except RiderScopeError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "OSError", "message": str(exc)}) + "\n")
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
