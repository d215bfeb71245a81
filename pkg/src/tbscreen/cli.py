"""Command-line entry point tying the pipeline together.

Commands: ingest, split, train, eval, cam, baseline, compare, serve,
report. Every command writes its artifacts under --out-dir, funnels all
randomness through --seed, and exits 0 on success, 1 on runtime failure
(with a single `error: ...` line on stderr), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__


def _add_out_dir(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", default=".", help="directory for artifacts (created if missing)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tbscreen", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tbscreen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a labeled image folder into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--layout", choices=["subdirs", "shenzhen", "csv"], default="subdirs")
    p.add_argument("--labels-file", default=None, help="sidecar CSV for --layout csv")
    p.add_argument("--source", choices=["indian", "shenzhen", "other"], default="other")
    _add_out_dir(p)

    p = sub.add_parser("split", help="stratified train/val/test split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="0.5,0.25,0.25")
    p.add_argument("--seed", type=int, default=0)
    _add_out_dir(p)

    p = sub.add_parser("train", help="fine-tune a backbone on the train split")
    p.add_argument("--backbone", required=True, choices=["alexnet", "googlenet", "resnet18", "resnet50", "resnet101"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--pretrained", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--learning-rate", type=float, default=0.0001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--freeze-policy", choices=["none", "backbone_frozen"], default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mirror-prob", type=float, default=0.5)
    p.add_argument("--max-translate", type=int, default=30)
    p.add_argument("--checkpoint-policy", choices=["all", "best"], default="all")
    _add_out_dir(p)

    p = sub.add_parser("eval", help="metrics/ROC/AUC from a scores CSV or a checkpoint")
    p.add_argument("--scores", help="CSV with id,label,tb_score")
    p.add_argument("--checkpoint", help="score a split with this checkpoint instead")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--split-name", default="test", choices=["train", "val", "test"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--name", default="model", help="label used in report/figure outputs")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    _add_out_dir(p)

    p = sub.add_parser("cam", help="heatmap overlays for images through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--mode", choices=["strongest_channel", "class_weighted"], default="strongest_channel")
    p.add_argument("--alpha", type=float, default=0.5)
    _add_out_dir(p)

    p = sub.add_parser("baseline", help="fixed-feature + linear classifier comparison arm")
    p.add_argument("--backbone", required=True, choices=["alexnet", "googlenet", "resnet18", "resnet50", "resnet101"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", help="reuse a checkpoint as the extractor (else pretrained weights)")
    p.add_argument("--reg-strength", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    _add_out_dir(p)

    p = sub.add_parser("compare", help="join end-to-end and baseline reports into one table")
    p.add_argument("--end-to-end", nargs="+", required=True, help="report JSON files, name=path or path")
    p.add_argument("--baseline", nargs="+", required=True)
    _add_out_dir(p)

    p = sub.add_parser("serve", help="run the screening HTTP service")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--ui-dir", default=None)

    p = sub.add_parser("report", help="render figures + tables from eval/train artifacts")
    p.add_argument("--eval", nargs="+", default=[], help="eval report JSON files, name=path or path")
    p.add_argument("--run-dir", nargs="+", default=[], help="training run directories")
    _add_out_dir(p)

    return parser


def _outdir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _named_paths(items: list[str]) -> dict[str, Path]:
    named = {}
    for item in items:
        if "=" in item:
            name, _, path = item.partition("=")
        else:
            path = item
            name = Path(item).stem
        named[name] = Path(path)
    return named


def cmd_ingest(args) -> int:
    from .data import scan_dataset

    out = _outdir(args)
    result = scan_dataset(args.root, layout=args.layout, source=args.source, labels_file=args.labels_file)
    result.manifest.write_jsonl(out / "manifest.jsonl")
    result.write_report(out / "scan_report.json")
    counts = result.manifest.class_counts
    print(
        f"manifest: {len(result.manifest.records)} records {counts}; "
        f"{len(result.undecodable)} undecodable, {len(result.unlabeled)} unlabeled "
        f"-> {out / 'manifest.jsonl'}"
    )
    return 0


def cmd_split(args) -> int:
    from .data import DatasetManifest, stratified_split

    out = _outdir(args)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    manifest = DatasetManifest.read_jsonl(args.manifest)
    assignment = stratified_split(manifest, ratios=ratios, seed=args.seed)
    assignment.write_json(out / "split.json")
    sizes = {name: len(assignment.ids_for(name)) for name in ("train", "val", "test")}
    print(f"split: {sizes} (seed {args.seed}) -> {out / 'split.json'}")
    return 0


def cmd_train(args) -> int:
    from .data import AugmentationConfig, DatasetManifest, SplitAssignment
    from .models import build_classifier
    from .training import TrainConfig, train

    out = _outdir(args)
    manifest = DatasetManifest.read_jsonl(args.manifest)
    split = SplitAssignment.read_json(args.split)
    config = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        seed=args.seed,
        freeze_policy=args.freeze_policy,
    )
    aug = AugmentationConfig(
        horizontal_mirror_prob=args.mirror_prob, max_translate_px=args.max_translate, seed=args.seed
    )
    model = build_classifier(args.backbone, pretrained=args.pretrained, head_seed=args.seed)
    run = train(
        model, manifest, split, config, aug, run_dir=out, checkpoint_policy=args.checkpoint_policy
    )
    print(
        f"trained {args.backbone} for {config.epochs} epochs; "
        f"best epoch {run.best_epoch} val_accuracy {run.best_val_accuracy} -> {out}"
    )
    return 0


def cmd_eval(args) -> int:
    from . import metrics as M

    out = _outdir(args)
    extra = {}
    if args.scores:
        ids, labels, scores = M.read_scores_csv(args.scores)
    elif args.checkpoint and args.manifest and args.split:
        from .data import DatasetManifest, SplitAssignment
        from .models import load_checkpoint
        from .training import scores_for_split

        manifest = DatasetManifest.read_jsonl(args.manifest)
        split = SplitAssignment.read_json(args.split)
        model = load_checkpoint(args.checkpoint)
        ids, labels, scores = scores_for_split(model, manifest, split.ids_for(args.split_name))
        M.write_scores_csv(out / "scores.csv", ids, labels, scores)
        extra["split_hash"] = split.content_hash()
        extra["split_name"] = args.split_name
    else:
        print("error: eval needs --scores, or --checkpoint with --manifest and --split", file=sys.stderr)
        return 2

    report = M.evaluation_report(scores, labels, threshold=args.threshold, extra=extra)
    M.write_report_json(out / "metrics.json", report)
    curve = M.roc_curve(scores, labels)
    M.write_roc_csv(out / "roc.csv", curve)
    if args.figures:
        from .reporting import roc_figure

        roc_figure({args.name: curve}, out / "roc", aucs={args.name: report["auc"]})
    m = report["metrics"]
    print(
        f"eval: n={report['n_items']} sensitivity={m['sensitivity']} "
        f"specificity={m['specificity']} accuracy={m['accuracy']} auc={report['auc']:.4f} -> {out}"
    )
    return 0


def cmd_cam(args) -> int:
    from .cam import render_case
    from .data import CxrRecord, load_and_resize
    from .models import load_checkpoint
    from PIL import Image

    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    for image_path in args.images:
        path = Path(image_path)
        with Image.open(path) as im:
            w, h = im.size
        record = CxrRecord(id=path.stem, image_path=str(path), label="healthy", width_px=w, height_px=h)
        tensor = load_and_resize(record, model.spec.input_dims)
        meta = render_case(
            model,
            tensor,
            out / f"{path.stem}.heatmap.png",
            out / f"{path.stem}.heatmap.json",
            mode=args.mode,
            alpha=args.alpha,
        )
        print(f"cam: {path.stem} mode={meta['mode']} -> {out / (path.stem + '.heatmap.png')}")
    return 0


def cmd_baseline(args) -> int:
    from . import metrics as M
    from .data import DatasetManifest, SplitAssignment
    from .features import evaluate_baseline, features_for_split, fit_linear_classifier, save_features
    from .models import build_classifier, load_checkpoint

    out = _outdir(args)
    manifest = DatasetManifest.read_jsonl(args.manifest)
    split = SplitAssignment.read_json(args.split)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        model = build_classifier(args.backbone, pretrained=True, head_seed=args.seed)

    train_feats, train_labels = features_for_split(model, manifest, split.ids_for("train"))
    test_feats, test_labels = features_for_split(model, manifest, split.ids_for("test"))
    save_features(out / "features_train", train_feats, args.backbone, model.spec.feature_layer)
    save_features(out / "features_test", test_feats, args.backbone, model.spec.feature_layer)

    classifier = fit_linear_classifier(train_feats, train_labels, reg_strength=args.reg_strength, seed=args.seed)
    report = evaluate_baseline(
        classifier,
        test_feats,
        test_labels,
        extra={"split_hash": split.content_hash(), "backbone": args.backbone, "seed": args.seed},
    )
    M.write_report_json(out / "baseline_metrics.json", report)
    M.write_scores_csv(
        out / "baseline_scores.csv", test_feats.ids, test_labels, classifier.decision_scores(test_feats)
    )
    m = report["metrics"]
    print(
        f"baseline {args.backbone}: accuracy={m['accuracy']} auc={report['auc']:.4f} -> {out}"
    )
    return 0


def cmd_compare(args) -> int:
    from .reporting import comparison_report, write_comparison

    out = _outdir(args)

    def load_reports(items):
        return {name: json.loads(path.read_text()) for name, path in _named_paths(items).items()}

    comparison = comparison_report(load_reports(args.end_to_end), load_reports(args.baseline))
    written = write_comparison(comparison, out)
    print(f"compare: {len(comparison['backbones'])} backbones -> {', '.join(written)}")
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, run_server

    config = ServiceConfig.from_sources(
        config_file=args.config,
        checkpoint=args.checkpoint,
        data_dir=args.data_dir,
        port=args.port,
        host=args.host,
        ui_dir=args.ui_dir,
    )
    run_server(config)
    return 0


def cmd_report(args) -> int:
    from . import metrics as M
    from .reporting import metrics_table, roc_figure, training_figure

    out = _outdir(args)
    written: list[str] = []

    reports = {}
    for name, path in _named_paths(args.eval).items():
        reports[name] = json.loads(path.read_text())
    if reports:
        curves = {
            name: M.RocCurve(points=tuple(tuple(p) for p in r["roc_points"])) for name, r in reports.items()
        }
        aucs = {name: r["auc"] for name, r in reports.items()}
        written += roc_figure(curves, out / "roc_combined", aucs=aucs)
        written += metrics_table(reports, out)

    for run_dir in args.run_dir:
        run_path = Path(run_dir)
        per_epoch = []
        with open(run_path / "metrics.jsonl") as fh:
            for line in fh:
                if line.strip():
                    per_epoch.append(json.loads(line))
        if per_epoch:
            written += training_figure(per_epoch, out / f"training_{run_path.name}")

    if not written:
        print("error: nothing to report; pass --eval and/or --run-dir", file=sys.stderr)
        return 2
    print(f"report: wrote {len(written)} files -> {out}")
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "cam": cmd_cam,
    "baseline": cmd_baseline,
    "compare": cmd_compare,
    "serve": cmd_serve,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
