"""Command-line entry points.

Exit codes: 0 on success, 1 on validation errors (bad arguments, bad
config, malformed inputs), 2 on I/O errors (missing files, busy port).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data, metrics, model as model_mod, synth, train, weaklabel

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _read_segments(path: str):
    try:
        return data.read_segments(path)
    except OSError as exc:
        raise CliError(f"cannot read segment store {path}: {exc}", EXIT_IO)
    except (ValueError, KeyError) as exc:
        raise CliError(f"malformed segment store {path}: {exc}")


def _read_labels(path: str):
    try:
        return weaklabel.read_labels(path)
    except OSError as exc:
        raise CliError(f"cannot read label file {path}: {exc}", EXIT_IO)
    except (ValueError, KeyError) as exc:
        raise CliError(f"malformed label file {path}: {exc}")


def _label_map(path: str) -> dict[str, str]:
    return {r.segment_id: r.label for r in _read_labels(path)}


def _net_config(args) -> model_mod.NetsConfig:
    try:
        return model_mod.NetsConfig(
            d_h=args.d_h,
            n_layers=args.layers,
            n_heads=args.heads,
            horizon=args.horizon,
        )
    except ValueError as exc:
        raise CliError(str(exc))


def _train_config(args, stage: str, net: model_mod.NetsConfig) -> train.TrainRunConfig:
    try:
        return train.TrainRunConfig(
            stage=stage,
            net=net,
            learning_rate=args.lr,
            batch_size=args.batch,
            patience=args.patience,
            max_epochs=args.epochs,
            seed=args.seed,
            checkpoint_in=getattr(args, "from_checkpoint", None),
        )
    except ValueError as exc:
        raise CliError(str(exc))


def _add_train_flags(sub, lr_default: float = 5e-5):
    sub.add_argument("--segments", required=True, help="segment store (JSONL)")
    sub.add_argument("--out", required=True, help="output checkpoint path")
    sub.add_argument("--runlog", help="per-epoch JSONL training log")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--patience", type=int, default=50)
    sub.add_argument("--lr", type=float, default=lr_default)
    sub.add_argument("--batch", type=int, default=64)
    sub.add_argument("--epochs", type=int, default=1000, help="epoch cap")
    sub.add_argument("--d-h", type=int, default=32, dest="d_h")
    sub.add_argument("--layers", type=int, default=2)
    sub.add_argument("--heads", type=int, default=4)
    sub.add_argument("--horizon", type=int, default=10)
    sub.add_argument(
        "--split-by",
        choices=["possession", "segment"],
        default="possession",
        help="unit kept intact when splitting train/val/test",
    )
    sub.add_argument("--split-seed", type=int, default=0)


def _splits(args, segments):
    try:
        return train.make_splits(
            segments, args.split_seed, by_possession=args.split_by == "possession"
        )
    except ValueError as exc:
        raise CliError(str(exc))


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    try:
        result = data.ingest(args.input, format=args.format)
    except OSError as exc:
        raise CliError(f"cannot read {args.input}: {exc}", EXIT_IO)
    except data.ParseError as exc:
        raise CliError(str(exc))
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            for frame in result.frames:
                fh.write(json.dumps(data.frame_to_json_obj(frame)) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO)
    for rej in result.rejected:
        print(f"rejected line {rej.line}: {rej.reason}", file=sys.stderr)
    print(
        json.dumps(
            {"frames": len(result.frames), "rejected": len(result.rejected)}
        )
    )
    return EXIT_OK


def cmd_segment(args) -> int:
    try:
        result = data.ingest(args.input, format=args.format)
    except OSError as exc:
        raise CliError(f"cannot read {args.input}: {exc}", EXIT_IO)
    except data.ParseError as exc:
        raise CliError(str(exc))
    segments = []
    for frames in result.by_event().values():
        segments.extend(
            data.preprocess_event(frames, L=args.window, H=args.horizon)
        )
    try:
        data.write_segments(segments, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO)
    print(json.dumps({"segments": len(segments), "events": len(result.by_event())}))
    return EXIT_OK


def cmd_weaklabel(args) -> int:
    segments = _read_segments(args.segments)
    thr = weaklabel.RuleThresholds()
    if args.thresholds:
        try:
            thr = weaklabel.RuleThresholds.from_file(args.thresholds)
        except OSError as exc:
            raise CliError(f"cannot read {args.thresholds}: {exc}", EXIT_IO)
        except ValueError as exc:
            raise CliError(str(exc))
    records, key_frames = weaklabel.weak_label_store(segments, thr)
    try:
        weaklabel.write_labels(records, args.labels)
        counts = weaklabel.write_audit_report(records, key_frames, args.audit)
    except OSError as exc:
        raise CliError(f"cannot write outputs: {exc}", EXIT_IO)
    print(json.dumps({"labels": len(records), "counts": counts}))
    return EXIT_OK


def cmd_synth(args) -> int:
    counts = {
        "pick_and_roll": args.pick_and_roll,
        "handoff": args.handoff,
        "spread": args.spread,
        "random_walk": args.random_walk,
    }
    try:
        segments, truth = synth.make_corpus(
            counts,
            sigma=args.sigma,
            seed=args.seed,
            store_path=args.out,
            truth_path=args.truth,
            horizon=args.horizon,
        )
    except ValueError as exc:
        raise CliError(str(exc))
    except OSError as exc:
        raise CliError(f"cannot write corpus: {exc}", EXIT_IO)
    print(json.dumps({"segments": len(segments), "truth_labels": len(truth)}))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    segments = _read_segments(args.segments)
    split = _splits(args, segments)
    cfg = _train_config(args, "pretrain", _net_config(args))
    try:
        _, runlog = train.pretrain(cfg, segments, split, args.out)
    except train.TrainingError as exc:
        raise CliError(str(exc))
    except OSError as exc:
        raise CliError(f"cannot write checkpoint {args.out}: {exc}", EXIT_IO)
    if args.runlog:
        runlog.write(args.runlog)
    print(
        json.dumps(
            {
                "best_epoch": runlog.best_epoch,
                "stop_epoch": runlog.stop_epoch,
                "wall_time_s": round(runlog.wall_time_s, 3),
            }
        )
    )
    return EXIT_OK


def cmd_finetune(args) -> int:
    segments = _read_segments(args.segments)
    labels = _label_map(args.labels)
    val_labels = _label_map(args.val_labels) if args.val_labels else None
    split = _splits(args, segments)
    stage = "finetune_manual" if args.stage == "manual" else "finetune_weak"
    cfg = _train_config(args, stage, _net_config(args))
    if args.alpha:
        parts = args.alpha.split(",")
        if len(parts) != 3:
            raise CliError("--alpha wants three comma-separated weights")
        cfg.alpha = tuple(float(p) for p in parts)
    try:
        _, runlog = train.finetune(
            cfg,
            segments,
            labels,
            split,
            args.out,
            val_labels=val_labels,
            balance=not args.no_balance,
        )
    except train.TrainingError as exc:
        raise CliError(str(exc))
    except model_mod.CheckpointError as exc:
        raise CliError(f"bad checkpoint: {exc}")
    except OSError as exc:
        raise CliError(f"checkpoint I/O failed: {exc}", EXIT_IO)
    if args.runlog:
        runlog.write(args.runlog)
    print(
        json.dumps(
            {
                "best_epoch": runlog.best_epoch,
                "stop_epoch": runlog.stop_epoch,
                "wall_time_s": round(runlog.wall_time_s, 3),
            }
        )
    )
    return EXIT_OK


def _load_model(path: str) -> model_mod.GroupActivityNet:
    try:
        return model_mod.load_checkpoint(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}", EXIT_IO)
    except model_mod.CheckpointError as exc:
        raise CliError(f"bad checkpoint {path}: {exc}")


def cmd_evaluate(args) -> int:
    truth = _label_map(args.labels)
    if args.pred:
        pred = _label_map(args.pred)
    elif args.checkpoint and args.segments:
        net = _load_model(args.checkpoint)
        if net.head_kind != model_mod.HEAD_CLASSIFICATION:
            raise CliError("evaluate needs a classification checkpoint")
        segments = _read_segments(args.segments)
        pred = train.predict_labels(net, segments)
        if args.pred_out:
            records = [
                weaklabel.LabelRecord(segment_id=sid, label=lbl, source="model")
                for sid, lbl in sorted(pred.items())
            ]
            weaklabel.write_labels(records, args.pred_out)
    else:
        raise CliError("need either --pred or both --checkpoint and --segments")

    ids = sorted(set(truth) & set(pred))
    if not ids:
        raise CliError("no segment ids shared between truth and predictions")
    try:
        cm = metrics.confusion([truth[i] for i in ids], [pred[i] for i in ids])
    except ValueError as exc:
        raise CliError(str(exc))
    print(json.dumps(metrics.metrics_report(cm=cm), indent=2))
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    net = _load_model(args.checkpoint)
    segments = _read_segments(args.segments)
    labels = _label_map(args.labels) if args.labels else {}
    try:
        n = metrics.export_embeddings(net, segments, labels, args.out)
    except ValueError as exc:
        raise CliError(str(exc))
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO)
    print(json.dumps({"rows": n}))
    return EXIT_OK


def cmd_annotate_serve(args) -> int:
    import uvicorn

    from .service import create_app

    segments = _read_segments(args.segments)
    weak = _read_labels(args.weak_labels)
    app = create_app(
        segments,
        weak,
        manual_path=args.manual_labels,
        sessions_dir=args.sessions,
        static_dir=args.static,
    )
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except SystemExit:
        raise CliError(f"cannot bind port {args.port}", EXIT_IO)
    except OSError as exc:
        raise CliError(f"cannot serve on port {args.port}: {exc}", EXIT_IO)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="playtrack",
        description="Basketball tracking analytics: preprocess, label, train, serve.",
    )
    subs = parser.add_subparsers(dest="command", metavar="command")

    p = subs.add_parser("ingest", help="read raw frames, emit normalized JSONL")
    p.add_argument("--input", required=True, help="raw CSV or JSONL tracking file")
    p.add_argument("--format", choices=["csv", "jsonl"], help="input format override")
    p.add_argument("--out", required=True, help="normalized frames JSONL")
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("segment", help="raw frames to a preprocessed segment store")
    p.add_argument("--input", required=True, help="raw CSV or JSONL tracking file")
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--out", required=True, help="segment store JSONL")
    p.add_argument("--window", type=int, default=data.INPUT_STEPS)
    p.add_argument("--horizon", type=int, default=None,
                   help="future steps to keep as velocities")
    p.set_defaults(func=cmd_segment)

    p = subs.add_parser("weaklabel", help="rule-based labels for a segment store")
    p.add_argument("--segments", required=True)
    p.add_argument("--labels", required=True, help="output label JSONL")
    p.add_argument("--audit", required=True, help="output key-frame audit CSV")
    p.add_argument("--thresholds", help="key=value threshold overrides")
    p.set_defaults(func=cmd_weaklabel)

    p = subs.add_parser("synth", help="generate a scripted synthetic corpus")
    p.add_argument("--pick-and-roll", type=int, default=0, dest="pick_and_roll")
    p.add_argument("--handoff", type=int, default=0)
    p.add_argument("--spread", type=int, default=0)
    p.add_argument("--random-walk", type=int, default=0, dest="random_walk")
    p.add_argument("--sigma", type=float, default=0.0, help="position noise, ft")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--out", required=True, help="segment store JSONL")
    p.add_argument("--truth", required=True, help="ground-truth label JSONL")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("pretrain", help="trajectory-prediction pretraining")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = subs.add_parser("finetune", help="play-classification fine-tuning")
    _add_train_flags(p)
    p.add_argument("--labels", required=True, help="training label JSONL")
    p.add_argument("--val-labels", help="separate validation label JSONL")
    p.add_argument("--from-checkpoint", help="pretraining checkpoint to start from")
    p.add_argument("--stage", choices=["weak", "manual"], default="weak")
    p.add_argument("--alpha", help="class weights, e.g. 0.77,2.34,0.77")
    p.add_argument("--no-balance", action="store_true",
                   help="skip downsampling the majority class")
    p.set_defaults(func=cmd_finetune)

    p = subs.add_parser("evaluate", help="confusion/F1 report against truth labels")
    p.add_argument("--labels", required=True, help="ground-truth label JSONL")
    p.add_argument("--pred", help="predicted label JSONL")
    p.add_argument("--checkpoint", help="classification checkpoint to run instead")
    p.add_argument("--segments", help="segment store for --checkpoint evaluation")
    p.add_argument("--pred-out", help="also write predictions as label JSONL")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("export-embeddings", help="pooled play embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--labels", help="label JSONL for the label column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = subs.add_parser("annotate-serve", help="run the annotation HTTP service")
    p.add_argument("--segments", required=True)
    p.add_argument("--weak-labels", required=True)
    p.add_argument("--manual-labels", required=True,
                   help="append-only manual label JSONL")
    p.add_argument("--sessions", default=".annotation-sessions",
                   help="session state directory")
    p.add_argument("--static", help="static frontend bundle to serve at /")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8701)
    p.set_defaults(func=cmd_annotate_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; map to the validation code
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
