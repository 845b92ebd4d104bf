"""Command line front end: train, decode, stream, bench, average.

Utterance-level output is one JSON record per line; bench prints a TSV
table of (chunk, mode, err, rtf, latency) rows.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .masking import ChunkPolicy
from .model import ModelConfig
from .runtime import DecodeSession, bench, decode_utterance, token_error_rate
from .trainer import (
    SpecAugmentConfig,
    SyntheticTask,
    TrainConfig,
    average_checkpoints,
    load_checkpoint,
    make_dataset,
    model_from_checkpoint,
    read_dataset,
    save_checkpoint,
    train,
    write_dataset,
)

MODE_NAMES = {"ctc": "ctc_only", "attention": "attention_decoder", "rescoring": "attention_rescoring"}


def _parse_chunk(text: str) -> int | None:
    return None if text == "full" else int(text)


def _chunk_policy(train_cfg: dict) -> ChunkPolicy:
    mode = train_cfg.get("chunk_mode", "dynamic")
    if mode == "static":
        return ChunkPolicy.static(int(train_cfg["static_chunk"]))
    if mode == "full":
        return ChunkPolicy.full()
    return ChunkPolicy.dynamic(
        cap=int(train_cfg.get("chunk_cap", 25)),
        full_fraction=float(train_cfg.get("full_fraction", 0.5)),
    )


def cmd_train(args: argparse.Namespace) -> int:
    config = json.loads(Path(args.config).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    task = SyntheticTask.from_dict(config.get("task", {}))
    data_cfg = config.get("data", {})
    if "train_path" in data_cfg:
        task, train_utts = read_dataset(data_cfg["train_path"])
        _, dev_utts = read_dataset(data_cfg["dev_path"])
    else:
        counts = data_cfg.get("counts", {"train": 2000, "dev": 200, "test": 200})
        train_utts = make_dataset(task, counts["train"], split_seed=1, prefix="train")
        dev_utts = make_dataset(task, counts["dev"], split_seed=2, prefix="dev")
        test_utts = make_dataset(task, counts["test"], split_seed=3, prefix="test")
        write_dataset(out / "train.txt", task, train_utts)
        write_dataset(out / "dev.txt", task, dev_utts)
        write_dataset(out / "test.txt", task, test_utts)

    model_cfg = ModelConfig.from_dict(
        {"vocab_size": task.vocab_size, "feature_dim": task.feature_dim, **config.get("model", {})}
    )
    tr = config.get("train", {})
    specaug = tr.get("specaug", None)
    train_cfg = TrainConfig(
        lambda_ctc=float(tr.get("lambda_ctc", 0.3)),
        chunk_policy=_chunk_policy(tr),
        warmup_steps=int(tr.get("warmup_steps", 500)),
        peak_scale=float(tr.get("peak_scale", 1.0)),
        batch_size=int(tr.get("batch_size", 2)),
        accum_steps=int(tr.get("accum_steps", 4)),
        epochs=int(tr.get("epochs", 8)),
        seed=int(tr.get("seed", 0)),
        specaug=SpecAugmentConfig(**specaug) if isinstance(specaug, dict) else (SpecAugmentConfig() if specaug else None),
        dropout=float(tr.get("dropout", 0.1)),
        label_smoothing=float(tr.get("label_smoothing", 0.1)),
        keep_best=int(tr.get("keep_best", 10)),
    )
    result = train(model_cfg, train_utts, dev_utts, train_cfg, out_dir=out, log=print)
    print(f"final checkpoint: {out / 'final.ckpt'} (dev_loss={result.final.dev_loss:.4f}, "
          f"skipped={result.skipped})")
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    _, utts = read_dataset(args.data)
    chunk = _parse_chunk(args.chunk)
    mode = MODE_NAMES[args.mode]
    pairs = []
    for utt in utts:
        result = decode_utterance(
            model, utt.features, mode, chunk,
            beam=args.beam, nbest=args.nbest, ctc_weight=args.ctc_weight,
        )
        pairs.append((result.transcript, tuple(utt.tokens)))
        print(json.dumps({
            "id": utt.utt_id,
            "ref": list(utt.tokens),
            "transcript": list(result.transcript),
            "nbest": [asdict(h) | {"labels": list(h.labels)} for h in result.nbest],
            "timing": {
                "audio_ms": result.timing.audio_ms,
                "first_pass_ms": result.timing.first_pass_ms,
                "rescore_ms": result.timing.rescore_ms,
                "rtf": result.timing.rtf,
            },
            "latency": {"max_ms": result.latency.max_ms, "avg_ms": result.latency.avg_ms},
        }))
    print(json.dumps({"summary": {"token_error_rate": token_error_rate(pairs), "utterances": len(pairs)}}))
    return 0


def cmd_stream(args: argparse.Namespace) -> int:
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    _, utts = read_dataset(args.data)
    chunk = int(args.chunk)
    push = 4 * chunk  # raw frames per simulated arrival
    for utt in utts:
        session = DecodeSession(model, chunk, beam=args.beam, nbest=args.nbest)
        for lo in range(0, utt.features.shape[0], push):
            partial = session.push_chunk(utt.features[lo : lo + push])
            if partial is not None and args.emit_partials:
                print(json.dumps({
                    "id": utt.utt_id,
                    "chunk": partial.chunk_index,
                    "partial": list(partial.transcript),
                }))
        result = session.finalize(MODE_NAMES[args.mode], args.ctc_weight)
        print(json.dumps({
            "id": utt.utt_id,
            "ref": list(utt.tokens),
            "final": list(result.transcript),
            "rtf": result.timing.rtf,
        }))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    _, utts = read_dataset(args.data)
    chunks = [_parse_chunk(c) for c in args.chunks.split(",")]
    modes = [MODE_NAMES[m] for m in args.modes.split(",")]
    rows = bench(model, utts, chunks, modes, beam=args.beam, nbest=args.nbest, ctc_weight=args.ctc_weight)
    print("chunk\tmode\terr\trtf\tlatency_max_ms\tlatency_avg_ms")
    for row in rows:
        print(f"{row['chunk']}\t{row['mode']}\t{row['err']:.4f}\t{row['rtf']:.4f}"
              f"\t{row['latency_max_ms']:.1f}\t{row['latency_avg_ms']:.1f}")
    return 0


def cmd_average(args: argparse.Namespace) -> int:
    paths = [p for p in args.inputs.split(",") if p]
    ckpt = average_checkpoints(paths)
    save_checkpoint(ckpt, args.out)
    print(f"averaged {len(paths)} checkpoints -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    def add_decode_args(p):
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--beam", type=int, default=10)
        p.add_argument("--nbest", type=int, default=10)
        p.add_argument("--ctc-weight", type=float, default=0.5, dest="ctc_weight")

    p = sub.add_parser("decode", help="decode a dataset file")
    add_decode_args(p)
    p.add_argument("--mode", choices=sorted(MODE_NAMES), default="rescoring")
    p.add_argument("--chunk", default="full", help="'full' or a positive chunk size")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("stream", help="decode chunk by chunk, optionally emitting partials")
    add_decode_args(p)
    p.add_argument("--mode", choices=sorted(MODE_NAMES), default="rescoring")
    p.add_argument("--chunk", required=True, help="decode chunk size (subsampled frames)")
    p.add_argument("--emit-partials", action="store_true", dest="emit_partials")
    p.set_defaults(fn=cmd_stream)

    p = sub.add_parser("bench", help="error/RTF/latency sweep over chunks and modes")
    add_decode_args(p)
    p.add_argument("--chunks", default="full,16,8,4,1")
    p.add_argument("--modes", default="ctc,attention,rescoring")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("average", help="average checkpoints elementwise")
    p.add_argument("--inputs", required=True, help="comma-separated checkpoint paths")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_average)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
