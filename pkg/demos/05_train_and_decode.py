#!/usr/bin/env python3
"""End to end on a small synthetic task: train with dynamic chunks, then
decode the test set at several chunk sizes in all three modes.

Takes a couple of minutes.  Run:  python3 demos/05_train_and_decode.py
"""

import time

import numpy as np

from streamrec import ChunkPolicy, ModelConfig, SpecAugmentConfig, SyntheticTask, TrainConfig
from streamrec import bench, make_dataset, model_from_checkpoint, train
from streamrec.runtime import DecodeSession


def main():
    task = SyntheticTask(vocab=8, feature_dim=8, frames_per_token=8, noise_sigma=0.8,
                         min_len=3, max_len=8, seed=11)
    model_cfg = ModelConfig(vocab_size=task.vocab_size, feature_dim=8, enc_layers=2,
                            enc_heads=4, d_model=32, d_ff=128, conv_kernel=8,
                            dec_layers=1, dec_heads=4, dec_d_ff=128)
    train_cfg = TrainConfig(lambda_ctc=0.3, chunk_policy=ChunkPolicy.dynamic(),
                            warmup_steps=100, batch_size=2, accum_steps=4, epochs=10,
                            seed=0, specaug=SpecAugmentConfig(2, 1, 2, 8))

    train_utts = make_dataset(task, 300, split_seed=1)
    dev_utts = make_dataset(task, 40, split_seed=2)
    test_utts = make_dataset(task, 60, split_seed=3)

    start = time.time()
    result = train(model_cfg, train_utts, dev_utts, train_cfg,
                   log=lambda msg: print("  " + msg))
    print(f"trained in {time.time() - start:.0f}s "
          f"(best dev loss {result.final.dev_loss:.3f}, {result.skipped} skipped)")
    model = model_from_checkpoint(result.final)

    # watch partials firm up while streaming one utterance
    utt = test_utts[0]
    session = DecodeSession(model, chunk_size=4, beam=10, nbest=10)
    print(f"\nstreaming utterance {utt.utt_id} (ref {tuple(utt.tokens)}):")
    for lo in range(0, utt.features.shape[0], 16):
        partial = session.push_chunk(utt.features[lo : lo + 16])
        if partial is not None:
            print(f"  after chunk {partial.chunk_index}: {partial.transcript}")
    final = session.finalize("attention_rescoring", ctc_weight=0.5)
    print(f"  final: {final.transcript}  (rtf {final.timing.rtf:.3f}, "
          f"max latency {final.latency.max_ms:.0f} ms)")

    print("\nchunk sweep on the test set:")
    rows = bench(model, test_utts, [None, 16, 8, 4, 1],
                 ["ctc_only", "attention_rescoring"], beam=10, nbest=10)
    print("  chunk  mode                  err     rtf    latency_ms")
    for r in rows:
        print(f"  {str(r['chunk']):>5}  {r['mode']:20s}  {r['err']:.3f}  {r['rtf']:.3f}  "
              f"{r['latency_max_ms']:8.0f}")


if __name__ == "__main__":
    main()
