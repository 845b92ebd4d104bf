#!/usr/bin/env python3
"""Chunk attention masks, the dynamic chunk-size distribution, and the
latency each decode chunk size implies.

Run:  python3 demos/01_masks_and_latency.py
"""

import numpy as np

from streamrec import ChunkPolicy, latency_bounds, make_chunk_mask, sample_chunk_size


def show(title, mask):
    print(f"\n{title}")
    for row in mask:
        print("  " + "".join("#" if bit else "." for bit in row))


def main():
    frames = 8

    # the three attention policies: full context, pure left context, and
    # chunked (each frame sees its own chunk plus all earlier chunks)
    show("full attention (chunk >= T)", make_chunk_mask(frames, frames))
    show("left attention (chunk = 1)", make_chunk_mask(frames, 1))
    show("chunk attention (chunk = 4)", make_chunk_mask(frames, 4))

    # dynamic chunk training draws a fresh chunk size per batch: half the
    # batches see the whole utterance, the rest a uniform streaming size
    rng = np.random.default_rng(0)
    policy = ChunkPolicy.dynamic()
    draws = [sample_chunk_size(100, policy, rng.random(), rng.random()) for _ in range(10_000)]
    full = sum(d == 100 for d in draws)
    streaming = [d for d in draws if d != 100]
    print(f"\n10,000 dynamic draws with l_max=100:")
    print(f"  full-context fraction: {full / len(draws):.3f}")
    print(f"  streaming sizes span [{min(streaming)}, {max(streaming)}], "
          f"mean {np.mean(streaming):.2f} (uniform on [1,25] -> 13.0)")

    # latency is pure arithmetic on the chunk size: a frame waits at most
    # one chunk of raw audio, half a chunk on average
    print("\nlatency per decode chunk (4x subsampling, 10 ms frame shift):")
    print("  chunk   max_ms   avg_ms")
    for chunk in (1, 4, 8, 16):
        bounds = latency_bounds(chunk, 4, 10)
        print(f"  {chunk:>5}   {bounds.max_ms:6.0f}   {bounds.avg_ms:6.0f}")


if __name__ == "__main__":
    main()
