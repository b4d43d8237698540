"""
Why tokenized temporal attention scales.

Counts attention score entries for a clip of T frames on an h x w stage grid:
the tokenized block reads all frames through L_k learnable tokens, while full
spatio-temporal attention compares every position with every other one.
Also times one forward pass of each block on this machine.

Run:  python demos/03_temporal_cost.py
"""
import time

import torch

from vidshadow.ttb import PixelSpatiotemporalAttention, TokenizedTemporalBlock, attention_cost


def time_forward(block, x, repeats=3):
    with torch.no_grad():
        block(x)
        t0 = time.perf_counter()
        for _ in range(repeats):
            block(x)
    return (time.perf_counter() - t0) / repeats


def main():
    print(f"{'T':>3} {'grid':>5} {'tokenized':>12} {'pixel':>14} {'ratio':>9}")
    for t, g in [(5, 8), (5, 16), (5, 32), (8, 32), (16, 32)]:
        tok = attention_cost("tokenized", t, g, g, 8)
        pix = attention_cost("pixel", t, g, g, 8)
        print(f"{t:3d} {g:5d} {tok:12,d} {pix:14,d} {pix / tok:9.1f}")

    torch.manual_seed(0)
    c = 32
    tokenized = TokenizedTemporalBlock(c, c, n_tokens=8, n_heads=4)
    pixel = PixelSpatiotemporalAttention(c, n_heads=4)
    print("\nforward time, batch 1, 32 channels:")
    for g in (8, 16, 24):
        x = torch.randn(1, 5, g, g, c)
        print(f"  grid {g:2d}: tokenized {1e3 * time_forward(tokenized, x):7.2f} ms   "
              f"pixel {1e3 * time_forward(pixel, x):8.2f} ms")


if __name__ == "__main__":
    main()
