"""
Mask preprocessing walkthrough.

Builds a small binary shadow mask, then shows the three derived targets the
training loop uses:
    1. the eroded core and the boundary band (edge target)
    2. the soft mask, which fades from 1 in the core to 0 at the outer boundary
    3. block-averaged stage targets for the auxiliary heads

Run:  python demos/01_mask_preprocessing.py
"""
import numpy as np

from vidshadow.maskops import distance_transform, edge_mask, erode, penumbra_reweight, stage_targets


def show(name, a, fmt="{:4.2f}"):
    print(f"\n{name}:")
    for row in a:
        print(" ".join(fmt.format(v) for v in row))


def main():
    mask = np.zeros((10, 12), bool)
    mask[2:8, 2:10] = True
    mask[4:6, 0:3] = True  # a thin spur that erodes away completely

    show("mask", mask.astype(int), "{:d}")
    show("eroded core (3x3)", erode(mask).astype(int), "{:d}")
    show("edge band", edge_mask(mask).astype(int), "{:d}")
    show("distance to background", distance_transform(mask), "{:4.1f}")
    soft = penumbra_reweight(mask)
    show("soft mask", soft)

    core = erode(mask)
    band = mask & ~core
    print(f"\ncore pixels at 1: {np.all(soft[core] == 1)}, "
          f"band in (0,1): {np.all((soft[band] > 0) & (soft[band] < 1))}, "
          f"background at 0: {np.all(soft[~mask] == 0)}")

    big = np.zeros((64, 64), bool)
    big[10:50, 14:44] = True
    (target,) = stage_targets(big, [16])
    show("stage target at stride 16", target)


if __name__ == "__main__":
    main()
