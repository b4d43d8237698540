"""
Segmentation metrics on hand-made frames.

Shows how MAE, F-beta, IoU and the balanced error rate (with its shadow and
non-shadow halves) react to typical failure cases, and how frames with an
undefined value are left out of the mean instead of counted as zero.

Run:  python demos/02_metrics.py
"""
import numpy as np

from vidshadow.metrics import aggregate, frame_records


def main():
    gt = np.zeros((4, 16, 16), bool)
    gt[:3, 4:12, 4:12] = True  # the last frame has no shadow at all
    pred = np.zeros((4, 16, 16))
    pred[0, 4:12, 4:12] = 0.9  # perfect
    pred[1, 4:12, 4:8] = 0.8  # misses half the shadow
    pred[2, 0:16, 0:16] = 0.7  # calls everything shadow
    pred[3, 0:2, 0:2] = 0.6  # small false alarm on a shadow-free frame

    records = frame_records(pred, gt, video_id="demo")
    cols = ["mae", "f_beta", "iou", "ber", "s_ber", "n_ber"]
    print("frame  " + "  ".join(f"{c:>7s}" for c in cols))
    for r in records:
        cells = ["    n/a" if r[c] is None else f"{r[c]:7.3f}" for c in cols]
        print(f"{r['frame']:5d}  " + "  ".join(cells))

    report = aggregate(records)
    print("\nmean over frames where each metric is defined:")
    for k, v in report.summary().items():
        print(f"  {k:>11s}: {v:.4f}" if isinstance(v, float) else f"  {k:>11s}: {v}")


if __name__ == "__main__":
    main()
