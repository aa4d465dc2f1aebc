"""Writes the 12-sample evaluation fixture with an independent numpy tally.

Probabilities are hand-chosen, including an exact three-way tie and a
two-way tie, so tie-breaking toward the lowest class index is exercised.
"""
import json
import sys

import numpy as np

LABELS = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]
PROBS = [
    [0.70, 0.20, 0.10],
    [0.40, 0.50, 0.10],
    [1 / 3, 1 / 3, 1 / 3],
    [0.90, 0.05, 0.05],
    [0.10, 0.80, 0.10],
    [0.45, 0.45, 0.10],
    [0.20, 0.30, 0.50],
    [0.05, 0.90, 0.05],
    [0.10, 0.10, 0.80],
    [0.30, 0.60, 0.10],
    [0.20, 0.40, 0.40],
    [0.00, 0.00, 1.00],
]


def main(out):
    p = np.array(PROBS, dtype=np.float64)
    y = np.array(LABELS)
    pred = np.argmax(p, axis=1)  # numpy returns the first maximal index
    confusion = np.zeros((3, 3), dtype=int)
    for t, q in zip(y, pred):
        confusion[t, q] += 1
    clipped = np.clip(p[np.arange(len(y)), y], 1e-7, 1 - 1e-7)
    doc = {
        "labels": LABELS,
        "probabilities": PROBS,
        "expected": {
            "predicted": pred.tolist(),
            "correct": int((pred == y).sum()),
            "accuracy": float((pred == y).mean()),
            "confusion": confusion.tolist(),
            "loss": float(-np.log(clipped).mean()),
            "precision": [float(confusion[k, k] / confusion[:, k].sum()) for k in range(3)],
            "recall": [float(confusion[k, k] / confusion[k, :].sum()) for k in range(3)],
        },
    }
    with open(out, "w") as f:
        json.dump(doc, f, indent=2)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/eval_tally.json")
