"""Reference outputs for the flip/zoom/shear augmentation, via scipy.ndimage.

Writes a JSON fixture of (params, expected image) cases for a 16x16x3
gradient image.
"""

import json
import sys

import numpy as np
from scipy import ndimage


def gradient():
    y, x, k = np.meshgrid(np.arange(16), np.arange(16), np.arange(3), indexing="ij")
    return (y * 7 + x * (k + 1) * 3) / 256.0


def reference(img, flip, zoom, shear):
    if flip:
        img = img[:, ::-1, :]
    h, w, _ = img.shape
    m = np.array([[1, -np.sin(shear)], [0, np.cos(shear)]]) @ np.array([[zoom, 0], [0, zoom]])
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = center - m @ center
    channels = [
        ndimage.affine_transform(img[:, :, k], m, offset=offset, order=1, mode="nearest")
        for k in range(img.shape[2])
    ]
    return np.clip(np.stack(channels, axis=-1), 0.0, 1.0)


CASES = [
    (False, 1.2, 0.0),
    (False, 0.8, 0.0),
    (False, 1.0, 0.2),
    (False, 1.0, -0.2),
    (True, 0.9, 0.15),
    (False, 1.13, -0.07),
    (True, 0.85, -0.19),
]


def main(out):
    img = gradient()
    cases = []
    for flip, zoom, shear in CASES:
        expected = reference(img, flip, zoom, shear)
        cases.append(
            {
                "flip": flip,
                "zoom": zoom,
                "shear": shear,
                "expected": [float(f"{v:.9g}") for v in expected.reshape(-1)],
            }
        )
    with open(out, "w") as f:
        json.dump({"height": 16, "width": 16, "channels": 3, "cases": cases}, f)


if __name__ == "__main__":
    main(sys.argv[1])
