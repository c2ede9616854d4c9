#!/usr/bin/env python3
"""Builds the bundled grayscale image sets under data/ from images that ship
with scikit-image, scikit-learn and matplotlib.

    data/test   eight 256x256 evaluation images (cameraman first)
    data/train  training corpus, longer side scaled to 480 px
    data/val    held-out images used for lambda calibration
"""
import os
import sys

import numpy as np
from PIL import Image
from skimage import color, data, transform
from sklearn.datasets import load_sample_image
import matplotlib.cbook as cbook


def to_gray(img):
    img = np.asarray(img)
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    else:
        img = img.astype(np.float64)
        if img.max() > 1.0:
            img = img / 255.0
    return img


def center_square(img):
    h, w = img.shape
    s = min(h, w)
    y0, x0 = (h - s) // 2, (w - s) // 2
    return img[y0:y0 + s, x0:x0 + s]


def resize(img, shape):
    return transform.resize(img, shape, order=3, anti_aliasing=True, mode="reflect")


def save_pgm(path, img):
    arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
    print(path, arr.shape)


def hopper():
    with cbook.get_sample_data("grace_hopper.jpg") as f:
        return np.asarray(Image.open(f))


def main(root):
    test = {
        "cameraman": lambda: data.camera(),
        "astronaut": data.astronaut,
        "coffee": data.coffee,
        "chelsea": data.chelsea,
        "coins": data.coins,
        "hopper": hopper,
        "moon": data.moon,
        "rocket": data.rocket,
    }
    for i, (name, fn) in enumerate(test.items()):
        g = center_square(to_gray(fn()))
        if name == "cameraman":
            # 2x2 block mean of the 512x512 original
            g = g.reshape(256, 2, 256, 2).mean(axis=(1, 3))
        else:
            g = resize(g, (256, 256))
        save_pgm(os.path.join(root, "test", f"{i}_{name}.pgm"), g)

    def longer_480(img):
        h, w = img.shape
        s = 480.0 / max(h, w)
        return resize(img, (int(round(h * s)), int(round(w * s))))

    train = {
        "china": lambda: load_sample_image("china.jpg"),
        "flower": lambda: load_sample_image("flower.jpg"),
        "brick": data.brick,
        "grass": data.grass,
        "gravel": data.gravel,
        "retina": data.retina,
        "cell": data.cell,
        "page": data.page,
    }
    for name, fn in train.items():
        save_pgm(os.path.join(root, "train", f"{name}.pgm"), longer_480(to_gray(fn())))

    val = {
        "motorcycle": data.stereo_motorcycle,
        "ihc": data.immunohistochemistry,
    }
    for name, fn in val.items():
        img = fn()
        if isinstance(img, tuple):
            img = img[0]
        save_pgm(os.path.join(root, "val", f"{name}.pgm"), longer_480(to_gray(img)))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data"))
