#!/usr/bin/env python3
# Copyright 2026 The oskit Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Builds the desk-scale IDX datasets under data/.

Sources:
  * MNIST digits: the original IDX files (60,000 train / 10,000 test) shipped in
    the `mnist-data` npm package, recompressed deterministically.
  * Fashion-MNIST: the `fashion-mnist` npm package (first N per class kept).
  * Letters: rendered EMNIST-style handwriting stand-ins (26 classes,
    labels 1..26 as in EMNIST-Letters) drawn from locally installed fonts
    with random affine jitter, stroke width and blur, then normalized the
    way MNIST was (20x20 box, centre of mass at the 28x28 centre).

Usage: prepare_desk_data.py --out data [--npm-cache DIR] [--fashion-per-class 500]
"""

import argparse
import glob
import gzip
import json
import os
import random
import struct
import subprocess
import tarfile

import numpy as np
from PIL import Image, ImageDraw, ImageFilter, ImageFont


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.tobytes())


def npm_package(name, cache):
    os.makedirs(cache, exist_ok=True)
    existing = glob.glob(os.path.join(cache, f"{name}-*.tgz"))
    if not existing:
        subprocess.run(["npm", "pack", name], cwd=cache, check=True,
                       stdout=subprocess.DEVNULL)
        existing = glob.glob(os.path.join(cache, f"{name}-*.tgz"))
    root = os.path.join(cache, name)
    if not os.path.isdir(root):
        with tarfile.open(existing[0]) as tar:
            tar.extractall(root)
    return os.path.join(root, "package")


def copy_mnist(cache, out_dir):
    pkg = npm_package("mnist-data", cache)
    for split in ("train", "t10k"):
        for kind, suffix in (("images", "idx3"), ("labels", "idx1")):
            src = os.path.join(pkg, "data", f"{split}-{kind}-{suffix}-ubyte")
            name = "train" if split == "train" else "test"
            dst = os.path.join(out_dir, f"mnist-{name}-{kind}-{suffix}-ubyte.gz")
            with open(src, "rb") as f:
                payload = f.read()
            with gzip.GzipFile(dst, "wb", mtime=0) as f:
                f.write(payload)


def load_fashion(cache, per_class):
    pkg = npm_package("fashion-mnist", cache)
    images, labels = [], []
    for cls in range(10):
        with open(os.path.join(pkg, "src", "clothes", f"{cls}.json")) as f:
            rows = json.load(f)["data"][:per_class]
        imgs = np.asarray(rows, dtype=np.uint8).reshape(-1, 28, 28)
        images.append(imgs)
        labels.append(np.full(len(imgs), cls, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(20190102).permutation(len(labels))
    return images[order], labels[order]


def font_paths():
    candidates = glob.glob("/usr/share/fonts/truetype/dejavu/*.ttf")
    try:
        import matplotlib
        mpl = os.path.join(os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf")
        for name in ("DejaVuSans*.ttf", "DejaVuSerif*.ttf", "STIXGeneral*.ttf",
                     "cmr10.ttf", "cmss10.ttf", "cmtt10.ttf", "cmb10.ttf"):
            candidates += glob.glob(os.path.join(mpl, name))
    except ImportError:
        pass
    return sorted(set(candidates))


def mnist_normalize(img):
    """Fit the ink bounding box into 20x20 and centre by centre of mass."""
    arr = np.asarray(img, dtype=np.float64)
    ys, xs = np.nonzero(arr > 8)
    if len(xs) == 0:
        return None
    crop = arr[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    h, w = crop.shape
    scale = 20.0 / max(h, w)
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    small = np.asarray(Image.fromarray(crop.astype(np.uint8)).resize((nw, nh), Image.LANCZOS),
                       dtype=np.float64)
    total = small.sum()
    if total <= 0:
        return None
    cy = (small.sum(axis=1) * np.arange(nh)).sum() / total
    cx = (small.sum(axis=0) * np.arange(nw)).sum() / total
    out = np.zeros((28, 28), dtype=np.float64)
    oy = int(round(14 - cy))
    ox = int(round(14 - cx))
    for y in range(nh):
        ty = y + oy
        if 0 <= ty < 28:
            for x in range(nw):
                tx = x + ox
                if 0 <= tx < 28:
                    out[ty, tx] = small[y, x]
    return np.clip(out, 0, 255).astype(np.uint8)


def render_letters(count, seed):
    rng = random.Random(seed)
    fonts = font_paths()
    if not fonts:
        raise SystemExit("no TrueType fonts found for letter rendering")
    alphabet = [chr(c) for c in range(ord("a"), ord("z") + 1)]
    images, labels = [], []
    while len(images) < count:
        idx = rng.randrange(26)
        ch = alphabet[idx].upper() if rng.random() < 0.5 else alphabet[idx]
        font = ImageFont.truetype(rng.choice(fonts), rng.randint(40, 64))
        canvas = Image.new("L", (112, 112), 0)
        draw = ImageDraw.Draw(canvas)
        draw.text((24, 16), ch, fill=255, font=font)
        width = rng.choice([0, 0, 0, 1, 1])
        for _ in range(width):
            canvas = canvas.filter(ImageFilter.MaxFilter(3))
        shear = rng.uniform(-0.35, 0.35)
        angle = rng.uniform(-18, 18)
        sx, sy = rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2)
        canvas = canvas.transform(canvas.size, Image.AFFINE,
                                  (sx, shear, -shear * 56, 0, sy, 0),
                                  resample=Image.BILINEAR)
        canvas = canvas.rotate(angle, resample=Image.BILINEAR)
        canvas = canvas.filter(ImageFilter.GaussianBlur(rng.uniform(0.3, 0.9)))
        norm = mnist_normalize(canvas)
        if norm is None:
            continue
        images.append(norm)
        labels.append(idx + 1)
    return np.stack(images), np.asarray(labels, dtype=np.uint8)


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="data")
    parser.add_argument("--npm-cache", default=os.path.join("/tmp", "oskit-npm"))
    parser.add_argument("--fashion-per-class", type=int, default=500)
    parser.add_argument("--letters", type=int, default=6000)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    copy_mnist(args.npm_cache, args.out)
    print("mnist: train and test IDX files copied")

    images, labels = load_fashion(args.npm_cache, args.fashion_per_class)
    write_idx_images(os.path.join(args.out, "fashion-images-idx3-ubyte.gz"), images)
    write_idx_labels(os.path.join(args.out, "fashion-labels-idx1-ubyte.gz"), labels)
    print(f"fashion: {len(labels)} images")

    images, labels = render_letters(args.letters, args.seed)
    write_idx_images(os.path.join(args.out, "letters-images-idx3-ubyte.gz"), images)
    write_idx_labels(os.path.join(args.out, "letters-labels-idx1-ubyte.gz"), labels)
    print(f"letters: {len(labels)} images")


if __name__ == "__main__":
    main()
