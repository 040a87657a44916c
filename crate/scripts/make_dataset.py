#!/usr/bin/env python3
"""Generate the bundled evaluation dataset under data/.

The images are derived from the sample photos shipped with scikit-image,
matplotlib and scikit-learn (see data/README.md for sources and licenses).
Each category is filled with deterministic variants of its source photos:
crops, mirror images and brightness/contrast changes.

Writes:
    data/gallery/<category>/<name>.jpg
    data/labels.tsv        path<TAB>label,label
    data/prompts.tsv       prompt<TAB>category,category
    data/detections.tsv    path<TAB>prompt<TAB>score<TAB>box   (scripted detector)
    data/models/*.model    stub extractor and scripted detector manifests

    python3 scripts/make_dataset.py
"""

import os
import random
import sys

import matplotlib
import numpy as np
import skimage
import sklearn
from PIL import Image, ImageEnhance, ImageOps

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(os.path.dirname(HERE), "data")
SKIMAGE = os.path.join(os.path.dirname(skimage.__file__), "data")
MPL = os.path.join(matplotlib.get_data_path(), "sample_data")
SKLEARN = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "images")
LONGEST_SIDE = 320


def src(base, name):
    return Image.open(os.path.join(base, name)).convert("RGB")


def lfw_face(i):
    faces = np.load(os.path.join(SKIMAGE, "lfw_subset.npy"))
    arr = (faces[i] * 255).round().astype(np.uint8)
    return Image.fromarray(arr, "L").resize((100, 100), Image.BICUBIC).convert("RGB")


# category -> (labels, list of (name, source image))
SOURCES = {
    "cat": (["cat", "animal"], [("chelsea", lambda: src(SKIMAGE, "chelsea.png"))] * 10),
    "people": (
        ["people"],
        [("astronaut", lambda: src(SKIMAGE, "astronaut.png"))] * 3
        + [("hopper", lambda: src(MPL, "grace_hopper.jpg"))] * 3
        + [("cameraman", lambda: src(SKIMAGE, "camera.png"))] * 2
        + [("face", lambda: lfw_face(0)), ("face", lambda: lfw_face(40))],
    ),
    "food": (["food"], [("coffee", lambda: src(SKIMAGE, "coffee.png"))] * 10),
    "motorcycle": (
        ["motorcycle", "vehicle"],
        [("motorcycle", lambda: src(SKIMAGE, "motorcycle_left.png"))] * 5
        + [("motorcycle", lambda: src(SKIMAGE, "motorcycle_right.png"))] * 5,
    ),
    "building": (["building"], [("temple", lambda: src(SKLEARN, "china.jpg"))] * 6),
    "general": (
        ["general"],
        [
            ("rocket", lambda: src(SKIMAGE, "rocket.jpg")),
            ("hubble", lambda: src(SKIMAGE, "hubble_deep_field.jpg")),
            ("coins", lambda: src(SKIMAGE, "coins.png")),
            ("brick", lambda: src(SKIMAGE, "brick.png")),
            ("grass", lambda: src(SKIMAGE, "grass.png")),
            ("gravel", lambda: src(SKIMAGE, "gravel.png")),
            ("flower", lambda: src(SKLEARN, "flower.jpg")),
            ("color", lambda: src(SKIMAGE, "color.png")),
            ("moon", lambda: src(SKIMAGE, "moon.png")),
            ("clock", lambda: src(SKIMAGE, "clock_motion.png")),
        ],
    ),
}

PROMPTS = [
    ("cat", ["cat"]),
    ("animal", ["animal"]),
    ("person", ["people"]),
    ("food", ["food"]),
    ("motorcycle", ["motorcycle"]),
    ("building", ["building"]),
]


def variant(img, rng, first):
    """The untouched photo first, then random crops, flips and color changes."""
    if not first:
        w, h = img.size
        f = rng.uniform(0.6, 0.92)
        cw, ch = int(w * f), int(h * f)
        x, y = rng.randint(0, w - cw), rng.randint(0, h - ch)
        img = img.crop((x, y, x + cw, y + ch))
        if rng.random() < 0.5:
            img = ImageOps.mirror(img)
        img = ImageEnhance.Brightness(img).enhance(rng.uniform(0.75, 1.25))
        img = ImageEnhance.Contrast(img).enhance(rng.uniform(0.8, 1.2))
    scale = LONGEST_SIDE / max(img.size)
    if scale < 1:
        img = img.resize((round(img.width * scale), round(img.height * scale)), Image.BICUBIC)
    return img


def main():
    rng = random.Random(2024)
    gallery = os.path.join(OUT, "gallery")
    images = []  # (relative path, labels, size)
    for category, (labels, items) in SOURCES.items():
        os.makedirs(os.path.join(gallery, category), exist_ok=True)
        seen = {}
        for name, load in items:
            n = seen.get(name, 0)
            seen[name] = n + 1
            img = variant(load(), rng, first=n == 0)
            rel = f"gallery/{category}/{name}{n + 1:02d}.jpg"
            img.save(os.path.join(OUT, rel), quality=88)
            images.append((rel, labels, img.size))

    with open(os.path.join(OUT, "labels.tsv"), "w", encoding="utf-8") as f:
        for rel, labels, _ in images:
            f.write(f"{rel}\t{','.join(labels)}\n")
    with open(os.path.join(OUT, "prompts.tsv"), "w", encoding="utf-8") as f:
        for prompt, cats in PROMPTS:
            f.write(f"{prompt}\t{','.join(cats)}\n")

    # The scripted detector fires on images of the prompted category, mostly
    # with confident boxes, and now and then on other images with low scores.
    with open(os.path.join(OUT, "detections.tsv"), "w", encoding="utf-8") as f:
        f.write("# path\tprompt\tscore\tbox (full or x0,y0,x1,y1 in pixels)\n")
        for rel, labels, (w, h) in images:
            for prompt, cats in PROMPTS:
                if set(labels) & set(cats):
                    score = round(rng.uniform(0.12, 0.95), 3)
                    if rng.random() < 0.5:
                        box = "full"
                    else:
                        x0, y0 = round(w * rng.uniform(0.0, 0.2)), round(h * rng.uniform(0.0, 0.2))
                        x1, y1 = round(w * rng.uniform(0.8, 1.0)), round(h * rng.uniform(0.8, 1.0))
                        box = f"{x0},{y0},{x1},{y1}"
                    f.write(f"{rel}\t{prompt}\t{score}\t{box}\n")
                elif rng.random() < 0.15:
                    f.write(f"{rel}\t{prompt}\t{round(rng.uniform(0.02, 0.12), 3)}\tfull\n")

    models = os.path.join(OUT, "models")
    os.makedirs(models, exist_ok=True)
    with open(os.path.join(models, "quadrant.model"), "w", encoding="utf-8") as f:
        f.write("model_id = quadrant\nrole = extractor\nbackend = quadrant-stub\n")
    with open(os.path.join(models, "scripted.model"), "w", encoding="utf-8") as f:
        f.write(
            "model_id = scripted\nrole = detector\nbackend = scripted-stub\n"
            "fixtures = ../detections.tsv\nfixtures_root = ..\n"
        )
    print(f"{len(images)} images written to {gallery}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
