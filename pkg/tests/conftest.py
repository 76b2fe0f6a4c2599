"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json
import math
import random

import numpy as np
import pytest

from segdial.curation import ImageRecord, InstanceAnnotation
from segdial.mask import RasterMask, Rle, rle_encode


def make_mask(width: int, height: int, pixels=()) -> RasterMask:
    """Mask from a list of (x, y) set pixels."""
    arr = np.zeros((height, width), dtype=bool)
    for x, y in pixels:
        arr[y, x] = True
    return RasterMask(arr)


def rect_mask(width: int, height: int, x0: int, y0: int, x1: int, y1: int) -> RasterMask:
    """Mask with the half-open pixel rectangle [x0, x1) x [y0, y1) set."""
    arr = np.zeros((height, width), dtype=bool)
    arr[y0:y1, x0:x1] = True
    return RasterMask(arr)


def random_mask(rng: random.Random, width: int, height: int, density=None) -> RasterMask:
    d = rng.random() if density is None else density
    arr = np.array(
        [[rng.random() < d for _ in range(width)] for _ in range(height)], dtype=bool
    )
    return RasterMask(arr)


def random_star_polygon(rng: random.Random, width: int, height: int, n_vertices: int = None):
    """A simple (non-self-intersecting) polygon star-shaped around its center."""
    n = n_vertices or rng.randint(3, 9)
    cx = rng.uniform(width * 0.25, width * 0.75)
    cy = rng.uniform(height * 0.25, height * 0.75)
    angles = sorted(rng.uniform(0, 2 * math.pi) for _ in range(n))
    max_r = min(cx, cy, width - cx, height - cy)
    vertices = []
    for a in angles:
        r = rng.uniform(0.3, max(0.31, max_r))
        vertices.append((cx + r * math.cos(a), cy + r * math.sin(a)))
    return tuple(vertices)


def ann_from_mask(instance_id: int, category_id: int, label: str, m: RasterMask) -> InstanceAnnotation:
    return InstanceAnnotation.from_geometry(
        instance_id=instance_id,
        category_id=category_id,
        label_name=label,
        geometry=rle_encode(m),
        width=m.width,
        height=m.height,
    )


def image_with_masks(image_id: int, masks, categories, labels=None, width=None, height=None) -> ImageRecord:
    """ImageRecord from parallel lists of masks and category ids."""
    first = masks[0]
    anns = tuple(
        ann_from_mask(
            instance_id=image_id * 1000 + k + 1,
            category_id=categories[k],
            label=(labels[k] if labels else f"cat{categories[k]}"),
            m=m,
        )
        for k, m in enumerate(masks)
    )
    return ImageRecord(
        image_id=image_id,
        width=width or first.width,
        height=height or first.height,
        file_name=f"{image_id:012d}.jpg",
        annotations=anns,
    )


def coco_payload(images, categories) -> dict:
    """COCO-style dict from [(id, w, h, anns)] where anns = [(ann_id, cat_id, segmentation)]."""
    out = {
        "images": [],
        "annotations": [],
        "categories": [{"id": cid, "name": name} for cid, name in categories],
    }
    for image_id, width, height, anns in images:
        out["images"].append(
            {
                "id": image_id,
                "width": width,
                "height": height,
                "file_name": f"{image_id:012d}.jpg",
            }
        )
        for ann_id, cat_id, segmentation in anns:
            out["annotations"].append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": cat_id,
                    "segmentation": segmentation,
                    "iscrowd": 0,
                }
            )
    return out


def rle_obj(m: RasterMask) -> dict:
    r = rle_encode(m)
    return {"size": [r.height, r.width], "counts": list(r.counts)}


def rect_polygon(x0: float, y0: float, x1: float, y1: float) -> list[float]:
    """Flat COCO polygon whose rasterization is the pixel rectangle [x0,x1) x [y0,y1)."""
    return [x0, y0, x1, y0, x1, y1, x0, y1]


def write_json(path, payload) -> None:
    path.write_text(json.dumps(payload), encoding="utf-8")


def random_micro_dataset(rng: random.Random):
    """Small random instance-evaluation problem in package and plain-dict form.

    Rectangles on canvases of mixed sizes so all three area bands occur;
    scores and geometry are quantized so ties are common.
    """
    from segdial.metrics import PredictionInstance

    side = rng.choice((16, 40, 128))
    cats = list(range(1, rng.randint(2, 4)))
    images_pkg = []
    images_dict = []
    all_gts = []  # (image_id, category, mask) for prediction jittering
    for image_id in range(1, rng.randint(2, 4)):
        masks = []
        gt_cats = []
        for _ in range(rng.randint(1, 4)):
            w = rng.choice((2, 3, 5, 9, 30, 100))
            h = rng.choice((2, 3, 5, 9, 30, 100))
            if w >= side or h >= side:
                w = min(w, side - 1)
                h = min(h, side - 1)
            x0 = rng.randrange(0, side - w)
            y0 = rng.randrange(0, side - h)
            masks.append(rect_mask(side, side, x0, y0, x0 + w, y0 + h))
            gt_cats.append(rng.choice(cats))
        images_pkg.append(image_with_masks(image_id, masks, gt_cats, width=side, height=side))
        images_dict.append(
            {
                "image_id": image_id,
                "annotations": [
                    {"category_id": c, "pixels": m.pixels}
                    for c, m in zip(gt_cats, masks)
                ],
            }
        )
        for c, m in zip(gt_cats, masks):
            all_gts.append((image_id, c, m))

    preds_pkg = []
    preds_dict = []
    extra_cat = max(cats) + 1
    for _ in range(rng.randint(0, 7)):
        score = rng.choice((0.2, 0.4, 0.6, 0.8, 1.0))
        if all_gts and rng.random() < 0.7:
            image_id, cat, gt_mask = rng.choice(all_gts)
            arr = gt_mask.pixels.copy()
            if rng.random() < 0.5:  # jitter: shift one column of context
                arr = np.roll(arr, rng.choice((-2, -1, 1, 2)), axis=rng.choice((0, 1)))
            if rng.random() < 0.2:
                cat = rng.choice(cats + [extra_cat])
            m = RasterMask(arr)
        else:
            image_id = rng.choice([im["image_id"] for im in images_dict])
            cat = rng.choice(cats + [extra_cat])
            w = min(rng.choice((2, 3, 5, 9, 30)), side - 1)
            x0 = rng.randrange(0, side - w)
            y0 = rng.randrange(0, side - w)
            m = rect_mask(side, side, x0, y0, x0 + w, y0 + w)
        preds_pkg.append(
            PredictionInstance(image_id=image_id, mask=m, score=score, category_id=cat)
        )
        preds_dict.append(
            {"image_id": image_id, "category_id": cat, "score": score, "pixels": m.pixels}
        )
    categories = set(cats) | {extra_cat}
    return preds_pkg, images_pkg, preds_dict, images_dict, categories


_DIALOGUE_WORDS = (
    "the", "a", "small", "red", "wooden", "cat", "dog", "table", "chair",
    "lamp", "near", "window", "holds", "beside", "on", "two", "bright",
)
_DIALOGUE_LABELS = ("cat", "dog", "table", "chair", "lamp", "keyboard", "sofa")


def random_canonical_dialogue(rng: random.Random):
    """Random marker-form dialogue already in canonical whitespace/tag form.

    Returns (text, annotations) where annotations maps every tagged instance
    id to the label used in its tag, so parsing yields no diagnostics and
    rendering the parsed record reproduces the text byte for byte.
    """
    annotations: dict[int, str] = {}
    next_id = rng.randrange(10, 10_000)
    lines = []
    for n in range(rng.randint(1, 6)):
        role = "person" if n % 2 == 0 else "robot"
        if role == "person":
            body = " ".join(rng.choice(_DIALOGUE_WORDS) for _ in range(rng.randint(1, 6)))
        else:
            parts = []
            for _ in range(rng.randint(1, 4)):
                if rng.random() < 0.6:
                    tags = []
                    for _ in range(rng.randint(1, 3)):
                        label = rng.choice(_DIALOGUE_LABELS)
                        annotations[next_id] = label
                        tags.append(f"<{next_id}; {label}>")
                        next_id += rng.randrange(1, 50)
                    parts.append(rng.choice(_DIALOGUE_WORDS) + " " + " ".join(tags))
                else:
                    parts.append(
                        " ".join(rng.choice(_DIALOGUE_WORDS) for _ in range(rng.randint(1, 3)))
                    )
            body = " ".join(parts)
        lines.append(f"<{role}>: {body}")
    return "\n".join(lines), annotations


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0FFEE)


# One line per acceptance check, printed after the run so a full `pytest`
# ends with a readable scorecard (see tests/test_acceptance.py).
ACCEPTANCE_REPORT: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance scorecard")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)
