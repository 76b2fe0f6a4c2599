"""Mask evaluation: COCO-protocol average precision, gIoU, and cIoU.

The AP protocol: IoU thresholds 0.50:0.05:0.95, greedy score-ordered
matching (ties broken by input order) where each detection takes the
highest-IoU still-unmatched ground truth at or above the threshold,
101-point interpolated precision, area bands small/medium/large at the
32^2 and 96^2 pixel boundaries, and at most 100 detections kept per image
and category. Ground truths outside the active band are ignorable: a
detection may still match one, in which case the detection is excluded
from the precision/recall tallies instead of counting as a false positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from segdial.curation import ImageRecord
from segdial.mask import RasterMask, mask_iou

__all__ = [
    "ApBlock",
    "ApProtocol",
    "ApReport",
    "EvalValidationError",
    "PredictionInstance",
    "SemSegScore",
    "evaluate_ap",
    "evaluate_semseg",
]

# integer-over-100 forms so every consumer sees bit-identical thresholds
_IOU_THRESHOLDS = tuple((50 + 5 * k) / 100.0 for k in range(10))
_RECALL_POINTS = tuple(i / 100.0 for i in range(101))


class EvalValidationError(ValueError):
    """Raised when predictions reference unknown images/categories or malformed masks."""

    def __init__(self, offenders: Sequence[str]):
        self.offenders = tuple(offenders)
        preview = "; ".join(self.offenders[:5])
        more = f" (+{len(self.offenders) - 5} more)" if len(self.offenders) > 5 else ""
        super().__init__(f"{len(self.offenders)} invalid prediction(s): {preview}{more}")


@dataclass(frozen=True)
class PredictionInstance:
    """One predicted instance mask with an optional confidence."""

    image_id: int
    mask: RasterMask
    score: float = 1.0
    category_id: Optional[int] = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class ApProtocol:
    """Evaluation constants; the defaults are the ones reported everywhere."""

    iou_thresholds: tuple[float, ...] = _IOU_THRESHOLDS
    recall_points: tuple[float, ...] = _RECALL_POINTS
    max_dets: int = 100
    small_ceiling: int = 32 ** 2  # areas strictly below are small
    large_floor: int = 96 ** 2  # areas strictly above are large

    def bands(self):
        return (
            ("all", lambda a: True),
            ("small", lambda a: a < self.small_ceiling),
            ("medium", lambda a: self.small_ceiling <= a <= self.large_floor),
            ("large", lambda a: a > self.large_floor),
        )


@dataclass(frozen=True)
class ApBlock:
    """The six headline AP numbers."""

    mAP: float
    AP50: float
    AP75: float
    AP_small: float
    AP_medium: float
    AP_large: float


@dataclass(frozen=True)
class ApReport(ApBlock):
    per_category: Mapping[int, ApBlock]


@dataclass(frozen=True)
class SemSegScore:
    """Whole-image segmentation quality.

    gIoU averages per-image IoUs so every image weighs the same; cIoU pools
    intersections over pooled unions so pixels weigh the same.
    """

    gIoU: float
    cIoU: float
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class _Det:
    index: int  # global input position, the score tie-breaker
    score: float
    area: int
    mask: RasterMask


def _validate_predictions(
    preds: Sequence[PredictionInstance],
    images: Mapping[int, ImageRecord],
    known_categories: set[int],
) -> None:
    offenders = []
    for n, p in enumerate(preds):
        if p.image_id not in images:
            offenders.append(f"prediction {n}: unknown image_id {p.image_id}")
            continue
        if p.category_id is None:
            offenders.append(f"prediction {n}: missing category_id")
        elif p.category_id not in known_categories:
            offenders.append(f"prediction {n}: unknown category_id {p.category_id}")
        img = images[p.image_id]
        if (p.mask.width, p.mask.height) != (img.width, img.height):
            offenders.append(
                f"prediction {n}: mask is {p.mask.width}x{p.mask.height}, "
                f"image {p.image_id} is {img.width}x{img.height}"
            )
    if offenders:
        raise EvalValidationError(offenders)


def _greedy_match(
    ious: np.ndarray,
    gt_order: Sequence[int],
    gt_ignored: Sequence[bool],
    dets: Sequence[_Det],
    threshold: float,
    in_band,
) -> list[tuple[float, int, bool, bool]]:
    """Match one (image, category) cell at one threshold.

    Returns a (score, input_index, true_positive, ignored) row per detection.
    Ground truths are visited non-ignored first; once a detection holds a
    non-ignored match it never trades it for an ignored one.
    """
    taken: set[int] = set()
    rows = []
    for di, det in enumerate(dets):
        best = -1
        best_iou = 0.0
        for gi in gt_order:
            if gi in taken:
                continue
            if best >= 0 and not gt_ignored[best] and gt_ignored[gi]:
                break
            v = ious[di, gi]
            if best < 0:
                if v < threshold:
                    continue
            elif v <= best_iou:
                continue
            best = gi
            best_iou = v
        if best >= 0:
            taken.add(best)
            rows.append((det.score, det.index, not gt_ignored[best], bool(gt_ignored[best])))
        else:
            rows.append((det.score, det.index, False, not in_band(det.area)))
    return rows


def _average_precision(
    rows: list[tuple[float, int, bool, bool]],
    n_positive: int,
    recall_points: Sequence[float],
) -> float:
    rows = sorted(rows, key=lambda r: (-r[0], r[1]))
    tp = fp = 0
    tp_cum: list[int] = []
    fp_cum: list[int] = []
    for _, _, is_tp, ignored in rows:
        if ignored:
            continue
        tp += is_tp
        fp += not is_tp
        tp_cum.append(tp)
        fp_cum.append(fp)
    if not tp_cum:
        return 0.0
    tps = np.asarray(tp_cum, dtype=np.float64)
    fps = np.asarray(fp_cum, dtype=np.float64)
    recall = tps / n_positive
    precision = tps / (tps + fps)
    for i in range(len(precision) - 2, -1, -1):  # monotone envelope from the right
        if precision[i] < precision[i + 1]:
            precision[i] = precision[i + 1]
    spots = np.searchsorted(recall, recall_points, side="left")
    interpolated = [float(precision[s]) if s < len(precision) else 0.0 for s in spots]
    return sum(interpolated) / len(interpolated)


def evaluate_ap(
    preds: Sequence[PredictionInstance],
    gt_images: Sequence[ImageRecord],
    protocol: ApProtocol | None = None,
    categories: Optional[set[int]] = None,
) -> ApReport:
    """Score instance predictions against ground-truth images.

    `categories` widens the set of legal prediction categories beyond those
    present in the ground truth (e.g. the dataset's full category table);
    categories without any ground truth never contribute cells. Fields whose
    band contains no ground truth anywhere report 0.0.
    """
    protocol = protocol or ApProtocol()
    images: dict[int, ImageRecord] = {}
    for img in gt_images:
        if img.image_id in images:
            raise EvalValidationError([f"duplicate image_id {img.image_id} in ground truth"])
        images[img.image_id] = img
    gt_categories = {a.category_id for img in gt_images for a in img.annotations}
    known = set(categories) if categories is not None else set(gt_categories)
    known |= gt_categories
    _validate_predictions(preds, images, known)

    dets: dict[tuple[int, int], list[_Det]] = {}
    for n, p in enumerate(preds):
        entry = _Det(index=n, score=p.score, area=int(np.count_nonzero(p.mask.pixels)), mask=p.mask)
        dets.setdefault((p.image_id, p.category_id), []).append(entry)
    for key, cell in dets.items():
        cell.sort(key=lambda d: (-d.score, d.index))
        del cell[protocol.max_dets :]

    cats = sorted(gt_categories)
    image_order = list(images.values())
    iou_cache: dict[tuple[int, int], np.ndarray] = {}

    def cell_ious(img: ImageRecord, cat: int) -> tuple[np.ndarray, list[int]]:
        key = (img.image_id, cat)
        gt_idx = [k for k, a in enumerate(img.annotations) if a.category_id == cat]
        if key not in iou_cache:
            ds = dets.get(key, [])
            m = np.zeros((len(ds), len(gt_idx)), dtype=np.float64)
            for i, d in enumerate(ds):
                for j, k in enumerate(gt_idx):
                    m[i, j] = mask_iou(d.mask, img.annotations[k].mask)
            iou_cache[key] = m
        return iou_cache[key], gt_idx

    # cell value: mean-over-threshold AP list per (band, category), or None
    # when the band holds no ground truth for that category
    curves: dict[tuple[str, int], Optional[dict[float, float]]] = {}
    for band_name, in_band in protocol.bands():
        for cat in cats:
            rows_by_thr: dict[float, list] = {t: [] for t in protocol.iou_thresholds}
            n_positive = 0
            for img in image_order:
                ious, gt_idx = cell_ious(img, cat)
                gt_areas = [img.annotations[k].area for k in gt_idx]
                gt_ignored = [not in_band(a) for a in gt_areas]
                gt_order = sorted(range(len(gt_idx)), key=lambda gi: gt_ignored[gi])
                n_positive += sum(1 for ig in gt_ignored if not ig)
                ds = dets.get((img.image_id, cat), [])
                for t in protocol.iou_thresholds:
                    rows_by_thr[t].extend(
                        _greedy_match(ious, gt_order, gt_ignored, ds, t, in_band)
                    )
            if n_positive == 0:
                curves[(band_name, cat)] = None
            else:
                curves[(band_name, cat)] = {
                    t: _average_precision(rows_by_thr[t], n_positive, protocol.recall_points)
                    for t in protocol.iou_thresholds
                }

    def thr_mean(cell: dict[float, float]) -> float:
        return sum(cell.values()) / len(cell)

    def band_mean(band_name: str, pick) -> float:
        vals = [
            pick(curves[(band_name, cat)])
            for cat in cats
            if curves[(band_name, cat)] is not None
        ]
        return sum(vals) / len(vals) if vals else 0.0

    t50 = protocol.iou_thresholds[0]
    t75 = protocol.iou_thresholds[5]

    def block_for(cat: int) -> ApBlock:
        def banded(band_name: str, pick) -> float:
            cell = curves[(band_name, cat)]
            return pick(cell) if cell is not None else 0.0

        return ApBlock(
            mAP=banded("all", thr_mean),
            AP50=banded("all", lambda c: c[t50]),
            AP75=banded("all", lambda c: c[t75]),
            AP_small=banded("small", thr_mean),
            AP_medium=banded("medium", thr_mean),
            AP_large=banded("large", thr_mean),
        )

    return ApReport(
        mAP=band_mean("all", thr_mean),
        AP50=band_mean("all", lambda c: c[t50]),
        AP75=band_mean("all", lambda c: c[t75]),
        AP_small=band_mean("small", thr_mean),
        AP_medium=band_mean("medium", thr_mean),
        AP_large=band_mean("large", thr_mean),
        per_category={cat: block_for(cat) for cat in cats},
    )


def evaluate_semseg(
    preds: Mapping[int, RasterMask],
    gts: Mapping[int, RasterMask],
) -> SemSegScore:
    """Score one whole-image binary mask per image.

    Every ground-truth image counts: an image without a prediction scores
    IoU 0 and is reported in warnings. Predictions for unknown images are
    rejected.
    """
    if not gts:
        raise EvalValidationError(["no ground-truth images to evaluate"])
    unknown = [f"prediction for unknown image_id {i}" for i in preds if i not in gts]
    if unknown:
        raise EvalValidationError(unknown)
    warnings = []
    per_image = []
    inter_total = 0
    union_total = 0
    for image_id, gt in gts.items():
        pred = preds.get(image_id)
        if pred is None:
            warnings.append(f"image {image_id}: no prediction, scored as IoU 0")
            per_image.append(0.0)
            union_total += int(np.count_nonzero(gt.pixels))
            continue
        if pred.pixels.shape != gt.pixels.shape:
            raise EvalValidationError(
                [
                    f"image {image_id}: prediction is {pred.width}x{pred.height}, "
                    f"ground truth is {gt.width}x{gt.height}"
                ]
            )
        per_image.append(mask_iou(pred, gt))
        inter_total += int(np.count_nonzero(pred.pixels & gt.pixels))
        union_total += int(np.count_nonzero(pred.pixels | gt.pixels))
    giou = math.fsum(per_image) / len(per_image)
    ciou = inter_total / union_total if union_total else 0.0
    return SemSegScore(gIoU=giou, cIoU=ciou, warnings=tuple(warnings))
