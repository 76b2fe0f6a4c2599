"""Command-line front end.

Exit codes: 0 success, 1 validation failure (bad flags, malformed or
inconsistent inputs), 2 I/O failure. --seed and --jobs resolve as
flag > SEGDIAL_SEED/SEGDIAL_JOBS environment variable > --config JSON file
> built-in default.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from segdial import clients, curation, dataset_io, mask, matching, metrics, parsing, transforms

ENV_PREFIX = "SEGDIAL_"
_REPORT_FIELDS = ("AP50", "AP75", "mAP", "AP-small", "AP-medium", "AP-large")


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); flag problems are validation
        raise CliUsageError(f"{self.prog}: error: {message}")


def _common_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="deterministic seed (default 0)")
    common.add_argument("--jobs", type=int, default=None, help="worker parallelism (default 1)")
    common.add_argument("--config", type=Path, default=None, help="JSON config file")
    return common


def _resolve_runtime(args) -> tuple[int, int]:
    cfg = {}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise CliUsageError(f"{args.config}: config must be a JSON object")

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise CliUsageError(f"{ENV_PREFIX}{key.upper()} must be an integer, got {env!r}")
        if key in cfg:
            if not isinstance(cfg[key], int):
                raise CliUsageError(f"config key {key!r} must be an integer")
            return cfg[key]
        return default

    seed = pick(args.seed, "seed", 0)
    jobs = pick(args.jobs, "jobs", 1)
    if jobs < 1:
        raise CliUsageError("--jobs must be >= 1")
    return seed, jobs


def _sibling(path: Path, suffix: str) -> Path:
    return path.parent / (path.stem + suffix)


def _write_jsonl(path: Path, objs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# --- curate -------------------------------------------------------------------


def _cmd_curate(args) -> int:
    _, jobs_n = _resolve_runtime(args)
    dataset = dataset_io.load_coco(args.input)
    for w in dataset.warnings:
        print(f"warning: {w}", file=sys.stderr)
    result = curation.filter_dataset(dataset.images, args.min_image_side, args.min_area)
    dropped_out = args.dropped_out or _sibling(args.out, ".dropped.jsonl")
    _write_jsonl(
        dropped_out,
        (
            {
                "schema_version": dataset_io.SCHEMA_VERSION,
                "image_id": d.image_id,
                "annotation_id": d.annotation_id,
                "reason": d.reason,
            }
            for d in result.dropped
        ),
    )

    builders = {
        "instseg": curation.build_instseg_prompt,
        "qa": curation.build_qa_prompt,
        "caption": curation.build_caption_prompt,
    }
    prompt_jobs = [builders[args.task](img) for img in result.kept]

    outcomes: list = [None] * len(prompt_jobs)
    if args.client == "fixture":
        if args.fixture_dir is None:
            raise CliUsageError("--client fixture requires --fixture-dir")
        client = clients.FixtureModelClient(args.fixture_dir)
        outcomes = clients.run_jobs(
            prompt_jobs, client, max_retries=args.max_retries, parallelism=jobs_n
        )
    elif args.client == "http":
        if args.endpoint is None:
            raise CliUsageError("--client http requires --endpoint")
        token = os.environ.get(args.auth_token_env) if args.auth_token_env else None
        client = clients.HttpModelClient(
            args.endpoint, auth_token=token, image_root=args.image_root
        )
        outcomes = clients.run_jobs(
            prompt_jobs, client, max_retries=args.max_retries, parallelism=jobs_n
        )

    def job_obj(job, res):
        return {
            "schema_version": dataset_io.SCHEMA_VERSION,
            "kind": job.kind,
            "image_id": job.image_id,
            "file_name": job.file_name,
            "prompt_text": job.prompt_text,
            "annotation_digest": job.annotation_digest,
            "response": res.response if res else None,
            "error": res.error if res else None,
            "attempts": res.attempts if res else 0,
        }

    _write_jsonl(args.out, (job_obj(j, r) for j, r in zip(prompt_jobs, outcomes)))
    failed = sum(1 for r in outcomes if r is not None and r.error is not None)
    print(
        f"curate: kept {len(result.kept)} image(s), dropped {len(result.dropped)} entr"
        f"{'y' if len(result.dropped) == 1 else 'ies'}, wrote {len(prompt_jobs)} job(s)"
        + (f", {failed} failed" if failed else "")
    )
    return 0


# --- parse --------------------------------------------------------------------


def _cmd_parse(args) -> int:
    dataset = dataset_io.load_coco(args.annotations)
    ann_by_image = {
        img.image_id: {a.instance_id: a for a in img.annotations} for img in dataset.images
    }
    records: list[parsing.SerializedRecord] = []
    diag_rows: list[dict] = []

    def note(file_name, image_id, diag: parsing.Diagnostic):
        diag_rows.append(
            {
                "schema_version": dataset_io.SCHEMA_VERSION,
                "file": file_name,
                "image_id": image_id,
                "severity": diag.severity,
                "line": diag.line,
                "message": diag.message,
            }
        )

    responses_dir = Path(args.responses)
    if not responses_dir.is_dir():
        raise FileNotFoundError(f"response directory {responses_dir} does not exist")
    files = sorted(responses_dir.glob("*.txt"), key=lambda p: p.name)
    n_parsed_files = 0
    for path in files:
        try:
            image_id = int(path.stem)
        except ValueError:
            note(path.name, None, parsing.Diagnostic("error", None, "file name is not an image id"))
            continue
        if image_id not in ann_by_image:
            note(
                path.name,
                image_id,
                parsing.Diagnostic("error", None, f"image {image_id} not in the annotations"),
            )
            continue
        text = path.read_text(encoding="utf-8")
        anns = ann_by_image[image_id]
        n_parsed_files += 1
        if args.task == "instseg":
            recs, diags = parsing.parse_instseg_records(text, anns, image_id=image_id)
            for d in diags:
                note(path.name, image_id, d)
            records.extend(parsing.to_training_record(r) for r in recs)
        else:
            parse = parsing.parse_sid_response if args.task == "qa" else parsing.parse_caption_response
            result = parse(text, anns, image_id=image_id)
            for d in result.diagnostics:
                note(path.name, image_id, d)
            if result.record is not None:
                records.append(parsing.to_training_record(result.record))

    dataset_io.write_records(records, args.out)
    diagnostics_out = args.diagnostics or _sibling(args.out, ".diagnostics.jsonl")
    _write_jsonl(diagnostics_out, diag_rows)
    print(
        f"parse: {len(records)} record(s) from {n_parsed_files} response(s), "
        f"{len(diag_rows)} diagnostic(s)"
    )
    return 0


# --- transform ------------------------------------------------------------------


_TRANSFORM_TARGETS = {
    "semseg": "semseg",
    "instseg": "instseg",
    "sid-semseg": "sid_semseg",
    "sid-instseg": "sid_instseg",
    "pure": "pure_text",
}


def _cmd_transform(args) -> int:
    seed, _ = _resolve_runtime(args)
    target = _TRANSFORM_TARGETS[args.to]
    needs_annotations = target in ("semseg", "sid_semseg")
    ann_map = None
    if needs_annotations:
        if args.annotations is None:
            raise CliUsageError(f"--to {args.to} requires --annotations")
        dataset = dataset_io.load_coco(args.annotations)
        ann_map = {a.instance_id: a for img in dataset.images for a in img.annotations}

    serialized = dataset_io.read_records(args.in_path)
    out_records = []
    merged_rows = []
    for n, srec in enumerate(serialized, 1):
        try:
            record = parsing.from_training_record(srec, ann_map)
            if target == "pure_text":
                record = transforms.to_pure_text(record)
            elif target in ("semseg", "sid_semseg"):
                record, merged = transforms.to_semantic(record, ann_map)
                for m in merged:
                    rle = mask.rle_encode(m.mask)
                    merged_rows.append(
                        {
                            "schema_version": dataset_io.SCHEMA_VERSION,
                            "image_id": srec.image_id,
                            "turn_index": m.turn_index,
                            "instance_id": m.instance_id,
                            "category_id": m.category_id,
                            "label_name": m.label_name,
                            "member_ids": list(m.member_ids),
                            "rle": {"size": [rle.height, rle.width], "counts": list(rle.counts)},
                        }
                    )
            record = transforms.append_task_template(record, target, rng_seed=seed)
            out_records.append(parsing.to_training_record(record))
        except ValueError as exc:
            raise transforms.TransformError(f"record {n} (image {srec.image_id}): {exc}") from exc

    dataset_io.write_records(out_records, args.out)
    if args.merged_out is not None:
        _write_jsonl(args.merged_out, merged_rows)
    print(f"transform: wrote {len(out_records)} {args.to} record(s)")
    return 0


# --- match ----------------------------------------------------------------------


def _cmd_match(args) -> int:
    dataset = dataset_io.load_coco(args.gt)
    preds = dataset_io.read_predictions(args.preds)
    known = {img.image_id for img in dataset.images}
    bad = sorted({p.image_id for p in preds} - known)
    if bad:
        raise metrics.EvalValidationError([f"prediction for unknown image_id {i}" for i in bad])
    by_image: dict[int, list[metrics.PredictionInstance]] = {}
    for p in preds:
        by_image.setdefault(p.image_id, []).append(p)

    rows = []
    for img in dataset.images:
        img_preds = by_image.get(img.image_id, [])
        assignment = matching.assign_targets(
            [p.mask for p in img_preds],
            [a.mask for a in img.annotations],
            w_iou=args.w_iou,
            w_dice=args.w_dice,
        )
        rows.append(
            {
                "schema_version": dataset_io.SCHEMA_VERSION,
                "image_id": img.image_id,
                "pairs": [
                    [i, img.annotations[j].instance_id] for i, j in assignment.pairs
                ],
                "unmatched_pred_indices": list(assignment.unmatched_predictions),
                "unmatched_gt_instance_ids": [
                    img.annotations[j].instance_id for j in assignment.unmatched_groundtruths
                ],
                "total_cost": assignment.total_cost,
            }
        )
    _write_jsonl(args.out, rows)
    print(f"match: wrote assignments for {len(rows)} image(s)")
    return 0


# --- evaluate / report ------------------------------------------------------------


def _inst_metrics_obj(report: metrics.ApReport) -> dict:
    def block(b: metrics.ApBlock) -> dict:
        return {
            "AP50": b.AP50,
            "AP75": b.AP75,
            "mAP": b.mAP,
            "AP-small": b.AP_small,
            "AP-medium": b.AP_medium,
            "AP-large": b.AP_large,
        }

    return {
        "schema_version": dataset_io.SCHEMA_VERSION,
        "mode": "inst",
        "metrics": block(report),
        "per_category": {str(cat): block(b) for cat, b in sorted(report.per_category.items())},
    }


def _render_report(obj: dict) -> str:
    mode = obj.get("mode")
    met = obj.get("metrics", {})
    if mode == "inst":
        lines = [f"{name:<10}{float(met[name]):.3f}" for name in _REPORT_FIELDS]
    elif mode == "sem":
        lines = [f"{name:<10}{float(met[name]):.3f}" for name in ("gIoU", "cIoU")]
    else:
        raise CliUsageError(f"report mode must be 'inst' or 'sem', got {mode!r}")
    return "\n".join(lines)


def _cmd_evaluate(args) -> int:
    dataset = dataset_io.load_coco(args.gt)
    for w in dataset.warnings:
        print(f"warning: {w}", file=sys.stderr)
    preds = dataset_io.read_predictions(args.preds)
    if args.mode == "inst":
        report = metrics.evaluate_ap(
            preds, dataset.images, categories=set(dataset.categories)
        )
        obj = _inst_metrics_obj(report)
    else:
        by_image: dict[int, mask.RasterMask] = {}
        for n, p in enumerate(preds):
            if p.image_id in by_image:
                raise metrics.EvalValidationError(
                    [f"prediction {n}: duplicate whole-image mask for image {p.image_id}"]
                )
            by_image[p.image_id] = p.mask
        gts = {
            img.image_id: (
                mask.mask_union([a.mask for a in img.annotations])
                if img.annotations
                else mask.RasterMask.zeros(img.width, img.height)
            )
            for img in dataset.images
        }
        score = metrics.evaluate_semseg(by_image, gts)
        obj = {
            "schema_version": dataset_io.SCHEMA_VERSION,
            "mode": "sem",
            "metrics": {"gIoU": score.gIoU, "cIoU": score.cIoU},
            "warnings": list(score.warnings),
        }
        for w in score.warnings:
            print(f"warning: {w}", file=sys.stderr)
    print(_render_report(obj))
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    return 0


def _cmd_report(args) -> int:
    with open(args.in_path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise CliUsageError(f"{args.in_path}: report must be a JSON object")
    print(_render_report(obj))
    return 0


# --- split ----------------------------------------------------------------------


def _cmd_split(args) -> int:
    seed, _ = _resolve_runtime(args)
    if not (0.0 <= args.eval_fraction <= 1.0):
        raise CliUsageError("--eval-fraction must be in [0, 1]")
    dataset_io.read_records(args.in_path)  # validate before touching outputs
    with open(args.in_path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    indices = list(range(len(lines)))
    random.Random(seed).shuffle(indices)
    n_eval = int(len(lines) * args.eval_fraction + 0.5)
    eval_set = set(indices[:n_eval])
    with open(args.train_out, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(line if line.endswith("\n") else line + "\n" for n, line in enumerate(lines) if n not in eval_set)
    with open(args.eval_out, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(line if line.endswith("\n") else line + "\n" for n, line in enumerate(lines) if n in eval_set)
    print(f"split: {len(lines) - n_eval} train / {n_eval} eval record(s)")
    return 0


# --- wiring ----------------------------------------------------------------------


def build_parser() -> _Parser:
    common = _common_parser()
    parser = _Parser(prog="segdial", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("curate", parents=[common], help="filter a dataset and build annotator jobs")
    p.add_argument("--input", type=Path, required=True, help="COCO-style instance JSON")
    p.add_argument("--min-image-side", type=int, default=512)
    p.add_argument("--min-area", type=int, default=400)
    p.add_argument("--task", choices=("instseg", "qa", "caption"), required=True)
    p.add_argument("--client", choices=("none", "fixture", "http"), default="none")
    p.add_argument("--fixture-dir", type=Path, help="directory of {image_id}.txt responses")
    p.add_argument("--endpoint", help="annotator HTTP endpoint")
    p.add_argument("--auth-token-env", help="environment variable holding the bearer token")
    p.add_argument("--image-root", type=Path, help="directory with the image files")
    p.add_argument("--max-retries", type=int, default=2)
    p.add_argument("--out", type=Path, required=True, help="jobs JSONL output")
    p.add_argument("--dropped-out", type=Path, help="dropped report (default <out>.dropped.jsonl)")
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("parse", parents=[common], help="parse annotator responses into records")
    p.add_argument("--responses", type=Path, required=True, help="directory of {image_id}.txt files")
    p.add_argument("--annotations", type=Path, required=True, help="COCO-style instance JSON")
    p.add_argument("--task", choices=("instseg", "qa", "caption"), required=True)
    p.add_argument("--out", type=Path, required=True, help="records JSONL output")
    p.add_argument("--diagnostics", type=Path, help="diagnostics JSONL (default <out>.diagnostics.jsonl)")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("transform", parents=[common], help="re-target records to another task mode")
    p.add_argument("--in", dest="in_path", type=Path, required=True, help="records JSONL input")
    p.add_argument("--to", choices=tuple(_TRANSFORM_TARGETS), required=True)
    p.add_argument("--annotations", type=Path, help="COCO JSON (required for semantic targets)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--merged-out", type=Path, help="merged-annotation JSONL for semantic targets")
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("match", parents=[common], help="assign predicted masks to ground truth")
    p.add_argument("--preds", type=Path, required=True, help="predictions JSONL")
    p.add_argument("--gt", type=Path, required=True, help="COCO-style instance JSON")
    p.add_argument("--w-iou", type=float, default=1.0)
    p.add_argument("--w-dice", type=float, default=0.0)
    p.add_argument("--out", type=Path, required=True, help="assignments JSONL output")
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("--gt", type=Path, required=True, help="COCO-style instance JSON")
    p.add_argument("--preds", type=Path, required=True, help="predictions JSONL")
    p.add_argument("--mode", choices=("inst", "sem"), required=True)
    p.add_argument("--out", type=Path, help="JSON report output")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="render a JSON report as text")
    p.add_argument("--in", dest="in_path", type=Path, required=True, help="JSON report")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("split", parents=[common], help="seeded train/eval split of a records file")
    p.add_argument("--in", dest="in_path", type=Path, required=True, help="records JSONL input")
    p.add_argument("--train-out", type=Path, required=True)
    p.add_argument("--eval-out", type=Path, required=True)
    p.add_argument("--eval-fraction", type=float, default=0.1)
    p.set_defaults(func=_cmd_split)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            print("segdial: error: a command is required", file=sys.stderr)
            return 1
        return args.func(args)
    except CliUsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
