"""Segmentation-dialogue dataset tooling: curation, parsing, transforms, matching, evaluation."""

from segdial.mask import (
    BBox,
    Polygon,
    RasterMask,
    Rle,
    area,
    bbox_of,
    mask_iou,
    mask_union,
    rasterize,
    rle_decode,
    rle_encode,
)
from segdial.matching import Assignment, assign_targets, build_cost_matrix, hungarian
from segdial.metrics import (
    ApBlock,
    ApProtocol,
    ApReport,
    EvalValidationError,
    PredictionInstance,
    SemSegScore,
    evaluate_ap,
    evaluate_semseg,
)
from segdial.curation import (
    CurationError,
    DropEntry,
    FilterResult,
    ImageRecord,
    InstanceAnnotation,
    PromptJob,
    annotation_digest,
    build_caption_prompt,
    build_instseg_prompt,
    build_qa_prompt,
    filter_dataset,
)
from segdial.clients import FixtureModelClient, HttpModelClient, JobResult, ModelClientError, run_jobs
from segdial.parsing import (
    DialogueRecord,
    Diagnostic,
    ParseResult,
    Provenance,
    SegRef,
    SerializedRecord,
    SerializedTurn,
    TextSpan,
    Turn,
    from_training_record,
    parse_caption_response,
    parse_instseg_response,
    parse_sid_response,
    render_dialogue,
    to_training_record,
)
from segdial.transforms import (
    TASK_MODES,
    TASK_TEMPLATES,
    MergedAnnotation,
    TransformError,
    append_task_template,
    to_pure_text,
    to_semantic,
)
from segdial.dataset_io import (
    CocoDataset,
    DatasetError,
    RecordError,
    load_coco,
    read_predictions,
    read_records,
    write_records,
)

__version__ = "0.1.0"
