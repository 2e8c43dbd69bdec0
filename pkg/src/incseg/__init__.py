"""Training-free class-incremental semantic segmentation engine.

Pipeline: consolidate class-agnostic masks into region label maps, embed the
regions with a frozen backbone (external stage), register per-class
prototypes incrementally, classify regions by thresholded cosine similarity,
and evaluate the continual protocol (forgetting, task invariance, backward
transfer).
"""

from .classify import BG_CLASS, PredictedLabelMap, Prediction, classify, classify_batch, render
from .errors import DegenerateInputError, FormatError
from .evaluate import (
    IGNORE_LABEL,
    ConfusionMatrix,
    EvalReport,
    accumulate,
    compute_report,
    format_report,
    segment_quality,
)
from .formats import (
    load_bank,
    read_embeddings,
    read_label_map,
    read_mask_set,
    save_bank,
    write_embeddings,
    write_label_map,
    write_mask_set,
)
from .maskagg import (
    AggregatedMask,
    RawMask,
    RawMaskSet,
    RegionProposal,
    RoiPatch,
    aggregate,
    crop_rois,
    extract_regions,
    filter_by_area,
    sort_by_area,
)
from .protocol import (
    UNASSIGNED,
    BackwardTransferRow,
    ImageRecord,
    RegionLabel,
    RunConfig,
    StepSnapshot,
    TaskProtocol,
    backward_transfer_report,
    format_backward_transfer,
    label_regions,
    parse_split,
    run_protocol,
)
from .prototypes import (
    UNKNOWN_CLASS,
    ClassPrototypes,
    PrototypeBank,
    RegionEmbedding,
    compute_prototype,
    kmeans_subcluster,
    l2_normalize,
    lloyd_kmeans,
    variance_score,
)

__version__ = "0.1.0"
