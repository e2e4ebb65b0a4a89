"""Viewpoint-bias evaluation toolkit for synchronized FPV/TPV tracking."""

from .geometry import (
    BinaryMask,
    Box,
    barycenter,
    boundary_pixels,
    box_fill_mask,
    box_iou,
    center_distance_bin,
    mask_iou,
    mask_to_box,
)
from .metrics import (
    DeltaScore,
    OverlapSeries,
    SequenceScore,
    auc,
    boundary_f,
    delta_sigma,
    gsr,
    nps,
    overlap_series,
    paired_t_test,
    region_j,
    success_curve,
    weighted_mean,
)
from .model import (
    ABSENT,
    DatasetManifest,
    SequencePair,
    Track,
    ViewSequence,
    load_manifest,
    save_manifest,
    validate_pair,
    visibility_runs,
)
from .runner import (
    ReplayDriver,
    RunRecord,
    SubprocessDriver,
    evaluate_dataset,
    extract_short_term,
    run_sope,
)

__version__ = "0.1.0"
