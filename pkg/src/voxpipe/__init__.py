"""voxpipe: CT volume ingestion, segmentation, CRF refinement, software
raycasting and remote frame streaming at desk scale."""

__version__ = "0.1.0"

from .volume import (
    IntensityKind,
    SliceTriplet,
    Volume3D,
    WindowLevel,
    apply_window_level,
    clip_and_normalize,
    slice_triplet,
)
from .nifti import parse_nifti, parse_nifti_file
from .rawio import VolumeSidecar, read_raw_sidecar, write_raw_sidecar
from .metrics import (
    BalanceWeights,
    SegmentationScore,
    balancing_weights,
    bce,
    dice_per_case,
    score_masks,
    weighted_bce,
)
from .kmeans import KMeansResult, init_centroids, kmeans_segment
from .crf import (
    CrfParams,
    UnaryField,
    crf_energy,
    mean_field_refine,
    pairwise_weight,
    unary_from_probability,
)
from .roi import (
    DetectorBox,
    RoiBox,
    SliceGaussianFit,
    agreement_filter,
    classify_box,
    crop_roi,
    fit_slice_gaussian,
    mask_restrict,
    place_detector_boxes,
    select_slice_range,
)
