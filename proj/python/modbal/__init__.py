"""Modality-balance segmentation toolkit: python surface of the C++ core.

The heavy lifting lives in the compiled ``_modbal`` extension; this package
re-exports its operations.
"""

from ._modbal import (  # noqa: F401
    PreferenceState,
    SamplePreference,
    __version__,
    available_modalities,
    default_intensity_profile,
    dice_ce,
    dice_score,
    generate_dataset,
    hausdorff,
    knowledge_gap,
    missing_rates,
    pixel_distill,
    poly_lr,
    proto_distill,
    proto_distill_grad,
    prototypes,
    relative_preference,
    run_experiment,
    sample_presence,
    seg_loss,
    similarity_field,
    task_mask,
    total_loss,
    upsample,
)
