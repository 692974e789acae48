"""Python bindings for the causeloc localization engine."""

from ._core import (
    CauselocError,
    combined_score,
    decide,
    empirical_p_value,
    generation_plan,
    read_matrix,
    region_scores,
    reliability_mask,
    run_pipeline,
    score_voxels,
    select_region,
    simulate,
    two_stage_retrieval,
    write_matrix,
    zscore_normalize,
)

__all__ = [
    "CauselocError",
    "combined_score",
    "decide",
    "empirical_p_value",
    "generation_plan",
    "read_matrix",
    "region_scores",
    "reliability_mask",
    "run_pipeline",
    "score_voxels",
    "select_region",
    "simulate",
    "two_stage_retrieval",
    "write_matrix",
    "zscore_normalize",
]
