"""Quality-diversity generative sampling on a biased shapes domain."""

from ._qdgs import (  # noqa: F401
    Archive,
    ConfigError,
    EvaluationRejected,
    InternalError,
    IoError,
    MeasureSpec,
    QdgsError,
    augment_variants,
    branch,
    calibrate_standard_normal,
    cell_index,
    composite_objective,
    density_map,
    disparate_impact,
    fd_gradient,
    log_rank_weights,
    normalized,
    ranked_ascent,
    reg_penalty_from_distance,
    run_qdgs_shapes,
    run_random_shapes,
    shapes,
)

__version__ = "0.1.0"
