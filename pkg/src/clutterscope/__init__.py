"""Reference-window scenario classification for adaptive radar detection.

Synthesizes primary/secondary snapshot windows under homogeneous,
partially-homogeneous and clutter-edge scenarios, and classifies windows by
penalized maximum likelihood over two clutter-variation models.
"""

from .classify import (
    AIC,
    BIC,
    GIC2,
    GIC4,
    ClassificationOutcome,
    HypothesisScore,
    MosRule,
    apply_rule,
    classify,
    compressed_ll_model1,
    compressed_ll_model2,
    estimate_rank,
    param_count,
    penalty_factor,
    rule_from_label,
    score_hypotheses,
)
from .estimate import (
    GammaEstimate,
    Model2SegmentEstimates,
    PrimaryEstimates,
    SubspaceEstimate,
    coordinate_update,
    cyclic_gamma_fit,
    fit_gamma_profiles,
    model2_segment_mles,
    primary_noise_and_eigs,
    subspace_estimate,
)
from .montecarlo import (
    ExperimentPlan,
    MetricReport,
    convergence_residual,
    report_to_csv,
    report_to_json,
    rms_edges,
    run_convergence_study,
    run_experiment,
    run_rank_study,
    wilson_halfwidth,
)
from .numkit import (
    EigenSystem,
    RngStream,
    hermitian_eig,
    sample_snapshots,
    steering_vector,
    unitary_from_first_column,
)
from .scenario import (
    ClutterBasis,
    DataWindow,
    ScenarioSpec,
    Segment,
    build_primary_clutter,
    draw_gamma_profile,
    load_window,
    save_window,
    segment_layout,
    synthesize_window,
    window_from_dict,
    window_to_dict,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
