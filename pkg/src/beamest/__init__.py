"""Hierarchical beam-search channel estimation for sparse mmWave MIMO links.

The library models a single-path channel between two half-wavelength linear
arrays, estimates its angles and fading gain through a staged beam search
(overlapped design using log2(k+1) beams per stage, or the classic
non-overlapped one-beam-per-sub-range search), predicts the failure
probability in closed form and benchmarks everything with a reproducible
Monte Carlo harness.
"""

from .analysis import (
    BoundResult,
    PairwiseContext,
    SelfTermError,
    bessel_i0,
    marcum_q1,
    pairwise_error_fixed_alpha,
    pairwise_error_rayleigh,
    pcef_upper_bound,
)
from .arrays import (
    AngleGrid,
    ChannelRealization,
    MeasurementNoise,
    build_channel,
    measure_block,
    steering_vector,
    substream,
)
from .codebook import (
    BeamPatternMatrix,
    DegenerateDesignError,
    IndexRange,
    StageCodebook,
    SubrangePartition,
    build_stage_codebook,
    identity_pattern_matrix,
    overlapped_pattern_matrix,
    partition_subranges,
    synthesize_vector,
    target_profile,
)
from .estimator import (
    ALPHA_ESTIMATORS,
    ALPHA_FINAL,
    ALPHA_MMSE_ALL,
    NON_OVERLAPPED,
    OVERLAPPED,
    VARIANTS,
    EstimationTrace,
    EstimatorConfig,
    estimate_alpha_final_stage,
    estimate_alpha_mmse,
    fuse_measurements,
    run_baseline,
    run_estimation,
    select_path,
    slot_count,
    stage_count,
)
from .montecarlo import (
    ExperimentConfig,
    ResultTable,
    SweepPoint,
    bound_table,
    failure_indicator,
    power_for_energy,
    run_sweep,
    sample_channel,
    stage_gains,
)

__version__ = "0.1.0"
