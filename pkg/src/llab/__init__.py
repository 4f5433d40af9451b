"""Latency-trace analysis for periodically reconfiguring links.

The toolkit covers the full loop: capture or synthesize a probe trace,
recover the reconfiguration phase and slice the trace into periods,
average the within-period latency profile, fit per-period latency models
over growing measurement windows, and score how well those models rank and
bound the periods against what a full period reveals.
"""

from .core import (
    ABSENT,
    CSV_HEADER,
    DEGRADED,
    DELAY_SPLIT_EPSILON_NS,
    DIRECTIONS,
    GOOD,
    LatencySample,
    Trace,
    TraceMetadata,
    ValidationReport,
    infer_metadata,
    parse_trace,
    validate_trace,
    write_trace,
)
from .classify import (
    AuprcPoint,
    Confusion,
    DsaPoint,
    FitGrid,
    PeriodLabel,
    PrCurve,
    ThresholdSelection,
    WindowScore,
    auprc,
    auprc_eval,
    auprc_from_grid,
    confusion,
    discounted_availability,
    dsa_eval,
    fit_grid,
    label_period,
    pr_curve,
    quantile_mse_eval,
    quantile_mse_from_grid,
    score_period,
    select_threshold_for_fpr,
    service_availability,
    window_bins,
)
from .errors import (
    AllTiesAtThreshold,
    BadMagic,
    BindFailure,
    DuplicateSeq,
    EmptyHistogram,
    EmptyInput,
    EmptyTrace,
    InvalidConfig,
    InvalidQ,
    InvalidRange,
    InvalidWindow,
    LlabError,
    MalformedRow,
    MissingSeries,
    NoCompletePeriod,
    NoFeasibleThreshold,
    OutOfTailRegion,
    SingleClass,
    SocketFailure,
    TooFew,
    TooShort,
    Truncated,
    UnsupportedVersion,
    ZeroVariance,
)
from .probe import (
    FLAG_SERVER_ECHO,
    HEADER_LEN,
    MAGIC,
    VERSION,
    ProbeConfig,
    ProbePacket,
    ProbeServer,
    decode_packet,
    encode_packet,
    pacing_errors_ns,
    run_client,
    run_server,
)
from .segment import (
    MeanCenteredProfile,
    PeriodSlice,
    PhaseDetection,
    Segmentation,
    SegmentationConfig,
    ThresholdEstimate,
    core_bounds,
    detect_edges,
    detect_phase,
    diff_series,
    mean_centered_profile,
    period_matrix,
    phase_histogram,
    profile_from_trace,
    refine_phase,
    robust_threshold,
    segment_trace,
    stable_core,
)
from .stats import (
    Empirical,
    FitConfig,
    FitMeta,
    FittedModel,
    Gaussian,
    Gmm,
    GpdTail,
    Uniform,
    empirical_quantile,
    exceedance_prob,
    fit_by_name,
    fit_empirical,
    fit_gaussian,
    fit_gmm,
    fit_gpd_topk,
    fit_uniform,
    model_from_json,
    model_to_json,
    quantile,
)
from .synth import (
    GaussianNoise,
    GroundTruth,
    MixtureNoise,
    ParetoTailNoise,
    PeriodMeanModel,
    SpikeTemplate,
    SynthConfig,
    generate,
)

__version__ = "0.1.0"
