"""Exact simulation of admissible Gibbs point processes and Monte Carlo checks
of variance asymptotics and normal approximation for stabilizing score sums."""

__version__ = "0.1.0"

from .errors import (
    ClanOverflow,
    DecayNotDetected,
    DegenerateVariance,
    DomainError,
    GibbsGeomError,
    InsufficientTail,
    InvalidParams,
    MissingClanData,
    MissingMarks,
    WindowTooSmall,
)
from .potentials import (
    AreaInteraction,
    HardCore,
    StraussPair,
    admissibility_margin,
    is_admissible,
    local_energy,
    pair_insertion_energy,
)
from .sampler import GibbsSample, GibbsSpec, PoissonSpec, SamplerOptions, sample_conditional, sample_gibbs, sample_poisson, void_probability
from .scores import (
    BirthGrowth,
    Clique,
    Constant,
    InsuranceClaim,
    KnnLength,
    MaximalPoint,
    RegionA,
    ScoreResult,
    VoronoiLength,
    birth_growth_accept,
    clique_score,
    insurance_claim,
    knn_length_score,
    maximal_indicator,
    score,
    total_score,
    truncated_total,
    voronoi_length_score,
)
from .spatial import (
    FREE,
    PERIODIC,
    NeighborIndex,
    PointConfiguration,
    Window,
    ball_volume,
    gamma_cube,
    kth_nearest_distance,
    neighbors_within,
)
from .stats import (
    ExperimentSpec,
    Quadrature,
    SummaryRecord,
    TailEstimate,
    clt_scan,
    conditional_variance_probe,
    estimate_c_pair,
    estimate_c_point,
    estimate_sigma2,
    kolmogorov_distance,
    tail_estimate,
    truncation_mismatch,
    variance_scan,
)
