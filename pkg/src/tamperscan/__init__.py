"""Screening county-level election results for localized tampering.

The workflow: regress county demographics onto two-party Republican vote
share with a cross-validated elastic net, then ask whether any county's
residual is too large to be chance once you account for having searched
every county (the look-elsewhere effect). Includes vote-flip injection
for sensitivity analysis and a manifest-driven CLI for reproducible runs.
"""

from .anomaly import (
    AnomalyScore,
    McConfig,
    McGlobalSignificance,
    ResidualSet,
    WidthFit,
    analytic_sigma_curve,
    counting_noise_floor,
    fit_width,
    global_significance_analytic,
    global_significance_mc,
    local_significance,
    mc_extremes,
    rank_anomalies,
    residuals,
    score_counties,
    size_correlation,
    two_sided_p,
    write_ranking_csv,
    write_scores_json,
)
from .data_model import (
    CountyKey,
    CountyRecord,
    Dataset,
    StandardizationParams,
    SyntheticSpec,
    VoteTally,
    apply_standardization,
    compute_vote_share,
    generate_synthetic,
    standardize,
)
from .elastic_net import (
    CvResult,
    CvSettings,
    FitModel,
    PenaltyConfig,
    alpha_path,
    cross_validate,
    fit,
    load_model,
    objective,
    predict,
    save_model,
    soft_threshold,
)
from .errors import (
    ConfigError,
    ConvergenceWarning,
    DataError,
    FetchError,
    NumericalError,
    SchemaError,
    TamperscanError,
)
from .ingest import (
    assemble_dataset,
    clean_features,
    fetch_acs,
    load_dataset,
    parse_election,
    parse_table,
    save_dataset,
)
from .manifest import RunManifest, load_manifest, manifest_hash
from .scenarios import (
    BlindResult,
    BlindSpec,
    Direction,
    InjectionSpec,
    SweepCurve,
    blind_fit,
    counterfactual_winner,
    inject_flips,
    prepare_blind_context,
    run_injection_experiment,
    score_eval_set,
    state_summary,
    sweep,
    unconstrained_counties,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
