//! Margin transforms, threshold selection, optimization and uncertainty.

pub mod gpd;
pub mod margins;
pub mod nelder_mead;
pub mod optimize;
pub mod uncertainty;

pub use gpd::{empirical_quantile, fit_gpd, fit_gpd_with_floor, threshold_stability, GpdFit};
pub use margins::{transform_margins, unit_frechet_to_pareto, Dataset};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use optimize::{
    averaged_censored_fit, averaged_with_seeds, default_starts, optimize, select_exceedances,
    FitOptions, FitResult, FreeParams, GodambeEstimate, StartOutcome,
};
pub use uncertainty::{
    contiguous_blocks, default_rel_step, godambe, jackknife_se, score_ratio_statistic,
    JackknifeResult,
};
