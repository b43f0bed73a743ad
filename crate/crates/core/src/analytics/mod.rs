//! A priori bound, norm bounds, comparison and stability statistics, and
//! exponential-martingale checks on solution fields.

pub mod bound;
pub mod comparison;
pub mod martingale;
pub mod norms;
pub mod report;
pub mod stability;

pub use bound::{apriori_bound, check_apriori, BoundProcess};
pub use comparison::comparison_check;
pub use martingale::{kazamaki_statistic, stochastic_exponential_mean, ExponentialMean, KazamakiStatistic};
pub use norms::{norm_bound_checks, IMPLIED_CONSTANT_CAP};
pub use report::CheckReport;
pub use stability::{stability_metrics, StabilityMetrics};
