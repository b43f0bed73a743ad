//! Drivers, terminal conditions, parameter sets and assumption probes.

pub mod builtin;
pub mod constraint;
pub mod moments;
pub mod params;
pub mod terminal;
pub mod validate;

pub use builtin::{
    constant, entropic, make_builtin, power_utility, pure_quadratic, scaled, step_family, zero, Driver,
    DriverOptions, DriverSpec, OptionValue, BUILTIN_NAMES,
};
pub use constraint::ConstraintSet;
pub use moments::{exponential_moment_estimate, MomentReport};
pub use params::{AlphaField, LambdaProcess, ParamSet, ParamSummary};
pub use terminal::TerminalCondition;
pub use validate::{ordering_evidence, validate_assumptions, ClauseReport, OrderingEvidence, SamplerPlan, ValidationReport};
