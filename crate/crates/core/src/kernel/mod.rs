//! Time grids, simulated Brownian filtrations, the deterministic clock `A`
//! and factor `B` with `⟨M⟩ = ∫ BᵀB dA`.

pub mod cache;
pub mod clock;
pub mod grid;
pub mod scenario;

pub use cache::{load_or_simulate, read_cache, write_cache, CacheKey};
pub use clock::{b_norm_sq, ClockKind, ClockSpec, Factor, FactorSpec};
pub use grid::TimeGrid;
pub use scenario::{quad_form, quadratic_variation, Point, RandomSource, ScenarioBundle, ScenarioSpec};
