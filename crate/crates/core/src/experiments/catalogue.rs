use super::config::{validate_config, ExperimentConfig};
use crate::error::{LabError, Result};

/// Bundled experiments as `(name, TOML source)`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("counterexample-n2", include_str!("../../experiments/counterexample-n2.toml")),
    ("quadratic-gaussian", include_str!("../../experiments/quadratic-gaussian.toml")),
    ("comparison-pairs", include_str!("../../experiments/comparison-pairs.toml")),
    ("stability-ladder", include_str!("../../experiments/stability-ladder.toml")),
    ("truncation-ladder", include_str!("../../experiments/truncation-ladder.toml")),
    ("power-utility", include_str!("../../experiments/power-utility.toml")),
    ("entropic", include_str!("../../experiments/entropic.toml")),
];

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_bundled(name: &str) -> Result<ExperimentConfig> {
    let text = bundled_source(name).ok_or_else(|| {
        let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
        LabError::NotFound(format!("bundled experiment `{name}` (known: {})", names.join(", ")))
    })?;
    validate_config(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_config_validates_under_its_own_name() {
        for (name, _) in BUNDLED {
            let c = load_bundled(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&c.name, name);
        }
        assert!(matches!(load_bundled("nope"), Err(LabError::NotFound(_))));
    }

    #[test]
    fn catalogue_covers_every_check_kind() {
        let mut kinds = std::collections::BTreeSet::new();
        for (name, _) in BUNDLED {
            for c in load_bundled(name).unwrap().checks {
                kinds.insert(c.kind());
            }
        }
        for k in [
            "y0", "apriori", "norm_bounds", "comparison", "stability", "ladder", "reference", "oracle",
            "exp_martingale", "kazamaki", "validate",
        ] {
            assert!(kinds.contains(k), "{k}");
        }
    }
}
