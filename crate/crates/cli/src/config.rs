//! Run configuration: a TOML file plus command-line overrides.

use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use outreach::apportion::DEFAULT_PIVOTS_PER_ROW;
use outreach::pricing::NODE_BUDGET;
use outreach::{
    BucketRule, CapRule, DeviationScope, MinBudgetMode, SizeThresholds, TargetFunction,
};

/// Default of [`RunConfig::colgen_max_iterations`].
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GreedyEqual,
    Buckets,
    ColumnGeneration,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GreedyEqual => "greedy-equal",
            Method::Buckets => "buckets",
            Method::ColumnGeneration => "column-generation",
        }
    }

    /// Per-group minimum budget rule matching this solver.
    pub fn min_budget_mode(self) -> MinBudgetMode {
        match self {
            Method::GreedyEqual => MinBudgetMode::GreedyEqual,
            Method::Buckets => MinBudgetMode::Buckets,
            Method::ColumnGeneration => MinBudgetMode::ColumnGeneration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub letters: Option<u64>,
    pub budget: Option<usize>,
    pub method: Method,
    pub targets: String,
    pub seed: u64,
    pub deviation_scope: DeviationScope,
    pub bucket_rule: BucketRule,
    pub allow_oversized: bool,
    pub min_budget_mode: Option<MinBudgetMode>,
    /// Pivot limit per master row when column generation searches group
    /// minimum budgets; 0 searches exhaustively.
    pub colgen_pivots_per_row: usize,
    /// Master iteration limit of the proportional column generation;
    /// 0 runs until optimal.
    pub colgen_max_iterations: usize,
    /// Node budget of each full proportional pricing search.
    pub colgen_pricing_nodes: usize,
    pub cap_rule: CapRule,
    pub thresholds: SizeThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            letters: None,
            budget: None,
            method: Method::GreedyEqual,
            targets: "sqrt".into(),
            seed: 0,
            deviation_scope: DeviationScope::default(),
            bucket_rule: BucketRule::default(),
            allow_oversized: false,
            min_budget_mode: None,
            colgen_pivots_per_row: DEFAULT_PIVOTS_PER_ROW,
            colgen_max_iterations: DEFAULT_MAX_ITERATIONS,
            colgen_pricing_nodes: NODE_BUDGET,
            cap_rule: CapRule::default(),
            thresholds: SizeThresholds::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn target_function(&self) -> anyhow::Result<TargetFunction> {
        Ok(TargetFunction::from_str(&self.targets)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.cap_rule.validate()?;
        if !(self.thresholds.medium_from > 0.0
            && self.thresholds.large_from > self.thresholds.medium_from)
        {
            bail!("size thresholds must be positive and increasing");
        }
        self.target_function()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let cfg: RunConfig = toml::from_str(
            r#"
            letters = 60
            budget = 4
            method = "buckets"
            targets = "constant"
            seed = 9
            deviation_scope = "all-cities"
            [cap_rule]
            mid_cap = 300.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Buckets);
        assert_eq!(cfg.cap_rule.mid_cap, 300.0);
        assert_eq!(cfg.cap_rule.small_threshold, 500.0);
        assert_eq!(cfg.deviation_scope, DeviationScope::AllCities);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_rules() {
        assert!(toml::from_str::<RunConfig>("lettres = 3").is_err());
        let cfg: RunConfig = toml::from_str("[cap_rule]\nsmall_frac = 2.0").unwrap();
        assert!(cfg.validate().is_err());
    }
}
