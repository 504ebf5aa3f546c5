//! Problem instances, allocations and the width lower bounds shared by every
//! solver in the crate.
//!
//! Populations are accepted as raw inhabitant counts and normalized
//! internally; every letter-scaled quantity (`share * letters`) uses the
//! normalized share. Cities are kept sorted ascending by population, ties
//! broken by cap and then by id.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::layout::LetterDistribution;

/// Absolute tolerance for fractional comparisons.
pub const ABS_TOL: f64 = 1e-9;
/// Fairness audits accept an error of this fraction of the letter budget.
pub const FAIRNESS_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Small => "Small",
            SizeClass::Medium => "Medium",
            SizeClass::Large => "Large",
        })
    }
}

/// Stratification key: federal state plus size class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub state: String,
    pub size_class: SizeClass,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.state, self.size_class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub id: String,
    pub name: String,
    /// Inhabitants; normalized to shares when an instance is validated.
    pub population: f64,
    /// Maximum number of letters the city accepts.
    pub cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<GroupKey>,
}

impl City {
    pub fn new(id: impl Into<String>, population: f64, cap: f64) -> Self {
        let id = id.into();
        City {
            name: id.clone(),
            id,
            population,
            cap,
            group_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("the roster is empty")]
    EmptyRoster,
    #[error("city {id}: fair share of {share} letters exceeds its cap of {cap}")]
    InfeasibleCap { id: String, share: f64, cap: f64 },
    #[error("{what} must be positive and finite (got {value})")]
    NonPositiveInput { what: String, value: f64 },
    #[error("probabilities sum to {total}, expected 1")]
    ProbabilityMassError { total: f64 },
    #[error("allocation has {got} entries, instance has {expected} cities")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A validated, normalized instance.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemInstance {
    cities: Vec<City>,
    raw_caps: Vec<f64>,
    shares: Vec<f64>,
    source_index: Vec<usize>,
    letters: u64,
    budget: usize,
    #[serde(skip)]
    warnings: Vec<String>,
}

impl ProblemInstance {
    /// Validates and normalizes a roster.
    ///
    /// Caps above the letter budget are clamped to it; the assumption on
    /// oversized cities is evaluated against the original caps.
    pub fn validate(
        raw_cities: Vec<City>,
        letters: u64,
        budget: usize,
    ) -> Result<Self, ModelError> {
        if raw_cities.is_empty() {
            return Err(ModelError::EmptyRoster);
        }
        if letters == 0 {
            return Err(ModelError::NonPositiveInput {
                what: "letter budget".into(),
                value: 0.0,
            });
        }
        if budget == 0 {
            return Err(ModelError::NonPositiveInput {
                what: "outreach budget".into(),
                value: 0.0,
            });
        }
        for c in &raw_cities {
            if !(c.population.is_finite() && c.population > 0.0) {
                return Err(ModelError::NonPositiveInput {
                    what: format!("population of {}", c.id),
                    value: c.population,
                });
            }
            if !(c.cap.is_finite() && c.cap > 0.0) {
                return Err(ModelError::NonPositiveInput {
                    what: format!("cap of {}", c.id),
                    value: c.cap,
                });
            }
        }

        let mut indexed: Vec<(usize, City)> = raw_cities.into_iter().enumerate().collect();
        indexed.sort_by(|(_, a), (_, b)| {
            a.population
                .partial_cmp(&b.population)
                .unwrap_or(Ordering::Equal)
                .then(a.cap.partial_cmp(&b.cap).unwrap_or(Ordering::Equal))
                .then_with(|| a.id.cmp(&b.id))
        });

        let total: f64 = indexed.iter().map(|(_, c)| c.population).sum();
        let ell = letters as f64;
        let mut warnings = Vec::new();
        let mut cities = Vec::with_capacity(indexed.len());
        let mut raw_caps = Vec::with_capacity(indexed.len());
        let mut shares = Vec::with_capacity(indexed.len());
        let mut source_index = Vec::with_capacity(indexed.len());
        let mut clamped = 0usize;
        for (src, mut city) in indexed {
            raw_caps.push(city.cap);
            if city.cap > ell {
                city.cap = ell;
                clamped += 1;
            }
            let share = city.population / total;
            let fair = share * ell;
            if fair > city.cap * (1.0 + 1e-12) + ABS_TOL {
                return Err(ModelError::InfeasibleCap {
                    id: city.id,
                    share: fair,
                    cap: city.cap,
                });
            }
            shares.push(share);
            source_index.push(src);
            cities.push(city);
        }
        if clamped > 0 {
            log::info!("clamped {clamped} caps to the letter budget {letters}");
            warnings.push(format!("{clamped} caps clamped to {letters} letters"));
        }
        let non_monotone = cities
            .windows(2)
            .filter(|w| w[1].cap < w[0].cap - ABS_TOL)
            .count();
        if non_monotone > 0 {
            log::warn!("{non_monotone} adjacent city pairs have decreasing caps");
            warnings.push(format!(
                "caps not monotone in population ({non_monotone} pairs)"
            ));
        }

        Ok(ProblemInstance {
            cities,
            raw_caps,
            shares,
            source_index,
            letters,
            budget,
            warnings,
        })
    }

    pub fn n(&self) -> usize {
        self.cities.len()
    }

    pub fn letters(&self) -> u64 {
        self.letters
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// A copy of this instance with a different outreach budget.
    pub fn with_budget(&self, budget: usize) -> Self {
        ProblemInstance {
            budget,
            ..self.clone()
        }
    }

    pub fn cities(&self) -> &[City] {
        &self.cities
    }

    pub fn city(&self, i: usize) -> &City {
        &self.cities[i]
    }

    /// Normalized population shares, ascending.
    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    /// Caps after clamping to the letter budget.
    pub fn caps(&self) -> Vec<f64> {
        self.cities.iter().map(|c| c.cap).collect()
    }

    pub fn cap(&self, i: usize) -> f64 {
        self.cities[i].cap
    }

    /// Cap as given, before clamping.
    pub fn raw_cap(&self, i: usize) -> f64 {
        self.raw_caps[i]
    }

    /// Position of city `i` in the roster passed to [`ProblemInstance::validate`].
    pub fn source_index(&self, i: usize) -> usize {
        self.source_index[i]
    }

    /// Expected letters under ex-ante fairness, `share * letters`.
    pub fn fair_share(&self, i: usize) -> f64 {
        self.shares[i] * self.letters as f64
    }

    pub fn fair_shares(&self) -> Vec<f64> {
        let ell = self.letters as f64;
        self.shares.iter().map(|s| s * ell).collect()
    }

    /// Caps rounded down, as used by the integral pricing oracles.
    pub fn integral_caps(&self) -> Vec<u64> {
        self.cities
            .iter()
            .map(|c| (c.cap + ABS_TOL).floor() as u64)
            .collect()
    }

    /// Cities whose share exceeds `1/t`.
    pub fn oversized(&self, t: usize) -> Vec<usize> {
        let limit = 1.0 / t as f64;
        (0..self.n()).filter(|&i| self.shares[i] > limit).collect()
    }

    /// Oversized cities whose original cap is below the letter budget.
    pub fn assumption_violations(&self, t: usize) -> Vec<usize> {
        let ell = self.letters as f64;
        self.oversized(t)
            .into_iter()
            .filter(|&i| self.raw_caps[i] < ell - ABS_TOL)
            .collect()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// The cities as given (original caps), in sorted order.
    pub fn raw_cities(&self) -> Vec<City> {
        self.cities
            .iter()
            .zip(&self.raw_caps)
            .map(|(c, &cap)| City { cap, ..c.clone() })
            .collect()
    }

    /// Content hash over the normalized roster, letters and budget.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("letters={};budget={}\n", self.letters, self.budget));
        for (c, raw) in self.cities.iter().zip(&self.raw_caps) {
            hasher.update(format!(
                "{}\t{}\t{:?}\t{:?}\n",
                c.id, c.name, c.population, raw
            ));
        }
        hex::encode(hasher.finalize())
    }

    pub fn width_profile(&self) -> WidthProfile {
        let widths: Vec<f64> = (0..self.n())
            .map(|i| self.fair_share(i) / self.cap(i))
            .collect();
        let total = widths.iter().sum();
        WidthProfile { widths, total }
    }

    /// Smallest budget not excluded by the width bound.
    pub fn lower_bound_t(&self) -> usize {
        self.width_profile().lower_bound_t()
    }
}

/// Minimum selection probabilities `fair_share / cap`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthProfile {
    pub widths: Vec<f64>,
    pub total: f64,
}

impl WidthProfile {
    /// `ceil(total)`, tolerant of round-off just above an integer.
    pub fn lower_bound_t(&self) -> usize {
        ((self.total - ABS_TOL).ceil().max(1.0)) as usize
    }
}

/// Letters per city. Integral allocations store whole numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(pub Vec<f64>);

impl Allocation {
    pub fn zeros(n: usize) -> Self {
        Allocation(vec![0.0; n])
    }

    pub fn letters(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Cities receiving a positive number of letters.
    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] > ABS_TOL).collect()
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|&&a| a > ABS_TOL).count()
    }

    pub fn is_integral(&self) -> bool {
        self.0.iter().all(|a| (a - a.round()).abs() <= ABS_TOL)
    }

    /// Checks the letter sum, caps and (optionally) the support bound.
    pub fn violations(&self, instance: &ProblemInstance, t: Option<usize>) -> Vec<String> {
        let mut out = Vec::new();
        if self.0.len() != instance.n() {
            out.push(format!("length {} != {}", self.0.len(), instance.n()));
            return out;
        }
        let ell = instance.letters() as f64;
        if (self.total() - ell).abs() > ABS_TOL * ell.max(1.0) {
            out.push(format!("sum {} != {}", self.total(), ell));
        }
        for (i, &a) in self.0.iter().enumerate() {
            if a < -ABS_TOL {
                out.push(format!("city {i} negative ({a})"));
            }
            if a > instance.cap(i) + ABS_TOL {
                out.push(format!("city {i} over cap ({a} > {})", instance.cap(i)));
            }
        }
        if let Some(t) = t {
            if self.support_size() > t {
                out.push(format!("support {} > {t}", self.support_size()));
            }
        }
        out
    }

    /// Key used to deduplicate columns: letters rounded to 1e-9.
    pub(crate) fn dedup_key(&self) -> Vec<i64> {
        self.0.iter().map(|a| (a * 1e9).round() as i64).collect()
    }
}

/// Per-city expectation under a distribution.
pub fn expected_letters(dist: &LetterDistribution) -> Result<Vec<f64>, ModelError> {
    let total = dist.total_mass();
    if (total - 1.0).abs() > ABS_TOL {
        return Err(ModelError::ProbabilityMassError { total });
    }
    let n = dist.n();
    let mut out = vec![0.0; n];
    for e in dist.entries() {
        for (o, a) in out.iter_mut().zip(e.allocation.letters()) {
            *o += e.probability * a;
        }
    }
    Ok(out)
}

/// Outcome of checking a distribution against an instance.
#[derive(Debug, Clone, Serialize)]
pub struct FairnessAudit {
    pub expected: Vec<f64>,
    pub selection_probability: Vec<f64>,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub fair: bool,
    pub max_support: usize,
    /// (entry, problem) pairs for allocations breaking sum or cap constraints.
    pub allocation_violations: Vec<(usize, String)>,
    /// Cities selected less often than their minimum width.
    pub width_violations: Vec<usize>,
}

impl FairnessAudit {
    /// Fair, every allocation valid and `t`-bounded, and the width bound met.
    pub fn passes(&self, t: usize) -> bool {
        self.fair
            && self.max_support <= t
            && self.allocation_violations.is_empty()
            && self.width_violations.is_empty()
    }
}

pub fn audit(
    instance: &ProblemInstance,
    dist: &LetterDistribution,
) -> Result<FairnessAudit, ModelError> {
    if dist.n() != instance.n() {
        return Err(ModelError::DimensionMismatch {
            expected: instance.n(),
            got: dist.n(),
        });
    }
    let expected = expected_letters(dist)?;
    let ell = instance.letters() as f64;
    let tolerance = FAIRNESS_REL_TOL * ell;
    let max_abs_error = expected
        .iter()
        .enumerate()
        .map(|(i, e)| (e - instance.fair_share(i)).abs())
        .fold(0.0, f64::max);
    let mut selection_probability = vec![0.0; instance.n()];
    let mut allocation_violations = Vec::new();
    let mut max_support = 0;
    for (k, e) in dist.entries().iter().enumerate() {
        for i in e.allocation.support() {
            selection_probability[i] += e.probability;
        }
        max_support = max_support.max(e.allocation.support_size());
        for v in e.allocation.violations(instance, None) {
            allocation_violations.push((k, v));
        }
    }
    let widths = instance.width_profile().widths;
    let width_violations = (0..instance.n())
        .filter(|&i| selection_probability[i] < widths[i] - ABS_TOL)
        .collect();
    Ok(FairnessAudit {
        expected,
        selection_probability,
        max_abs_error,
        tolerance,
        fair: max_abs_error <= tolerance,
        max_support,
        allocation_violations,
        width_violations,
    })
}
