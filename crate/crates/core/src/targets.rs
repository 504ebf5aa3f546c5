//! Target-letter functions and the scaling factor that makes target widths
//! add up to the outreach budget.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ProblemInstance, ABS_TOL};

const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error("budget {t} outside the attainable width range [{min}, {max}]")]
    WidthOutOfRange { t: usize, min: f64, max: f64 },
    #[error("unknown target function '{0}' (expected sqrt, constant or proportional)")]
    UnknownFunction(String),
    #[error("invalid custom target table: {0}")]
    InvalidTable(String),
}

/// Monotone map from population share to an unscaled letter target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetFunction {
    Sqrt,
    Constant,
    Proportional,
    /// Tabulated `(share, value)` pairs, interpolated linearly and held
    /// constant beyond the first and last points.
    Custom(Vec<(f64, f64)>),
}

impl TargetFunction {
    pub fn custom(mut points: Vec<(f64, f64)>) -> Result<Self, TargetError> {
        if points.is_empty() {
            return Err(TargetError::InvalidTable("no points".into()));
        }
        if points
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite() || *y < 0.0)
        {
            return Err(TargetError::InvalidTable(
                "non-finite or negative entry".into(),
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(TargetError::InvalidTable(
                "values must be non-decreasing".into(),
            ));
        }
        Ok(TargetFunction::Custom(points))
    }

    pub fn name(&self) -> &'static str {
        match self {
            TargetFunction::Sqrt => "sqrt",
            TargetFunction::Constant => "constant",
            TargetFunction::Proportional => "proportional",
            TargetFunction::Custom(_) => "custom",
        }
    }

    pub fn eval(&self, share: f64) -> f64 {
        match self {
            TargetFunction::Sqrt => share.sqrt(),
            TargetFunction::Constant => 1.0,
            TargetFunction::Proportional => share,
            TargetFunction::Custom(pts) => {
                let k = pts.partition_point(|p| p.0 <= share);
                if k == 0 {
                    pts[0].1
                } else if k == pts.len() {
                    pts[k - 1].1
                } else {
                    let (x0, y0) = pts[k - 1];
                    let (x1, y1) = pts[k];
                    y0 + (y1 - y0) * (share - x0) / (x1 - x0)
                }
            }
        }
    }
}

impl FromStr for TargetFunction {
    type Err = TargetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sqrt" => Ok(TargetFunction::Sqrt),
            "constant" => Ok(TargetFunction::Constant),
            "proportional" => Ok(TargetFunction::Proportional),
            _ => Err(TargetError::UnknownFunction(s.to_string())),
        }
    }
}

impl fmt::Display for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetProfile {
    /// Target letters per city.
    pub tau: Vec<f64>,
    /// `fair_share / tau` per city.
    pub widths: Vec<f64>,
    pub kappa: f64,
    pub function_name: String,
}

impl TargetProfile {
    pub fn total_width(&self) -> f64 {
        self.widths.iter().sum()
    }

    fn build(instance: &ProblemInstance, f: &TargetFunction, kappa: f64) -> Self {
        let tau: Vec<f64> = (0..instance.n())
            .map(|i| scaled_target(instance, f, kappa, i))
            .collect();
        let widths = tau
            .iter()
            .enumerate()
            .map(|(i, t)| instance.fair_share(i) / t)
            .collect();
        TargetProfile {
            tau,
            widths,
            kappa,
            function_name: f.name().to_string(),
        }
    }
}

fn scaled_target(instance: &ProblemInstance, f: &TargetFunction, kappa: f64, i: usize) -> f64 {
    let fair = instance.fair_share(i);
    fair.max(instance.cap(i).min(kappa * f.eval(instance.shares()[i])))
}

fn total_width(instance: &ProblemInstance, f: &TargetFunction, kappa: f64) -> f64 {
    (0..instance.n())
        .map(|i| instance.fair_share(i) / scaled_target(instance, f, kappa, i))
        .sum()
}

/// Finds the smallest scale at which the target widths sum to `t`.
pub fn solve_kappa(
    instance: &ProblemInstance,
    f: &TargetFunction,
    t: usize,
) -> Result<TargetProfile, TargetError> {
    let n = instance.n();
    let min_width = instance.width_profile().total;
    let tf = t as f64;
    if tf > n as f64 || tf < min_width - ABS_TOL {
        return Err(TargetError::WidthOutOfRange {
            t,
            min: min_width,
            max: n as f64,
        });
    }
    if t == n {
        return Ok(TargetProfile::build(instance, f, 0.0));
    }
    let values: Vec<f64> = instance.shares().iter().map(|&s| f.eval(s)).collect();
    let f_min = values
        .iter()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !f_min.is_finite() {
        return Err(TargetError::WidthOutOfRange {
            t,
            min: n as f64,
            max: n as f64,
        });
    }
    let cap_max = instance.caps().into_iter().fold(0.0, f64::max);
    let mut lo = 0.0;
    let mut hi = cap_max / f_min;
    if total_width(instance, f, hi) > tf + ABS_TOL {
        // Some city has a zero target; the width cannot reach t.
        return Err(TargetError::WidthOutOfRange {
            t,
            min: total_width(instance, f, hi),
            max: n as f64,
        });
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if total_width(instance, f, mid) <= tf {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let kappa = refine(instance, &values, hi, tf).unwrap_or(hi);
    Ok(TargetProfile::build(instance, f, kappa))
}

/// Closed-form solve on the linear piece containing `kappa`: cities whose
/// target is neither clamped at the fair share nor at the cap contribute
/// `fair / (kappa * f)`.
fn refine(instance: &ProblemInstance, values: &[f64], kappa: f64, t: f64) -> Option<f64> {
    let mut fixed = 0.0;
    let mut free = 0.0;
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for i in 0..instance.n() {
        let fair = instance.fair_share(i);
        let cap = instance.cap(i);
        let raw = kappa * values[i];
        if values[i] <= 0.0 || raw <= fair {
            fixed += 1.0;
            if values[i] > 0.0 {
                hi = hi.min(fair / values[i]);
            }
        } else if raw >= cap {
            fixed += fair / cap;
            lo = lo.max(cap / values[i]);
        } else {
            free += fair / values[i];
            lo = lo.max(fair / values[i]);
            hi = hi.min(cap / values[i]);
        }
    }
    let rest = t - fixed;
    if free <= 0.0 || rest <= 0.0 {
        return None;
    }
    let k = free / rest;
    let slack = 1e-12 * k.max(1.0);
    (k >= lo - slack && k <= hi + slack).then_some(k.clamp(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn named_functions() {
        assert_eq!(TargetFunction::Sqrt.eval(0.25), 0.5);
        assert_eq!(TargetFunction::Constant.eval(0.3), 1.0);
        assert_eq!(TargetFunction::Proportional.eval(0.1), 0.1);
        assert!(matches!(
            "cubic".parse::<TargetFunction>(),
            Err(TargetError::UnknownFunction(_))
        ));
        assert_eq!(
            "SQRT".parse::<TargetFunction>().unwrap(),
            TargetFunction::Sqrt
        );
    }

    #[test]
    fn custom_interpolates() {
        let f = TargetFunction::custom(vec![(0.5, 3.0), (0.0, 1.0)]).unwrap();
        assert_eq!(f.eval(0.25), 2.0);
        assert_eq!(f.eval(-1.0), 1.0);
        assert_eq!(f.eval(2.0), 3.0);
        assert!(TargetFunction::custom(vec![(0.0, 2.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn t_equal_n_gives_fair_shares() {
        let inst = fixtures::example1();
        let p = solve_kappa(&inst, &TargetFunction::Sqrt, inst.n()).unwrap();
        for i in 0..inst.n() {
            assert!((p.tau[i] - inst.fair_share(i)).abs() < 1e-12);
            assert!((p.widths[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn integral_width_bound_gives_caps() {
        // Two cities with width 1/2 each: t = 1 equals the width sum.
        let inst = fixtures::two_halves();
        let p = solve_kappa(&inst, &TargetFunction::Sqrt, 1).unwrap();
        for i in 0..inst.n() {
            assert!((p.tau[i] - inst.cap(i)).abs() < 1e-9);
        }
    }

    #[test]
    fn example_one_sqrt_t4() {
        let inst = fixtures::example1();
        let p = solve_kappa(&inst, &TargetFunction::Sqrt, 4).unwrap();
        assert!((p.total_width() - 4.0).abs() < 1e-9);
        for i in 0..inst.n() {
            assert!(p.tau[i] >= inst.fair_share(i) - 1e-12);
            assert!(p.tau[i] <= inst.cap(i) + 1e-12);
        }
    }

    #[test]
    fn out_of_range() {
        let inst = fixtures::example1();
        assert!(matches!(
            solve_kappa(&inst, &TargetFunction::Sqrt, 2),
            Err(TargetError::WidthOutOfRange { .. })
        ));
        assert!(matches!(
            solve_kappa(&inst, &TargetFunction::Sqrt, 9),
            Err(TargetError::WidthOutOfRange { .. })
        ));
    }
}
