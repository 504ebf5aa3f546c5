//! Layer-filling with equal heights: cities are placed in ascending order,
//! each drawn as rectangles whose height is the remaining vertical space
//! split evenly over the remaining layers, capped by the city's limit.

use serde::Serialize;
use thiserror::Error;

use crate::layout::{Layout, Segment};
use crate::model::ProblemInstance;

const SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Placement {
    pub city: usize,
    pub start: f64,
    pub end: f64,
    pub height: f64,
    /// Height came from the even split rather than the cap.
    pub selects_average: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedyTrace {
    pub t: usize,
    pub placements: Vec<Placement>,
    pub final_x: f64,
    /// Where the walk left `[0, t)` or stopped short of `t`.
    pub failure_point: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GreedyError {
    #[error("budget {t} below the width bound {bound}")]
    BelowWidthBound { t: usize, bound: usize },
    #[error("oversized cities {cities:?} have caps below the letter budget")]
    AssumptionViolated { cities: Vec<usize> },
    #[error("placement ran past t = {} (reached {:.6})", .0.t, .0.final_x)]
    BudgetExceeded(Box<GreedyTrace>),
    #[error("placement ended at {:.6}, before t = {}", .0.final_x, .0.t)]
    Underfilled(Box<GreedyTrace>),
    #[error("no vertical space left at position {x}")]
    NoSpace { x: f64 },
}

impl GreedyError {
    pub fn trace(&self) -> Option<&GreedyTrace> {
        match self {
            GreedyError::BudgetExceeded(t) | GreedyError::Underfilled(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GreedyOptions {
    /// Skip the check that oversized cities with caps below the letter
    /// budget stay within their caps.
    pub allow_oversized_caps: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    pub layout: Layout,
    pub trace: GreedyTrace,
}

pub fn greedy_equal(instance: &ProblemInstance, t: usize) -> Result<GreedyResult, GreedyError> {
    greedy_equal_with(instance, t, GreedyOptions::default())
}

pub fn greedy_equal_with(
    instance: &ProblemInstance,
    t: usize,
    options: GreedyOptions,
) -> Result<GreedyResult, GreedyError> {
    let bound = instance.lower_bound_t();
    if t < bound {
        return Err(GreedyError::BelowWidthBound { t, bound });
    }
    let violations = instance.assumption_violations(t);

    let ell = instance.letters() as f64;
    let tf = t as f64;
    let mut layout = Layout::new(Vec::new(), t, instance.letters(), instance.n());
    layout.greedy_equal = true;
    let mut placements = Vec::new();
    // Sorted fractional parts of all placed endpoints.
    let mut fracs: Vec<f64> = vec![0.0];
    let mut x = 0.0f64;

    for i in 0..instance.n() {
        let cap = instance.cap(i);
        let mut need = instance.fair_share(i);
        while need > 0.0 {
            let (height, next, average) = if x >= tf - SNAP {
                (cap, f64::INFINITY, false)
            } else {
                let layer = x.floor();
                let frac = x - layer;
                let k = fracs.partition_point(|&b| b <= frac + SNAP);
                let next = if k < fracs.len() {
                    layer + fracs[k]
                } else {
                    layer + 1.0
                };
                // Heights below are constant on [x, next); probe the middle.
                let mid = 0.5 * (x + next);
                let below = if x >= 1.0 {
                    layout.cumulative(mid - 1.0)
                } else {
                    0.0
                };
                let avg = (ell - below) / (tf - layer);
                (cap.min(avg), next, avg <= cap)
            };
            if height <= SNAP {
                return Err(GreedyError::NoSpace { x });
            }
            let room = height * (next - x);
            let end = if need <= room * (1.0 + 1e-15) {
                let e = x + need / height;
                need = 0.0;
                if (next - e).abs() < SNAP {
                    next
                } else {
                    e
                }
            } else {
                need -= height * (next - x);
                next
            };
            let seg = Segment {
                city: i,
                start: x,
                end,
                height,
            };
            // Merge with the city's previous piece at the same height.
            match layout.segments.last_mut() {
                Some(prev)
                    if prev.city == i
                        && (prev.height - height).abs() <= 1e-12
                        && (prev.end - x).abs() <= SNAP
                        && prev.start.floor() == x.floor() =>
                {
                    prev.end = end;
                }
                _ => layout.segments.push(seg),
            }
            match placements.last_mut() {
                Some(Placement {
                    city,
                    start: ps,
                    end: pe,
                    height: ph,
                    selects_average,
                }) if *city == i
                    && (*ph - height).abs() <= 1e-12
                    && *selects_average == average
                    && ps.floor() == x.floor() =>
                {
                    *pe = end;
                }
                _ => placements.push(Placement {
                    city: i,
                    start: x,
                    end,
                    height,
                    selects_average: average,
                }),
            }
            if end.is_finite() && end < tf {
                let f = end - end.floor();
                let k = fracs.partition_point(|&b| b < f);
                if fracs.get(k).is_none_or(|&b| (b - f).abs() > SNAP)
                    && (k == 0 || (fracs[k - 1] - f).abs() > SNAP)
                {
                    fracs.insert(k, f);
                }
            }
            x = end;
        }
    }

    let mut trace = GreedyTrace {
        t,
        placements,
        final_x: x,
        failure_point: None,
    };
    if (x - tf).abs() <= 1e-9 * tf {
        if let Some(last) = layout.segments.last_mut() {
            last.end = tf;
        }
        if let Some(last) = trace.placements.last_mut() {
            last.end = tf;
        }
        trace.final_x = tf;
        if !violations.is_empty() && !options.allow_oversized_caps {
            // Oversized cities with small caps are only a problem if they
            // end up stacked over themselves beyond their cap.
            let over = cap_excess(instance, &layout, &violations);
            if !over.is_empty() {
                return Err(GreedyError::AssumptionViolated { cities: over });
            }
            log::info!("oversized cities {violations:?} stay within their caps");
        }
        Ok(GreedyResult { layout, trace })
    } else if x > tf {
        trace.failure_point = Some(
            trace
                .placements
                .iter()
                .find(|p| p.end > tf + 1e-9 * tf)
                .map_or(tf, |p| p.start.max(tf)),
        );
        Err(GreedyError::BudgetExceeded(Box::new(trace)))
    } else {
        trace.failure_point = Some(x);
        Err(GreedyError::Underfilled(Box::new(trace)))
    }
}

/// Cities among `cities` whose letters at some position exceed their cap.
fn cap_excess(instance: &ProblemInstance, layout: &Layout, cities: &[usize]) -> Vec<usize> {
    let bps = layout.breakpoints();
    let mut over = Vec::new();
    for &i in cities {
        let exceeded = bps.windows(2).any(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let total: f64 = (0..layout.t)
                .filter_map(|k| layout.segment_at(k as f64 + mid))
                .filter(|s| s.city == i)
                .map(|s| s.height)
                .sum();
            total > instance.cap(i) + 1e-9 * instance.letters() as f64
        });
        if exceeded {
            over.push(i);
        }
    }
    over
}

/// Smallest budget in `[lower bound, t_max]` where the walk succeeds.
pub fn min_t_greedy(
    instance: &ProblemInstance,
    t_max: usize,
    options: GreedyOptions,
) -> Option<usize> {
    (instance.lower_bound_t()..=t_max).find(|&t| greedy_equal_with(instance, t, options).is_ok())
}

/// Structural checks on a successful walk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    /// Layers where a capped placement follows an averaged one.
    pub average_flag_breaks: Vec<usize>,
    /// Positions where the cumulative height decreases.
    pub cumulative_decreases: Vec<f64>,
}

impl StructureReport {
    pub fn ok(&self) -> bool {
        self.average_flag_breaks.is_empty() && self.cumulative_decreases.is_empty()
    }
}

pub fn check_structure(result: &GreedyResult) -> StructureReport {
    let t = result.trace.t;
    let mut average_flag_breaks = Vec::new();
    for layer in 0..t {
        let lo = layer as f64;
        let mut seen_average = false;
        for p in result
            .trace
            .placements
            .iter()
            .filter(|p| p.start >= lo - SNAP && p.start < lo + 1.0 - SNAP)
        {
            if seen_average && !p.selects_average {
                average_flag_breaks.push(layer);
                break;
            }
            seen_average |= p.selects_average;
        }
    }
    // Probe the cumulative height inside every piece of the breakpoint grid.
    let layout = &result.layout;
    let bps = layout.breakpoints();
    let mids: Vec<f64> = bps.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut cumulative_decreases = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for k in 0..t {
        for m in &mids {
            let x = k as f64 + m;
            let c = layout.cumulative(x);
            if c < prev - 1e-9 * layout.letters as f64 {
                cumulative_decreases.push(x);
            }
            prev = c;
        }
    }
    StructureReport {
        average_flag_breaks,
        cumulative_decreases,
    }
}
