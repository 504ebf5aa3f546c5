//! Pricing oracles for the column-generation masters.
//!
//! * [`price_exact`]: best integral `t`-bounded allocation under per-city
//!   weights, by a cardinality-constrained knapsack DP.
//! * [`price_relaxed`]: the LP relaxation of the same problem, rounded to a
//!   `(t+1)`-bounded integral allocation.
//! * [`price_proportional`]: weights minus relative deviation from targets,
//!   solved by branch-and-bound over supports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LinearProgram, LpError, Relation, Status};
use crate::model::{Allocation, ProblemInstance, ABS_TOL};
use crate::targets::TargetProfile;

pub const NODE_BUDGET: usize = 1_000_000;
const PRUNE_TOL: f64 = 1e-7;

/// Dual values: `y` on the convexity row, `per_city` on the fairness rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub y: f64,
    pub per_city: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundTag {
    WithinT,
    WithinTPlusOne,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricedColumn {
    pub allocation: Allocation,
    /// Objective of the oracle at `allocation`.
    pub value: f64,
    /// For the weight oracles `value - y`; for the proportional oracle the
    /// value itself, which already includes `y`.
    pub reduced_value: f64,
    pub bound_tag: BoundTag,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("no allocation with at most {t} cities holds {letters} letters")]
    NoFeasibleAllocation { t: usize, letters: u64 },
    #[error("dual vector has {got} entries, instance has {expected} cities")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("node budget exhausted with gap {gap}")]
    NodeBudgetExhausted {
        incumbent: Option<Box<PricedColumn>>,
        gap: f64,
        nodes: usize,
    },
    #[error(transparent)]
    Lp(#[from] LpError),
}

fn check_dims(instance: &ProblemInstance, duals: &DualPoint) -> Result<(), PricingError> {
    if duals.per_city.len() != instance.n() {
        return Err(PricingError::DimensionMismatch {
            expected: instance.n(),
            got: duals.per_city.len(),
        });
    }
    Ok(())
}

/// Number of caps the integral oracles floor.
pub(crate) fn fractional_caps(instance: &ProblemInstance) -> usize {
    instance
        .caps()
        .iter()
        .filter(|c| (*c - c.round()).abs() > ABS_TOL)
        .count()
}

fn warn_fractional_caps(instance: &ProblemInstance) {
    let fractional = fractional_caps(instance);
    if fractional > 0 {
        log::debug!("{fractional} fractional caps floored for integral pricing");
    }
}

/// Maximizes `sum a_i y_i` over integral allocations with at most `t`
/// cities. In some optimum all selected cities but the lowest-weight one are
/// filled to their cap, so each city is tried as the remainder holder on top
/// of a knapsack over the higher-weight cities.
pub fn price_exact(
    instance: &ProblemInstance,
    t: usize,
    duals: &DualPoint,
) -> Result<PricedColumn, PricingError> {
    check_dims(instance, duals)?;
    warn_fractional_caps(instance);
    let n = instance.n();
    let ell = instance.letters() as usize;
    let caps = instance.integral_caps();
    let y = &duals.per_city;
    let mut order: Vec<usize> = (0..n).filter(|&i| caps[i] > 0).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));

    let kmax = t.saturating_sub(1);
    let width = ell + 1;
    let idx = |k: usize, z: usize| k * width + z;
    let mut dp = vec![f64::NEG_INFINITY; (kmax + 1) * width];
    dp[idx(0, 0)] = 0.0;
    // take[(pos * (kmax + 1) + k) * width + z]: item `pos` improved cell (k, z).
    let layer = (kmax + 1) * width;
    let mut take = vec![false; order.len() * layer];
    let mut best: Option<(f64, usize, usize, usize)> = None; // value, position, k, z

    for (pos, &i) in order.iter().enumerate() {
        let u = (caps[i] as usize).min(ell);
        let yi = y[i];
        if t >= 1 {
            // Item `i` as the remainder city topping the load up to `ell`.
            let lo = ell.saturating_sub(u);
            for k in 0..=kmax {
                let row = &dp[idx(k, lo)..idx(k, ell)];
                let mut row_best = f64::NEG_INFINITY;
                let mut row_z = 0;
                for (dz, &base) in row.iter().enumerate() {
                    let v = base + (ell - lo - dz) as f64 * yi;
                    if v > row_best {
                        row_best = v;
                        row_z = lo + dz;
                    }
                }
                if row_best > f64::NEG_INFINITY && best.is_none_or(|b| row_best > b.0) {
                    best = Some((row_best, pos, k, row_z));
                }
            }
        }
        let gain = u as f64 * yi;
        let took = &mut take[pos * layer..(pos + 1) * layer];
        for k in (1..=kmax).rev() {
            let (lower, upper) = dp.split_at_mut(idx(k, 0));
            let prev = &lower[idx(k - 1, 0)..idx(k - 1, 0) + width - u];
            let cur = &mut upper[u..width];
            let flags = &mut took[idx(k, u)..idx(k, 0) + width];
            for ((c, &b), f) in cur.iter_mut().zip(prev).zip(flags.iter_mut()) {
                let v = b + gain;
                if v > *c {
                    *c = v;
                    *f = true;
                }
            }
        }
    }

    let (value, pos, mut k, mut z) = best.ok_or(PricingError::NoFeasibleAllocation {
        t,
        letters: instance.letters(),
    })?;
    let mut a = vec![0.0; n];
    a[order[pos]] = (ell - z) as f64;
    for p in (0..pos).rev() {
        if k > 0 && take[p * layer + idx(k, z)] {
            let i = order[p];
            let u = (caps[i] as usize).min(ell);
            a[i] = u as f64;
            k -= 1;
            z -= u;
        }
    }
    debug_assert_eq!(z, 0);
    Ok(PricedColumn {
        allocation: Allocation(a),
        value,
        reduced_value: value - duals.y,
        bound_tag: BoundTag::WithinT,
    })
}

/// LP relaxation over selection fractions, rounded so that at most one
/// city beyond `t` is used.
pub fn price_relaxed(
    instance: &ProblemInstance,
    t: usize,
    duals: &DualPoint,
) -> Result<PricedColumn, PricingError> {
    check_dims(instance, duals)?;
    warn_fractional_caps(instance);
    let n = instance.n();
    let ell = instance.letters() as f64;
    let caps: Vec<f64> = instance.integral_caps().iter().map(|&c| c as f64).collect();
    let y = &duals.per_city;
    let mut prog = LinearProgram::new((0..n).map(|i| -y[i] * caps[i]).collect());
    prog.add_row(caps.clone(), Relation::Eq, ell);
    prog.add_row(vec![1.0; n], Relation::Le, t as f64);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        prog.add_row(e, Relation::Le, 1.0);
    }
    let sol = lp::solve(&prog)?;
    if sol.status != Status::Optimal {
        return Err(PricingError::NoFeasibleAllocation {
            t,
            letters: instance.letters(),
        });
    }
    let mut a: Vec<f64> = (0..n)
        .map(|i| (sol.primal[i].clamp(0.0, 1.0) * caps[i]).max(0.0))
        .collect();
    let mut frac: Vec<usize> = (0..n)
        .filter(|&i| (a[i] - a[i].round()).abs() > 1e-7)
        .collect();
    for i in 0..n {
        if !frac.contains(&i) {
            a[i] = a[i].round();
        }
    }
    frac.sort_by(|&p, &q| y[q].total_cmp(&y[p]).then(p.cmp(&q)));
    match frac.as_slice() {
        [] => {}
        [hi, rest @ ..] => {
            a[*hi] = a[*hi].ceil().min(caps[*hi]);
            for &lo in rest {
                a[lo] = a[lo].floor();
            }
        }
    }
    // Restore the exact letter count if round-off moved it.
    let mut diff = instance.letters() as i64 - a.iter().map(|v| *v as i64).sum::<i64>();
    let mut k = 0;
    while diff != 0 && k < 2 * n {
        let i = k % n;
        if diff > 0 && a[i] > 0.0 && a[i] < caps[i] {
            a[i] += 1.0;
            diff -= 1;
        } else if diff < 0 && a[i] > 1.0 {
            a[i] -= 1.0;
            diff += 1;
        }
        k += 1;
    }
    let allocation = Allocation(a);
    let value: f64 = allocation.letters().iter().zip(y).map(|(a, y)| a * y).sum();
    let bound_tag = if allocation.support_size() <= t {
        BoundTag::WithinT
    } else {
        BoundTag::WithinTPlusOne
    };
    Ok(PricedColumn {
        allocation,
        value,
        reduced_value: value - duals.y,
        bound_tag,
    })
}

/// Which cities pay the relative-deviation penalty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationScope {
    /// Only cities receiving letters.
    #[default]
    SelectedOnly,
    /// Every city; an unselected city pays a deviation of 1.
    AllCities,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PricingStats {
    pub nodes: usize,
    pub gap: f64,
}

/// Relative deviation of an allocation from targets over its support.
pub fn deviation(allocation: &Allocation, tau: &[f64]) -> f64 {
    allocation
        .letters()
        .iter()
        .zip(tau)
        .filter(|(a, _)| **a > ABS_TOL)
        .map(|(a, t)| (a / t - 1.0).abs())
        .sum()
}

/// Per-city concave piece data for the proportional oracle.
#[derive(Debug, Clone, Copy)]
struct Piece {
    tau: f64,
    cap: f64,
    y: f64,
    bonus: f64,
}

impl Piece {
    fn value(&self, a: f64) -> f64 {
        self.y * a - (a / self.tau - 1.0).abs() + self.bonus
    }

    fn slopes(&self) -> (f64, f64) {
        (self.y + 1.0 / self.tau, self.y - 1.0 / self.tau)
    }

    /// `max_a value(a) - lambda a` over `[0, cap]`; attained at 0, tau or cap.
    fn lagrangian(&self, lambda: f64) -> f64 {
        let d = self.y - lambda;
        let at_zero: f64 = -1.0;
        let at_tau = d * self.tau;
        let at_cap = d * self.cap - self.cap / self.tau + 1.0;
        self.bonus + at_zero.max(at_tau).max(at_cap)
    }

    fn unconstrained_max(&self) -> f64 {
        [0.0, self.tau, self.cap]
            .iter()
            .map(|&a| self.value(a))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Best split of `letters` over `support` for the concave per-city values.
fn slope_greedy(pieces: &[Piece], support: &[usize], letters: f64) -> Option<(f64, Vec<f64>)> {
    let total_cap: f64 = support.iter().map(|&i| pieces[i].cap).sum();
    if total_cap < letters - ABS_TOL {
        return None;
    }
    let mut segs: Vec<(f64, usize, f64)> = Vec::with_capacity(2 * support.len());
    for (pos, &i) in support.iter().enumerate() {
        let p = pieces[i];
        let (s1, s2) = p.slopes();
        segs.push((s1, pos, p.tau.min(p.cap)));
        if p.cap > p.tau {
            segs.push((s2, pos, p.cap - p.tau));
        }
    }
    // Stable order: slope descending, then support position; the first piece
    // of a city always precedes its second because s1 > s2.
    segs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut a = vec![0.0; support.len()];
    let mut left = letters;
    let mut value: f64 = support.iter().map(|&i| pieces[i].value(0.0)).sum();
    for (slope, pos, len) in segs {
        if left <= 0.0 {
            break;
        }
        let take = len.min(left);
        a[pos] += take;
        value += slope * take;
        left -= take;
    }
    Some((value, a))
}

/// Maximizes `y + sum a_i y_i - deviation` over `t`-bounded fractional
/// allocations. Returns the best column and search statistics; fails with
/// [`PricingError::NodeBudgetExhausted`] when the node budget runs out
/// before the gap closes.
pub fn price_proportional(
    instance: &ProblemInstance,
    t: usize,
    targets: &TargetProfile,
    duals: &DualPoint,
    scope: DeviationScope,
) -> Result<(PricedColumn, PricingStats), PricingError> {
    price_proportional_with_budget(instance, t, targets, duals, scope, NODE_BUDGET)
}

pub fn price_proportional_with_budget(
    instance: &ProblemInstance,
    t: usize,
    targets: &TargetProfile,
    duals: &DualPoint,
    scope: DeviationScope,
    node_budget: usize,
) -> Result<(PricedColumn, PricingStats), PricingError> {
    check_dims(instance, duals)?;
    let n = instance.n();
    let ell = instance.letters() as f64;
    let (bonus, constant) = match scope {
        DeviationScope::SelectedOnly => (0.0, 0.0),
        DeviationScope::AllCities => (1.0, -(n as f64)),
    };
    let pieces: Vec<Piece> = (0..n)
        .map(|i| Piece {
            tau: targets.tau[i],
            cap: instance.cap(i),
            y: duals.per_city[i],
            bonus,
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let maxima: Vec<f64> = pieces.iter().map(Piece::unconstrained_max).collect();
    order.sort_by(|&a, &b| maxima[b].total_cmp(&maxima[a]).then(a.cmp(&b)));

    let mut search = Search {
        pieces: &pieces,
        order: &order,
        t,
        ell,
        offset: duals.y + constant,
        best_value: f64::NEG_INFINITY,
        best: None,
        nodes: 0,
        budget: node_budget,
        exhausted: false,
        lam_lo: pieces
            .iter()
            .map(|p| p.slopes().1)
            .fold(f64::INFINITY, f64::min),
        lam_hi: pieces
            .iter()
            .map(|p| p.slopes().0)
            .fold(f64::NEG_INFINITY, f64::max),
    };
    let root_lambda = 0.5 * (search.lam_lo + search.lam_hi);
    let (root_bound, _) = search.bound(&[], 0, root_lambda);
    let mut included = Vec::new();
    search.dfs(0, &mut included, root_lambda);

    let gap = if search.exhausted {
        (root_bound - search.best_value).max(0.0)
    } else {
        0.0
    };
    let stats = PricingStats {
        nodes: search.nodes,
        gap,
    };
    log::debug!("proportional pricing: {} nodes, gap {gap:.3e}", stats.nodes);
    let column = search.best.map(|(support, a)| {
        let mut alloc = vec![0.0; n];
        for (pos, &i) in support.iter().enumerate() {
            alloc[i] = a[pos];
        }
        let allocation = Allocation(alloc);
        let value = proportional_value(&allocation, &targets.tau, duals, scope);
        PricedColumn {
            allocation,
            value,
            reduced_value: value,
            bound_tag: BoundTag::WithinT,
        }
    });
    if search.exhausted {
        return Err(PricingError::NodeBudgetExhausted {
            incumbent: column.map(Box::new),
            gap,
            nodes: stats.nodes,
        });
    }
    let column = column.ok_or(PricingError::NoFeasibleAllocation {
        t,
        letters: instance.letters(),
    })?;
    Ok((column, stats))
}

/// `y + sum a_i y_i - penalty`, with the penalty taken over `scope`.
pub fn proportional_value(
    allocation: &Allocation,
    tau: &[f64],
    duals: &DualPoint,
    scope: DeviationScope,
) -> f64 {
    let linear: f64 = allocation
        .letters()
        .iter()
        .zip(&duals.per_city)
        .map(|(a, y)| a * y)
        .sum();
    let unselected = match scope {
        DeviationScope::SelectedOnly => 0.0,
        DeviationScope::AllCities => (allocation.len() - allocation.support_size()) as f64,
    };
    duals.y + linear - deviation(allocation, tau) - unselected
}

struct Search<'a> {
    pieces: &'a [Piece],
    order: &'a [usize],
    t: usize,
    ell: f64,
    offset: f64,
    best_value: f64,
    best: Option<(Vec<usize>, Vec<f64>)>,
    nodes: usize,
    budget: usize,
    exhausted: bool,
    lam_lo: f64,
    lam_hi: f64,
}

impl Search<'_> {
    /// Lagrangian upper bound with the letter constraint dualized, minimized
    /// over the multiplier by golden-section search. Returns (bound, argmin).
    fn bound(&self, included: &[usize], next: usize, hint: f64) -> (f64, f64) {
        let slots = self.t - included.len();
        let eval = |lam: f64| -> f64 {
            let fixed: f64 = included
                .iter()
                .map(|&i| self.pieces[i].lagrangian(lam))
                .sum();
            let mut optional: Vec<f64> = self.order[next..]
                .iter()
                .map(|&i| self.pieces[i].lagrangian(lam))
                .filter(|v| *v > 0.0)
                .collect();
            let extra: f64 = if optional.len() <= slots {
                optional.iter().sum()
            } else {
                optional.select_nth_unstable_by(slots, |a, b| b.total_cmp(a));
                optional[..slots].iter().sum()
            };
            self.offset + lam * self.ell + fixed + extra
        };
        let mut best = (eval(hint), hint);
        let (mut a, mut b) = (self.lam_lo, self.lam_hi);
        if a.is_finite() && b.is_finite() && b > a {
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            let (mut fc, mut fd) = (eval(c), eval(d));
            for _ in 0..60 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = eval(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = eval(d);
                }
                if b - a < 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    break;
                }
            }
            for (f, l) in [(fc, c), (fd, d)] {
                if f < best.0 {
                    best = (f, l);
                }
            }
        }
        best
    }

    /// Primal heuristic: complete `included` with the cities the relaxation
    /// at `lam` selects, first only the profitable ones, then up to `t`.
    fn lagrangian_dive(&mut self, included: &[usize], next: usize, lam: f64) {
        let slots = self.t - included.len();
        let mut rest: Vec<(f64, usize)> = self.order[next..]
            .iter()
            .map(|&i| (self.pieces[i].lagrangian(lam), i))
            .collect();
        if rest.len() > slots {
            rest.select_nth_unstable_by(slots, |a, b| b.0.total_cmp(&a.0));
            rest.truncate(slots);
        }
        rest.sort_by(|a, b| b.0.total_cmp(&a.0));
        let profitable = rest.iter().take_while(|(v, _)| *v > 0.0).count();
        for take in [profitable, rest.len()] {
            let mut support = included.to_vec();
            support.extend(rest[..take].iter().map(|&(_, i)| i));
            if support.is_empty() {
                continue;
            }
            if let Some((v, a)) = slope_greedy(self.pieces, &support, self.ell) {
                let v = v + self.offset;
                if v > self.best_value {
                    self.best_value = v;
                    self.best = Some((support, a));
                }
            }
        }
    }

    fn dfs(&mut self, next: usize, included: &mut Vec<usize>, hint: f64) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        // Capacity check: the largest remaining caps must be able to hold ℓ.
        let slots = self.t - included.len();
        let held: f64 = included.iter().map(|&i| self.pieces[i].cap).sum();
        if held < self.ell - ABS_TOL {
            let mut caps: Vec<f64> = self.order[next..]
                .iter()
                .map(|&i| self.pieces[i].cap)
                .collect();
            caps.sort_by(|a, b| b.total_cmp(a));
            let reach: f64 = caps.iter().take(slots).sum();
            if held + reach < self.ell - ABS_TOL {
                return;
            }
        }
        if !included.is_empty() {
            if let Some((v, a)) = slope_greedy(self.pieces, included, self.ell) {
                let v = v + self.offset;
                if v > self.best_value {
                    self.best_value = v;
                    self.best = Some((included.clone(), a));
                }
            }
        }
        if next == self.order.len() || slots == 0 {
            return;
        }
        let (bound, lam) = self.bound(included, next, hint);
        if bound <= self.best_value + PRUNE_TOL {
            return;
        }
        self.lagrangian_dive(included, next, lam);
        included.push(self.order[next]);
        self.dfs(next + 1, included, lam);
        included.pop();
        self.dfs(next + 1, included, lam);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::City;
    use crate::targets::{solve_kappa, TargetFunction};
    use proptest::prelude::*;

    /// Every integral allocation with at most `t` cities.
    fn enumerate_integral(caps: &[u64], letters: u64, t: usize) -> Vec<Vec<u64>> {
        fn rec(
            i: usize,
            caps: &[u64],
            left: u64,
            t: usize,
            cur: &mut Vec<u64>,
            out: &mut Vec<Vec<u64>>,
        ) {
            if i == caps.len() {
                if left == 0 {
                    out.push(cur.clone());
                }
                return;
            }
            let used = cur.iter().filter(|&&a| a > 0).count();
            for a in 0..=caps[i].min(left) {
                if a > 0 && used >= t {
                    break;
                }
                cur.push(a);
                rec(i + 1, caps, left - a, t, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, caps, letters, t, &mut Vec::new(), &mut out);
        out
    }

    fn instance(pops: &[f64], caps: &[f64], letters: u64, t: usize) -> ProblemInstance {
        let cities = pops
            .iter()
            .zip(caps)
            .enumerate()
            .map(|(i, (&p, &c))| City::new(format!("c{i}"), p, c))
            .collect();
        ProblemInstance::validate(cities, letters, t).unwrap()
    }

    #[test]
    fn zero_weights() {
        let inst = fixtures::example1();
        let d = DualPoint {
            y: 2.5,
            per_city: vec![0.0; inst.n()],
        };
        let c = price_exact(&inst, 4, &d).unwrap();
        assert_eq!(c.reduced_value, -2.5);
        assert!(c.allocation.violations(&inst, Some(4)).is_empty());
        let r = price_relaxed(&inst, 4, &d).unwrap();
        assert_eq!(r.reduced_value, -2.5);
    }

    #[test]
    fn three_city_example() {
        let inst = instance(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 3, 2);
        let d = DualPoint {
            y: 0.0,
            per_city: vec![0.0, 1.0, 1.0],
        };
        let c = price_exact(&inst, 2, &d).unwrap();
        assert_eq!(c.value, 3.0);
        let a = &c.allocation.0;
        assert!(
            a == &vec![0.0, 1.0, 2.0] || a == &vec![0.0, 0.0, 3.0],
            "{a:?}"
        );
    }

    #[test]
    fn infeasible_budget_is_reported() {
        let inst = instance(&[1.0, 1.0], &[2.0, 2.0], 4, 2);
        let d = DualPoint {
            y: 0.0,
            per_city: vec![1.0, 1.0],
        };
        assert!(matches!(
            price_exact(&inst, 1, &d),
            Err(PricingError::NoFeasibleAllocation { .. })
        ));
    }

    #[test]
    fn relaxed_integral_optimum_is_within_t() {
        // Weights make filling the two largest cities exactly optimal.
        let inst = instance(&[1.0, 2.0, 2.0], &[1.0, 2.0, 2.0], 4, 2);
        let d = DualPoint {
            y: 0.0,
            per_city: vec![0.1, 1.0, 2.0],
        };
        let c = price_relaxed(&inst, 2, &d).unwrap();
        assert_eq!(c.bound_tag, BoundTag::WithinT);
        assert_eq!(c.allocation.0, vec![0.0, 2.0, 2.0]);
    }

    #[test]
    fn zero_deviation_fixed_point() {
        // Targets equal caps: two cities of share 1/2, caps 4, letters 8, t=2.
        let inst = instance(&[1.0, 1.0], &[4.0, 4.0], 8, 2);
        let tp = solve_kappa(&inst, &TargetFunction::Sqrt, 2).unwrap();
        let d = DualPoint {
            y: 0.0,
            per_city: vec![0.0, 0.0],
        };
        let (c, stats) =
            price_proportional(&inst, 2, &tp, &d, DeviationScope::SelectedOnly).unwrap();
        assert!(c.value.abs() < 1e-12);
        assert_eq!(stats.gap, 0.0);
        assert!((c.allocation.0[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_city_closed_form() {
        let inst = instance(&[1.0, 3.0], &[10.0, 10.0], 10, 1);
        let tp = TargetProfile {
            tau: vec![2.5, 7.5],
            widths: vec![1.0, 1.0],
            kappa: 0.0,
            function_name: "custom".into(),
        };
        let d = DualPoint {
            y: 0.3,
            per_city: vec![0.05, 0.02],
        };
        let (c, _) = price_proportional(&inst, 1, &tp, &d, DeviationScope::SelectedOnly).unwrap();
        let v0 = 0.3 + 10.0 * 0.05 - (10.0f64 / 2.5 - 1.0).abs();
        let v1 = 0.3 + 10.0 * 0.02 - (10.0f64 / 7.5 - 1.0).abs();
        assert!((c.value - v0.max(v1)).abs() < 1e-12);
    }

    #[test]
    fn node_budget_reports_incumbent() {
        let inst = fixtures::fig5();
        let tp = solve_kappa(&inst, &TargetFunction::Sqrt, 4).unwrap();
        let d = DualPoint {
            y: 0.0,
            per_city: (0..inst.n()).map(|i| 0.001 * i as f64).collect(),
        };
        match price_proportional_with_budget(&inst, 4, &tp, &d, DeviationScope::SelectedOnly, 3) {
            Err(PricingError::NodeBudgetExhausted { gap, .. }) => assert!(gap >= 0.0),
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn slope_greedy_beats_grid() {
        let pieces = vec![
            Piece {
                tau: 3.0,
                cap: 6.0,
                y: 0.2,
                bonus: 0.0,
            },
            Piece {
                tau: 2.0,
                cap: 5.0,
                y: 0.5,
                bonus: 0.0,
            },
            Piece {
                tau: 4.0,
                cap: 4.0,
                y: -0.1,
                bonus: 0.0,
            },
        ];
        let ell = 9.0;
        let (v, a) = slope_greedy(&pieces, &[0, 1, 2], ell).unwrap();
        assert!((a.iter().sum::<f64>() - ell).abs() < 1e-12);
        let step = ell / 1000.0;
        let mut grid_best = f64::NEG_INFINITY;
        for p in 0..=1000 {
            for q in 0..=(1000 - p) {
                let a0 = p as f64 * step;
                let a1 = q as f64 * step;
                let a2 = ell - a0 - a1;
                if a0 > 6.0 || a1 > 5.0 || !(0.0..=4.0 + 1e-9).contains(&a2) {
                    continue;
                }
                let g = pieces[0].value(a0) + pieces[1].value(a1) + pieces[2].value(a2);
                grid_best = grid_best.max(g);
            }
        }
        assert!(v >= grid_best - 1e-9);
        assert!(v <= grid_best + 0.01);
    }

    fn small_instance() -> impl Strategy<Value = (Vec<u64>, Vec<u64>, u64, usize, Vec<f64>)> {
        (2usize..=5, 3u64..=12, 1usize..=3).prop_flat_map(|(n, ell, t)| {
            (
                prop::collection::vec(1u64..=10, n),
                prop::collection::vec(1u64..=12, n),
                Just(ell),
                Just(t),
                prop::collection::vec(0.0f64..1.0, n),
            )
        })
    }

    fn make(pops: &[u64], caps: &[u64], ell: u64, t: usize) -> Option<ProblemInstance> {
        let total: u64 = pops.iter().sum();
        let caps: Vec<f64> = pops
            .iter()
            .zip(caps)
            .map(|(&p, &c)| {
                let need = (p as f64 * ell as f64 / total as f64).ceil() as u64;
                c.max(need) as f64
            })
            .collect();
        let pops: Vec<f64> = pops.iter().map(|&p| p as f64).collect();
        let inst = instance(&pops, &caps, ell, t);
        (inst.lower_bound_t() <= t).then_some(inst)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn exact_matches_enumeration((pops, caps, ell, t, y) in small_instance()) {
            let Some(inst) = make(&pops, &caps, ell, t) else { return Ok(()); };
            let d = DualPoint { y: 0.0, per_city: y.clone() };
            let allocs = enumerate_integral(&inst.integral_caps(), ell, t);
            let brute = allocs
                .iter()
                .map(|a| a.iter().zip(&inst_order_weights(&inst, &y)).map(|(a, w)| *a as f64 * w).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            let d = DualPoint { per_city: inst_order_weights(&inst, &y), ..d };
            match price_exact(&inst, t, &d) {
                Ok(c) => {
                    prop_assert!((c.value - brute).abs() < 1e-9, "{} vs {}", c.value, brute);
                    prop_assert!(c.allocation.violations(&inst, Some(t)).is_empty());
                    let relaxed = price_relaxed(&inst, t, &d).unwrap();
                    prop_assert!(relaxed.value >= c.value - 1e-9);
                    prop_assert!(relaxed.allocation.support_size() <= t + 1);
                    prop_assert!(relaxed.allocation.violations(&inst, None).is_empty());
                }
                Err(PricingError::NoFeasibleAllocation { .. }) => prop_assert!(allocs.is_empty()),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn proportional_matches_support_enumeration((pops, caps, ell, t, y) in small_instance()) {
            let Some(inst) = make(&pops, &caps, ell, t) else { return Ok(()); };
            let Ok(tp) = solve_kappa(&inst, &TargetFunction::Sqrt, t.max(inst.lower_bound_t())) else { return Ok(()); };
            let d = DualPoint { y: 0.1, per_city: y.iter().map(|v| v - 0.5).collect() };
            for scope in [DeviationScope::SelectedOnly, DeviationScope::AllCities] {
                let bonus = if scope == DeviationScope::AllCities { 1.0 } else { 0.0 };
                let pieces: Vec<Piece> = (0..inst.n()).map(|i| Piece {
                    tau: tp.tau[i], cap: inst.cap(i), y: d.per_city[i], bonus,
                }).collect();
                let mut brute = f64::NEG_INFINITY;
                for mask in 1u32..(1 << inst.n()) {
                    if mask.count_ones() as usize > t { continue; }
                    let support: Vec<usize> = (0..inst.n()).filter(|i| mask >> i & 1 == 1).collect();
                    if let Some((v, _)) = slope_greedy(&pieces, &support, ell as f64) {
                        brute = brute.max(v);
                    }
                }
                let constant = if scope == DeviationScope::AllCities { -(inst.n() as f64) } else { 0.0 };
                brute += d.y + constant;
                let (c, _) = price_proportional(&inst, t, &tp, &d, scope).unwrap();
                prop_assert!(c.value >= brute - 1e-6, "{} < {}", c.value, brute);
                prop_assert!(c.value <= brute + 1e-6, "{} > {}", c.value, brute);
                prop_assert!(c.allocation.support_size() <= t);
            }
        }
    }

    /// Weights are drawn per roster position; instances are sorted, so map
    /// them to sorted order via the source index.
    fn inst_order_weights(inst: &ProblemInstance, y: &[f64]) -> Vec<f64> {
        (0..inst.n()).map(|i| y[inst.source_index(i)]).collect()
    }
}
