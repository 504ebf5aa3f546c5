//! Column-generation drivers over restricted master LPs: feasibility of a
//! budget, the smallest feasible budget, and distributions minimizing the
//! expected relative deviation from targets.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buckets::{buckets, BucketsError};
use crate::greedy::{greedy_equal, GreedyError};
use crate::layout::{LayoutError, LetterDistribution, Mode};
use crate::lp::{LinearProgram, LpError, Relation, Simplex, Status};
use crate::model::{Allocation, ProblemInstance};
use crate::pricing::{
    deviation, fractional_caps, price_exact, price_proportional_with_budget, price_relaxed,
    DeviationScope, DualPoint, PricingError, NODE_BUDGET,
};
use crate::targets::TargetProfile;

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const PROPORTIONAL_TOL: f64 = 1e-6;
pub const COLUMN_CAP: usize = 100_000;
/// Node budget of the first proportional pricing pass; the full search runs
/// only when this pass finds no improving column.
pub const QUICK_PRICING_NODES: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ColgenError {
    #[error("column generation exceeded {0} columns without converging")]
    PricingStalled(usize),
    #[error("feasibility of t = {t} undecided after {pivots} pivots")]
    WorkLimit { t: usize, pivots: usize },
    #[error("no feasible budget in [{from}, {to}]")]
    NoFeasibleT { from: usize, to: usize },
    #[error("no fair starting distribution for t = {t}")]
    InfeasibleStart { t: usize },
    #[error("master LP ended with status {0:?}")]
    MasterStatus(Status),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Oracle used by the feasibility master.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingMode {
    /// Knapsack DP; columns are `t`-bounded.
    #[default]
    Exact,
    /// Rounded LP relaxation; columns may use `t + 1` cities.
    PlusOne,
}

/// Columns of a restricted master.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MasterState {
    pub columns: Vec<Allocation>,
    pub iterations: usize,
    pub last_reduced_value: f64,
    #[serde(skip)]
    seen: HashSet<Vec<i64>>,
}

impl MasterState {
    /// Records a column unless an equal one exists. Returns whether it was new.
    fn insert(&mut self, a: &Allocation) -> bool {
        if self.seen.insert(a.dedup_key()) {
            self.columns.push(a.clone());
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    pub t: usize,
    pub feasible: bool,
    pub distribution: Option<LetterDistribution>,
    /// Duals proving infeasibility: every allocation in the oracle's range
    /// has weight at most `y`, while the weighted fair shares exceed `y`.
    pub certificate: Option<DualPoint>,
    /// Total slack left in the fairness rows.
    pub slack: f64,
    pub master: MasterState,
}

pub fn feasible(instance: &ProblemInstance, t: usize) -> Result<FeasibilityResult, ColgenError> {
    feasible_with(instance, t, PricingMode::Exact)
}

pub fn feasible_with(
    instance: &ProblemInstance,
    t: usize,
    mode: PricingMode,
) -> Result<FeasibilityResult, ColgenError> {
    feasible_limited(instance, t, mode, None)
}

/// [`feasible_with`] giving up with [`ColgenError::WorkLimit`] once the
/// master has spent `max_pivots` simplex pivots.
pub fn feasible_limited(
    instance: &ProblemInstance,
    t: usize,
    mode: PricingMode,
    max_pivots: Option<usize>,
) -> Result<FeasibilityResult, ColgenError> {
    let n = instance.n();
    let ell = instance.letters() as f64;
    let bound = instance.lower_bound_t();
    if t < bound {
        // Selecting each city with probability at least its width needs
        // `sum w` cities in expectation.
        let certificate = DualPoint {
            y: t as f64,
            per_city: instance.caps().iter().map(|u| 1.0 / u).collect(),
        };
        return Ok(FeasibilityResult {
            t,
            feasible: false,
            distribution: None,
            certificate: Some(certificate),
            slack: instance.width_profile().total - t as f64,
            master: MasterState::default(),
        });
    }

    warn_floored_caps(instance);
    let price = |duals: &DualPoint| match mode {
        PricingMode::Exact => price_exact(instance, t, duals),
        PricingMode::PlusOne => price_relaxed(instance, t, duals),
    };

    // Variables: one slack per city (cost 1), then allocation columns.
    let mut lp = LinearProgram::new(vec![1.0; n]);
    lp.add_row(vec![0.0; n], Relation::Eq, 1.0);
    for i in 0..n {
        let mut row = vec![0.0; n];
        row[i] = 1.0;
        lp.add_row(row, Relation::Ge, instance.fair_share(i));
    }
    let mut simplex = Simplex::new(&lp)?;
    let mut master = MasterState::default();
    let seed = price(&DualPoint {
        y: 0.0,
        per_city: instance.shares().to_vec(),
    })?;
    master.insert(&seed.allocation);
    simplex.add_column(0.0, &column_coeffs(&seed.allocation))?;

    let mut pivots = 0;
    let sol = loop {
        let sol = simplex.solve()?;
        if sol.status != Status::Optimal {
            return Err(ColgenError::MasterStatus(sol.status));
        }
        master.iterations += 1;
        pivots += sol.iterations;
        let duals = DualPoint {
            y: -sol.duals[0],
            per_city: sol.duals[1..].to_vec(),
        };
        if sol.objective <= FEASIBILITY_TOL * ell {
            break (sol, duals);
        }
        if max_pivots.is_some_and(|cap| pivots >= cap) {
            return Err(ColgenError::WorkLimit { t, pivots });
        }
        let col = price(&duals)?;
        master.last_reduced_value = col.reduced_value;
        if col.reduced_value <= FEASIBILITY_TOL {
            break (sol, duals);
        }
        if !master.insert(&col.allocation) {
            log::warn!(
                "priced column already in master (reduced value {:.3e}); stopping",
                col.reduced_value
            );
            break (sol, duals);
        }
        if master.columns.len() > COLUMN_CAP {
            return Err(ColgenError::PricingStalled(COLUMN_CAP));
        }
        simplex.add_column(0.0, &column_coeffs(&col.allocation))?;
    };
    let (sol, duals) = sol;
    let slack = sol.objective;
    let feasible = slack <= FEASIBILITY_TOL * ell;
    let mode_tag = Mode::Integral;
    let distribution = if feasible {
        let weighted = master
            .columns
            .iter()
            .zip(&sol.primal[n..])
            .map(|(a, &x)| (x, a.clone()))
            .collect();
        Some(LetterDistribution::from_weights(weighted, mode_tag)?)
    } else {
        None
    };
    Ok(FeasibilityResult {
        t,
        feasible,
        distribution,
        certificate: (!feasible).then_some(duals),
        slack,
        master,
    })
}

fn warn_floored_caps(instance: &ProblemInstance) {
    let fractional = fractional_caps(instance);
    if fractional > 0 {
        log::warn!("{fractional} fractional caps floored for integral pricing");
    }
}

fn column_coeffs(a: &Allocation) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() + 1);
    c.push(1.0);
    c.extend_from_slice(a.letters());
    c
}

/// Smallest budget for which a fair distribution exists, scanning upward
/// from the width bound. In [`PricingMode::PlusOne`] the result is the
/// largest support of the distribution found, at most one above optimal.
pub fn min_feasible_t(
    instance: &ProblemInstance,
    t_max: usize,
    mode: PricingMode,
) -> Result<usize, ColgenError> {
    min_feasible_t_limited(instance, t_max, mode, None).map(|r| r.t)
}

/// Outcome of a budget scan under a work limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSearch {
    pub t: usize,
    /// Every smaller budget from the width bound up was decided infeasible.
    /// False when some master hit the pivot limit, making `t` an upper bound.
    pub proven: bool,
}

/// [`min_feasible_t`] where each master may spend at most `max_pivots`
/// pivots. Undecided budgets are skipped with a warning.
pub fn min_feasible_t_limited(
    instance: &ProblemInstance,
    t_max: usize,
    mode: PricingMode,
    max_pivots: Option<usize>,
) -> Result<BudgetSearch, ColgenError> {
    let from = instance.lower_bound_t();
    let mut proven = true;
    for t in from..=t_max {
        // A fair greedy layout settles `t` without a master LP; scanning
        // upward from the bound makes it the minimum.
        match greedy_equal(instance, t) {
            Ok(_) => return Ok(BudgetSearch { t, proven }),
            Err(e) => log::debug!("greedy layout at t = {t} unavailable: {e}"),
        }
        let r = match feasible_limited(instance, t, mode, max_pivots) {
            Ok(r) => r,
            Err(e @ ColgenError::WorkLimit { .. }) => {
                log::warn!("{e}; trying t = {}", t + 1);
                proven = false;
                continue;
            }
            Err(e) => return Err(e),
        };
        if r.feasible {
            let t = match mode {
                PricingMode::Exact => t,
                PricingMode::PlusOne => r
                    .distribution
                    .as_ref()
                    .map_or(t, |d| d.max_support().max(t)),
            };
            return Ok(BudgetSearch { t, proven });
        }
    }
    Err(ColgenError::NoFeasibleT { from, to: t_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunLogRow {
    pub iteration: usize,
    pub columns: usize,
    pub objective: f64,
    pub reduced_value: f64,
    pub nodes: usize,
    pub gap: f64,
    /// Best Lagrangian lower bound on the master optimum so far.
    pub lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunLog {
    pub rows: Vec<RunLogRow>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionalOptions {
    pub scope: DeviationScope,
    /// Stop after this many master iterations, returning the current
    /// master solution as non-optimal.
    pub max_iterations: Option<usize>,
    /// Node budget of the full pricing search.
    pub node_budget: usize,
}

impl Default for ProportionalOptions {
    fn default() -> Self {
        ProportionalOptions {
            scope: DeviationScope::default(),
            max_iterations: None,
            node_budget: NODE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalResult {
    pub distribution: LetterDistribution,
    /// Expected relative deviation over selected cities.
    pub expected_phi: f64,
    /// Master objective under the chosen deviation scope.
    pub objective: f64,
    /// Every pricing call closed its gap and none found an improving column.
    pub optimal: bool,
    /// Lower bound on the optimal objective; equals `objective` when
    /// `optimal` holds.
    pub lower_bound: f64,
    pub master: MasterState,
    pub log: RunLog,
}

/// Column cost under `scope`.
fn column_cost(a: &Allocation, tau: &[f64], scope: DeviationScope) -> f64 {
    let unselected = match scope {
        DeviationScope::SelectedOnly => 0.0,
        DeviationScope::AllCities => (a.len() - a.support_size()) as f64,
    };
    deviation(a, tau) + unselected
}

/// Starting columns: bucket layout, then the greedy layout, then the
/// feasibility master as a fallback. The second value counts the leading
/// columns that form one complete distribution.
fn initial_columns(
    instance: &ProblemInstance,
    t: usize,
    targets: &TargetProfile,
) -> Result<(Vec<Allocation>, usize), ColgenError> {
    let mut cols = Vec::new();
    match buckets(instance, t, targets) {
        Ok(r) => cols.extend(
            r.layout
                .extract_distribution()?
                .entries()
                .iter()
                .map(|e| e.allocation.clone()),
        ),
        Err(BucketsError::Failure { .. }) | Err(BucketsError::BelowWidthBound { .. }) => {}
        Err(e) => log::debug!("buckets unavailable: {e}"),
    }
    let mut complete = cols.len();
    match greedy_equal(instance, t) {
        Ok(r) => {
            let d = r.layout.extract_distribution()?;
            // Oversized wraparound may breach caps; only keep valid columns.
            if d.entries()
                .iter()
                .all(|e| e.allocation.violations(instance, Some(t)).is_empty())
            {
                cols.extend(d.entries().iter().map(|e| e.allocation.clone()));
                if complete == 0 {
                    complete = cols.len();
                }
            }
        }
        Err(GreedyError::BelowWidthBound { .. }) => {}
        Err(e) => log::debug!("greedy start unavailable: {e}"),
    }
    if cols.is_empty() {
        let r = feasible(instance, t)?;
        match r.distribution {
            Some(d) => cols.extend(d.entries().iter().map(|e| e.allocation.clone())),
            None => return Err(ColgenError::InfeasibleStart { t }),
        }
        complete = cols.len();
    }
    Ok((cols, complete))
}

pub fn optimize_proportional(
    instance: &ProblemInstance,
    t: usize,
    targets: &TargetProfile,
    options: ProportionalOptions,
) -> Result<ProportionalResult, ColgenError> {
    let n = instance.n();
    let tau = &targets.tau;
    let scope = options.scope;
    warn_floored_caps(instance);
    let mut lp = LinearProgram::new(Vec::new());
    lp.add_row(Vec::new(), Relation::Eq, 1.0);
    for i in 0..n {
        lp.add_row(Vec::new(), Relation::Eq, instance.fair_share(i));
    }
    let mut simplex = Simplex::new(&lp)?;
    let mut master = MasterState::default();
    let (init, complete) = initial_columns(instance, t, targets)?;
    let mut start = Vec::new();
    for (k, a) in init.iter().enumerate() {
        if master.insert(a) {
            let s = simplex.add_column(column_cost(a, tau, scope), &column_coeffs(a))?;
            if k < complete {
                start.push(s);
            }
        }
    }
    // Layout entries have positive weight and meet the fair-share rows, so
    // they usually span a feasible basis.
    if !simplex.warm_start(&start)? {
        log::debug!("starting distribution gave no feasible basis");
    }

    let mut log = RunLog::default();
    let mut optimal = true;
    // Column costs are deviations, hence non-negative.
    let mut lower_bound = 0.0f64;
    let sol = loop {
        let sol = simplex.solve()?;
        match sol.status {
            Status::Optimal => {}
            Status::Infeasible => return Err(ColgenError::InfeasibleStart { t }),
            s => return Err(ColgenError::MasterStatus(s)),
        }
        master.iterations += 1;
        let duals = DualPoint {
            y: sol.duals[0],
            per_city: sol.duals[1..].to_vec(),
        };
        let quick = price_proportional_with_budget(
            instance,
            t,
            targets,
            &duals,
            scope,
            QUICK_PRICING_NODES,
        );
        let (col, nodes, gap) = match quick {
            Ok((c, stats)) => (Some(c), stats.nodes, stats.gap),
            // An improving column needs no optimality proof.
            Err(PricingError::NodeBudgetExhausted {
                incumbent: Some(c),
                gap,
                nodes,
            }) if c.reduced_value > PROPORTIONAL_TOL => (Some(*c), nodes, gap),
            Err(PricingError::NodeBudgetExhausted { .. }) => {
                match price_proportional_with_budget(
                    instance,
                    t,
                    targets,
                    &duals,
                    scope,
                    options.node_budget,
                ) {
                    Ok((c, stats)) => (Some(c), stats.nodes, stats.gap),
                    Err(PricingError::NodeBudgetExhausted {
                        incumbent,
                        gap,
                        nodes,
                    }) => {
                        optimal = false;
                        (incumbent.map(|c| *c), nodes, gap)
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Err(e) => return Err(e.into()),
        };
        let reduced = col.as_ref().map_or(f64::NEG_INFINITY, |c| c.reduced_value);
        // No column prices above `reduced + gap`, so shifting the
        // convexity dual by that much gives a dual-feasible point.
        let rv_bound = reduced + gap;
        if rv_bound.is_finite() {
            lower_bound = lower_bound.max(sol.objective - rv_bound.max(0.0));
        }
        master.last_reduced_value = reduced;
        log.rows.push(RunLogRow {
            iteration: master.iterations,
            columns: master.columns.len(),
            objective: sol.objective,
            reduced_value: reduced,
            nodes,
            gap,
            lower_bound,
        });
        let Some(col) = col.filter(|c| c.reduced_value > PROPORTIONAL_TOL) else {
            break sol;
        };
        if options
            .max_iterations
            .is_some_and(|k| master.iterations >= k)
        {
            log::debug!(
                "column generation stopped after {} iterations: objective {:.6}, lower bound {:.6}",
                master.iterations,
                sol.objective,
                lower_bound
            );
            optimal = false;
            break sol;
        }
        if !master.insert(&col.allocation) {
            log::warn!(
                "priced column already in master (reduced value {:.3e}); stopping",
                col.reduced_value
            );
            optimal = false;
            break sol;
        }
        if master.columns.len() > COLUMN_CAP {
            return Err(ColgenError::PricingStalled(COLUMN_CAP));
        }
        simplex.add_column(
            column_cost(&col.allocation, tau, scope),
            &column_coeffs(&col.allocation),
        )?;
    };

    let weighted: Vec<(f64, Allocation)> = master
        .columns
        .iter()
        .zip(&sol.primal)
        .map(|(a, &x)| (x, a.clone()))
        .collect();
    let distribution = LetterDistribution::from_weights(weighted, Mode::Fractional)?;
    let expected_phi = distribution
        .entries()
        .iter()
        .map(|e| e.probability * deviation(&e.allocation, tau))
        .sum();
    Ok(ProportionalResult {
        distribution,
        expected_phi,
        objective: sol.objective,
        optimal,
        lower_bound: if optimal { sol.objective } else { lower_bound },
        master,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{audit, City};
    use crate::targets::{solve_kappa, TargetFunction};

    #[test]
    fn fig5_feasible_at_three() {
        let inst = fixtures::fig5();
        let r = feasible(&inst, 3).unwrap();
        assert!(r.feasible);
        let d = r.distribution.unwrap();
        assert!(audit(&inst, &d).unwrap().passes(3));
    }

    #[test]
    fn fig6_feasible_at_two() {
        let inst = fixtures::fig6();
        let r = feasible(&inst, 2).unwrap();
        assert!(r.feasible);
        assert!(audit(&inst, &r.distribution.unwrap()).unwrap().passes(2));
        assert_eq!(min_feasible_t(&inst, 8, PricingMode::Exact).unwrap(), 2);
    }

    #[test]
    fn example_one_below_bound() {
        let inst = fixtures::example1();
        let r = feasible(&inst, 2).unwrap();
        assert!(!r.feasible);
        let c = r.certificate.unwrap();
        let lhs: f64 = (0..inst.n())
            .map(|i| inst.fair_share(i) * c.per_city[i])
            .sum();
        assert!(lhs > c.y);
        assert_eq!(min_feasible_t(&inst, 8, PricingMode::Exact).unwrap(), 3);
    }

    #[test]
    fn certificate_separates_when_infeasible() {
        let inst = fixtures::fig5();
        let r = feasible(&inst, 2).unwrap();
        assert!(!r.feasible);
        let c = r.certificate.unwrap();
        let lhs: f64 = (0..inst.n())
            .map(|i| inst.fair_share(i) * c.per_city[i])
            .sum();
        assert!(lhs - c.y > 1e-9);
        assert!(price_exact(&inst, 2, &c).unwrap().reduced_value <= 1e-9);
    }

    #[test]
    fn plus_one_within_one() {
        for inst in [fixtures::fig5(), fixtures::fig6(), fixtures::example1()] {
            let exact = min_feasible_t(&inst, inst.n(), PricingMode::Exact).unwrap();
            let approx = min_feasible_t(&inst, inst.n(), PricingMode::PlusOne).unwrap();
            assert!(
                approx == exact || approx == exact + 1,
                "{exact} vs {approx}"
            );
        }
    }

    #[test]
    fn zero_deviation_point_mass() {
        let inst = ProblemInstance::validate(
            vec![City::new("a", 1.0, 4.0), City::new("b", 1.0, 4.0)],
            8,
            2,
        )
        .unwrap();
        let tp = solve_kappa(&inst, &TargetFunction::Sqrt, 2).unwrap();
        let r = optimize_proportional(&inst, 2, &tp, ProportionalOptions::default()).unwrap();
        assert!(r.expected_phi.abs() < 1e-9);
        assert!(r.optimal);
    }

    #[test]
    fn example_one_proportional() {
        let inst = fixtures::example1();
        let tp = solve_kappa(&inst, &TargetFunction::Sqrt, 4).unwrap();
        let r = optimize_proportional(&inst, 4, &tp, ProportionalOptions::default()).unwrap();
        assert!(audit(&inst, &r.distribution).unwrap().passes(4));
        for w in r.log.rows.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-9);
        }
        assert!(r.log.to_csv().starts_with("iteration,"));
    }

    #[test]
    fn iteration_limit_brackets_the_optimum() {
        let inst = fixtures::fig5();
        let tp = solve_kappa(&inst, &TargetFunction::Sqrt, 4).unwrap();
        let full = optimize_proportional(&inst, 4, &tp, ProportionalOptions::default()).unwrap();
        assert!(full.optimal);
        assert_eq!(full.lower_bound, full.objective);
        assert!(full.master.iterations > 2);
        let cut = optimize_proportional(
            &inst,
            4,
            &tp,
            ProportionalOptions {
                max_iterations: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!cut.optimal);
        assert_eq!(cut.master.iterations, 2);
        assert!(audit(&inst, &cut.distribution).unwrap().passes(4));
        assert!(cut.objective >= full.objective - 1e-9);
        assert!(cut.lower_bound <= full.objective + 1e-9);
        for row in &full.log.rows {
            assert!(row.lower_bound <= full.objective + 1e-9);
        }
    }
}
