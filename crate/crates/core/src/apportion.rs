//! Stratification into (state, size class) groups and division of the letter
//! and outreach budgets across groups.
//!
//! Letters are split by systematic rounding of population shares. The outreach
//! budget follows a divisor method with rounding up (Adams) applied to the
//! groups' global target widths, clamped to per-group bounds.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buckets::buckets;
use crate::colgen::{min_feasible_t_limited, ColgenError, PricingMode};
use crate::greedy::{min_t_greedy, GreedyOptions};
use crate::layout::rng_from_seed;
use crate::model::{City, GroupKey, ModelError, ProblemInstance, SizeClass};
use crate::targets::{solve_kappa, TargetError, TargetFunction, TargetProfile};

const GAMMA_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApportionError {
    #[error("budget {t} outside [{min}, {max}] given the group bounds")]
    BudgetOutOfRange { t: usize, min: usize, max: usize },
    #[error("size thresholds must be positive and strictly increasing")]
    InvalidThresholds,
    #[error("group {key}: {source}")]
    Group { key: String, source: ModelError },
    #[error("group {key}: no budget up to {n} works for the chosen method")]
    NoMinBudget { key: String, n: usize },
    #[error("group {key}: minimum budget search failed: {source}")]
    MinBudgetSolver { key: String, source: ColgenError },
    #[error("group {key} received no letters")]
    NoLetters { key: String },
    #[error(transparent)]
    Targets(#[from] TargetError),
    #[error("{0}")]
    Mismatch(String),
}

/// Inhabitant counts where the medium and large classes begin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeThresholds {
    pub medium_from: f64,
    pub large_from: f64,
}

impl Default for SizeThresholds {
    fn default() -> Self {
        SizeThresholds {
            medium_from: 20_000.0,
            large_from: 100_000.0,
        }
    }
}

impl SizeThresholds {
    pub fn validate(&self) -> Result<(), ApportionError> {
        if self.medium_from > 0.0 && self.large_from > self.medium_from {
            Ok(())
        } else {
            Err(ApportionError::InvalidThresholds)
        }
    }

    pub fn classify(&self, population: f64) -> SizeClass {
        if population < self.medium_from {
            SizeClass::Small
        } else if population < self.large_from {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    pub key: GroupKey,
    /// Indices into the (sorted) instance.
    pub members: Vec<usize>,
    pub population: f64,
    pub share: f64,
}

impl Group {
    pub fn n(&self) -> usize {
        self.members.len()
    }
}

/// Partitions the roster by state and size class; empty classes are omitted.
pub fn group(
    instance: &ProblemInstance,
    thresholds: &SizeThresholds,
) -> Result<Vec<Group>, ApportionError> {
    thresholds.validate()?;
    let mut map: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, c) in instance.cities().iter().enumerate() {
        let state = c
            .group_key
            .as_ref()
            .map(|k| k.state.clone())
            .unwrap_or_default();
        let key = GroupKey {
            state,
            size_class: thresholds.classify(c.population),
        };
        map.entry(key).or_default().push(i);
    }
    Ok(map
        .into_iter()
        .map(|(key, members)| {
            let population = members.iter().map(|&i| instance.city(i).population).sum();
            let share = members.iter().map(|&i| instance.shares()[i]).sum();
            Group {
                key,
                members,
                population,
                share,
            }
        })
        .collect())
}

/// Systematic rounding of `share * letters`: one uniform offset, cumulative
/// floors. Each result is the floor or ceiling of its share and the total is
/// exactly `letters`.
pub fn letters_per_group(shares: &[f64], letters: u64, seed: u64) -> Vec<u64> {
    let u: f64 = rng_from_seed(seed).random();
    let ell = letters as f64;
    let total: f64 = shares.iter().sum();
    let mut out = Vec::with_capacity(shares.len());
    let mut cum = 0.0;
    let mut prev = u.floor() as i64;
    for (k, s) in shares.iter().enumerate() {
        cum += s / total * ell;
        let c = if k + 1 == shares.len() { ell } else { cum };
        let cur = (c + u).floor() as i64;
        out.push((cur - prev).max(0) as u64);
        prev = cur;
    }
    out
}

/// Per-group budget for multiplier `gamma`.
pub fn group_budget(gamma: f64, width: f64, n: usize, t_min: usize) -> usize {
    let raw = (gamma * width - 1e-12).ceil().max(0.0) as usize;
    raw.min(n).max(t_min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Apportionment {
    pub budgets: Vec<usize>,
    pub gamma: f64,
}

/// Finds budgets summing to `t`: the smallest multiplier reaching `t`, then
/// removes any overshoot from groups that just stepped up, in ascending order
/// of `frac(gamma * width)` (ties by group order), never below their minimum.
pub fn apportion_t(
    widths: &[f64],
    sizes: &[usize],
    t_min: &[usize],
    t: usize,
) -> Result<Apportionment, ApportionError> {
    let k = widths.len();
    if sizes.len() != k || t_min.len() != k {
        return Err(ApportionError::Mismatch(
            "group vectors differ in length".into(),
        ));
    }
    let lo_sum: usize = t_min.iter().sum();
    let hi_sum: usize = sizes.iter().zip(t_min).map(|(n, m)| (*n).max(*m)).sum();
    if t < lo_sum || t > hi_sum {
        return Err(ApportionError::BudgetOutOfRange {
            t,
            min: lo_sum,
            max: hi_sum,
        });
    }
    let total = |gamma: f64| -> usize {
        (0..k)
            .map(|g| group_budget(gamma, widths[g], sizes[g], t_min[g]))
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = (0..k)
        .map(|g| sizes[g] as f64 / widths[g].max(1e-300))
        .fold(1.0, f64::max)
        * 2.0;
    if total(lo) >= t {
        hi = lo;
    } else {
        for _ in 0..GAMMA_STEPS {
            let mid = 0.5 * (lo + hi);
            if total(mid) >= t {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let gamma = hi;
    let mut budgets: Vec<usize> = (0..k)
        .map(|g| group_budget(gamma, widths[g], sizes[g], t_min[g]))
        .collect();
    let mut excess = budgets.iter().sum::<usize>() - t;
    if excess > 0 {
        let mut order: Vec<usize> = (0..k)
            .filter(|&g| {
                let raw = (gamma * widths[g] - 1e-12).ceil().max(0.0) as usize;
                raw == budgets[g] && budgets[g] > t_min[g]
            })
            .collect();
        let frac = |g: usize| {
            let v = gamma * widths[g];
            v - v.floor()
        };
        order.sort_by(|&a, &b| frac(a).total_cmp(&frac(b)).then(a.cmp(&b)));
        for g in order {
            if excess == 0 {
                break;
            }
            budgets[g] -= 1;
            excess -= 1;
        }
    }
    if excess > 0 {
        return Err(ApportionError::Mismatch(format!(
            "could not remove an overshoot of {excess}"
        )));
    }
    Ok(Apportionment { budgets, gamma })
}

/// How the per-group minimum budget is determined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinBudgetMode {
    /// Width bound only.
    #[default]
    LowerBound,
    GreedyEqual,
    Buckets,
    ColumnGeneration,
}

/// Sub-instance for one group with `letters` letters.
pub fn group_instance(
    instance: &ProblemInstance,
    group: &Group,
    letters: u64,
    budget: usize,
) -> Result<ProblemInstance, ApportionError> {
    if letters == 0 {
        return Err(ApportionError::NoLetters {
            key: group.key.to_string(),
        });
    }
    let cities: Vec<City> = group
        .members
        .iter()
        .map(|&i| {
            let mut c = instance.city(i).clone();
            c.cap = instance.raw_cap(i);
            c
        })
        .collect();
    ProblemInstance::validate(cities, letters, budget.max(1)).map_err(|source| {
        ApportionError::Group {
            key: group.key.to_string(),
            source,
        }
    })
}

/// Per-group minimum budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinBudget {
    pub budget: usize,
    /// False when column generation left a smaller budget undecided.
    pub proven: bool,
}

impl MinBudget {
    pub fn exact(budget: usize) -> Self {
        MinBudget {
            budget,
            proven: true,
        }
    }
}

/// Smallest budget the chosen method needs for a group (at least 1), or
/// `None` when no budget up to the group size works. Errors are solver
/// failures, not infeasibility.
pub fn group_min_budget(
    sub: &ProblemInstance,
    inputs: &PlanInputs,
) -> Result<Option<MinBudget>, ColgenError> {
    let lb = sub.lower_bound_t().max(1);
    let n = sub.n();
    let f = &inputs.function;
    let started = std::time::Instant::now();
    let found = match inputs.mode {
        MinBudgetMode::LowerBound => Some(MinBudget::exact(lb)),
        MinBudgetMode::GreedyEqual => {
            min_t_greedy(sub, n, GreedyOptions::default()).map(MinBudget::exact)
        }
        MinBudgetMode::Buckets => (lb..=n)
            .find(|&t| {
                solve_kappa(sub, f, t)
                    .ok()
                    .is_some_and(|tp| buckets(sub, t, &tp).is_ok())
            })
            .map(MinBudget::exact),
        MinBudgetMode::ColumnGeneration => {
            let limit = inputs.pivots_per_row.map(|k| k * (n + 1));
            match min_feasible_t_limited(sub, n, PricingMode::Exact, limit) {
                Ok(r) => Some(MinBudget {
                    budget: r.t.max(1),
                    proven: r.proven,
                }),
                Err(ColgenError::NoFeasibleT { .. }) => None,
                Err(e) => return Err(e),
            }
        }
    };
    log::debug!(
        "min budget {found:?} for {n} cities (bound {lb}, {:?}) in {:.2?}",
        inputs.mode,
        started.elapsed()
    );
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPlanEntry {
    pub key: GroupKey,
    pub members: Vec<usize>,
    pub population: f64,
    pub share: f64,
    pub letters: u64,
    pub budget: usize,
    pub min_budget: usize,
    /// See [`MinBudget::proven`].
    pub min_budget_proven: bool,
    /// Sum of global target widths over the members.
    pub global_width: f64,
    /// Global targets of the members, in member order.
    pub global_tau: Vec<f64>,
    /// Targets recomputed inside the group at its own letters and budget.
    pub local: TargetProfile,
}

impl GroupPlanEntry {
    pub fn n(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPlan {
    pub entries: Vec<GroupPlanEntry>,
    pub gamma: f64,
    pub letters: u64,
    pub budget: usize,
    pub mode: MinBudgetMode,
    pub function_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanInputs {
    pub thresholds: SizeThresholds,
    pub function: TargetFunction,
    pub mode: MinBudgetMode,
    pub seed: u64,
    /// Pivot limit per master row for column-generation minimum budgets;
    /// `None` searches exhaustively.
    pub pivots_per_row: Option<usize>,
}

/// Default of [`PlanInputs::pivots_per_row`].
pub const DEFAULT_PIVOTS_PER_ROW: usize = 10;

/// Groups, splits letters, and computes per-group minimum budgets. The
/// returned sub-instances carry the group letters.
pub fn prepare_groups(
    instance: &ProblemInstance,
    inputs: &PlanInputs,
) -> Result<(Vec<Group>, Vec<u64>, Vec<ProblemInstance>), ApportionError> {
    let groups = group(instance, &inputs.thresholds)?;
    let shares: Vec<f64> = groups.iter().map(|g| g.share).collect();
    let letters = letters_per_group(&shares, instance.letters(), inputs.seed);
    let subs = groups
        .iter()
        .zip(&letters)
        .map(|(g, &l)| group_instance(instance, g, l, 1))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((groups, letters, subs))
}

/// Full plan; per-group minimum budgets are computed sequentially.
pub fn plan(instance: &ProblemInstance, inputs: &PlanInputs) -> Result<GroupPlan, ApportionError> {
    let (groups, letters, subs) = prepare_groups(instance, inputs)?;
    let mins = groups
        .iter()
        .zip(&subs)
        .map(|(g, s)| {
            group_min_budget(s, inputs)
                .map_err(|source| ApportionError::MinBudgetSolver {
                    key: g.key.to_string(),
                    source,
                })?
                .ok_or_else(|| ApportionError::NoMinBudget {
                    key: g.key.to_string(),
                    n: g.n(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    plan_with_minimums(instance, inputs, groups, letters, subs, mins)
}

/// Plan from precomputed minimum budgets (e.g. computed in parallel).
pub fn plan_with_minimums(
    instance: &ProblemInstance,
    inputs: &PlanInputs,
    groups: Vec<Group>,
    letters: Vec<u64>,
    subs: Vec<ProblemInstance>,
    mins: Vec<MinBudget>,
) -> Result<GroupPlan, ApportionError> {
    let global = solve_kappa(instance, &inputs.function, instance.budget())?;
    let widths: Vec<f64> = groups
        .iter()
        .map(|g| g.members.iter().map(|&i| global.widths[i]).sum())
        .collect();
    let sizes: Vec<usize> = groups.iter().map(Group::n).collect();
    let floors: Vec<usize> = mins.iter().map(|m| m.budget).collect();
    let app = apportion_t(&widths, &sizes, &floors, instance.budget())?;
    let mut entries = Vec::with_capacity(groups.len());
    for (k, g) in groups.into_iter().enumerate() {
        let sub = subs[k].with_budget(app.budgets[k]);
        let local = solve_kappa(&sub, &inputs.function, app.budgets[k])?;
        // Members listed in the sub-instance's own order.
        let members: Vec<usize> = (0..sub.n())
            .map(|j| g.members[sub.source_index(j)])
            .collect();
        let global_tau = members.iter().map(|&i| global.tau[i]).collect();
        entries.push(GroupPlanEntry {
            population: g.population,
            share: g.share,
            letters: letters[k],
            budget: app.budgets[k],
            min_budget: mins[k].budget,
            min_budget_proven: mins[k].proven,
            global_width: widths[k],
            global_tau,
            local,
            key: g.key,
            members,
        });
    }
    Ok(GroupPlan {
        entries,
        gamma: app.gamma,
        letters: instance.letters(),
        budget: instance.budget(),
        mode: inputs.mode,
        function_name: inputs.function.name().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalGlobalRow {
    pub key: GroupKey,
    pub budget: usize,
    /// Largest of `local/global` and `global/local` over members.
    pub max_ratio: f64,
    /// Budget of one: local targets equal the group's letters.
    pub single_city: bool,
}

pub fn local_vs_global_report(plan: &GroupPlan) -> Vec<LocalGlobalRow> {
    plan.entries
        .iter()
        .map(|e| {
            let max_ratio = e
                .local
                .tau
                .iter()
                .zip(&e.global_tau)
                .map(|(l, g)| {
                    let r = l / g;
                    r.max(1.0 / r)
                })
                .fold(1.0, f64::max);
            LocalGlobalRow {
                key: e.key.clone(),
                budget: e.budget,
                max_ratio,
                single_city: e.budget == 1,
            }
        })
        .collect()
}

/// Table of groups with one budget column per labelled plan. All plans must
/// share groups and letters.
pub fn plan_table_csv(plans: &[(&str, &GroupPlan)]) -> Result<String, ApportionError> {
    let Some((_, first)) = plans.first() else {
        return Ok(String::new());
    };
    for (label, p) in plans {
        let same = p.entries.len() == first.entries.len()
            && p.entries
                .iter()
                .zip(&first.entries)
                .all(|(a, b)| a.key == b.key && a.letters == b.letters);
        if !same {
            return Err(ApportionError::Mismatch(format!(
                "plan '{label}' has different groups"
            )));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "group".to_string(),
        "population".into(),
        "share".into(),
        "n_G".into(),
        "letters_G".into(),
    ];
    header.extend(plans.iter().map(|(l, _)| format!("t_G_{l}")));
    w.write_record(&header).expect("in-memory write");
    for (k, e) in first.entries.iter().enumerate() {
        let mut rec = vec![
            e.key.to_string(),
            format!("{}", e.population),
            format!("{:.6}", e.share),
            e.n().to_string(),
            e.letters.to_string(),
        ];
        rec.extend(plans.iter().map(|(_, p)| p.entries[k].budget.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn city(id: &str, state: &str, pop: f64) -> City {
        City {
            group_key: Some(GroupKey {
                state: state.into(),
                size_class: SizeClass::Small,
            }),
            ..City::new(id, pop, pop)
        }
    }

    #[test]
    fn three_classes_in_one_state() {
        let inst = ProblemInstance::validate(
            vec![
                city("a", "X", 100.0),
                city("b", "X", 30_000.0),
                city("c", "X", 200_000.0),
            ],
            10,
            3,
        )
        .unwrap();
        let g = group(&inst, &SizeThresholds::default()).unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.iter().all(|g| g.n() == 1));
        let classes: Vec<_> = g.iter().map(|g| g.key.size_class).collect();
        assert_eq!(
            classes,
            [SizeClass::Small, SizeClass::Medium, SizeClass::Large]
        );
    }

    #[test]
    fn empty_classes_are_omitted() {
        let inst =
            ProblemInstance::validate(vec![city("a", "X", 100.0), city("b", "Y", 200.0)], 10, 2)
                .unwrap();
        let g = group(&inst, &SizeThresholds::default()).unwrap();
        assert_eq!(g.len(), 2);
        assert!(g.iter().all(|g| g.key.size_class == SizeClass::Small));
    }

    #[test]
    fn bad_thresholds() {
        let t = SizeThresholds {
            medium_from: 5.0,
            large_from: 5.0,
        };
        assert_eq!(t.validate(), Err(ApportionError::InvalidThresholds));
    }

    #[test]
    fn halves_are_exact() {
        for seed in 0..20 {
            assert_eq!(letters_per_group(&[0.5, 0.5], 10, seed), vec![5, 5]);
        }
    }

    #[test]
    fn letters_sum_and_bounds() {
        let shares = [0.17, 0.5, 0.33];
        for seed in 0..100 {
            let l = letters_per_group(&shares, 10, seed);
            assert_eq!(l.iter().sum::<u64>(), 10);
            for (s, v) in shares.iter().zip(&l) {
                let x = s * 10.0;
                assert!(*v == x.floor() as u64 || *v == x.ceil() as u64);
            }
        }
    }

    #[test]
    fn single_group_takes_everything() {
        let a = apportion_t(&[2.3], &[10], &[1], 5).unwrap();
        assert_eq!(a.budgets, vec![5]);
    }

    #[test]
    fn two_group_step_structure() {
        let a = apportion_t(&[1.2, 2.8], &[10, 10], &[1, 1], 4).unwrap();
        assert_eq!(a.budgets, vec![1, 3]);
    }

    #[test]
    fn simultaneous_jump_is_trimmed() {
        // Equal widths jump together; the first group in order gives one back.
        let a = apportion_t(&[1.0, 1.0], &[5, 5], &[1, 1], 3).unwrap();
        assert_eq!(a.budgets.iter().sum::<usize>(), 3);
        assert_eq!(a.budgets, vec![1, 2]);
    }

    #[test]
    fn out_of_range_budget() {
        assert!(matches!(
            apportion_t(&[1.0, 1.0], &[1, 1], &[1, 1], 3),
            Err(ApportionError::BudgetOutOfRange { .. })
        ));
        assert!(matches!(
            apportion_t(&[1.0, 1.0], &[3, 3], &[1, 1], 1),
            Err(ApportionError::BudgetOutOfRange { .. })
        ));
    }

    #[test]
    fn single_group_plan_has_unit_ratios() {
        let cities: Vec<City> = (0..6)
            .map(|i| city(&format!("c{i}"), "X", 100.0 + 50.0 * i as f64))
            .collect();
        let inst = ProblemInstance::validate(cities, 60, 3).unwrap();
        let inputs = PlanInputs {
            thresholds: SizeThresholds::default(),
            function: TargetFunction::Sqrt,
            mode: MinBudgetMode::LowerBound,
            seed: 1,
            pivots_per_row: None,
        };
        let p = plan(&inst, &inputs).unwrap();
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.entries[0].budget, 3);
        let rep = local_vs_global_report(&p);
        assert!((rep[0].max_ratio - 1.0).abs() < 1e-9);
        let csv = plan_table_csv(&[("lb", &p)]).unwrap();
        assert!(csv.starts_with("group,population,share,n_G,letters_G,t_G_lb"));
    }

    #[test]
    fn budget_one_is_flagged_with_full_letters() {
        // Two states; the second is a single large city that gets budget 1.
        let mut cities: Vec<City> = (0..5)
            .map(|i| city(&format!("s{i}"), "A", 1000.0 + i as f64))
            .collect();
        cities.push(city("big", "B", 1500.0));
        let inst = ProblemInstance::validate(cities, 100, 3).unwrap();
        let inputs = PlanInputs {
            thresholds: SizeThresholds::default(),
            function: TargetFunction::Sqrt,
            mode: MinBudgetMode::LowerBound,
            seed: 3,
            pivots_per_row: None,
        };
        let p = plan(&inst, &inputs).unwrap();
        let rep = local_vs_global_report(&p);
        let b = p.entries.iter().position(|e| e.key.state == "B").unwrap();
        assert!(rep[b].single_city);
        assert!((p.entries[b].local.tau[0] - p.entries[b].letters as f64).abs() < 1e-9);
    }
}
