//! Planning the letter-sending stage of a two-stage sortition process.
//!
//! Given municipalities with populations and letter caps, a letter budget and
//! an outreach budget `t`, the solvers produce a probability distribution over
//! letter allocations touching at most `t` municipalities, such that every
//! resident receives a letter with the same probability.

pub mod apportion;
pub mod buckets;
pub mod colgen;
pub mod fixtures;
pub mod greedy;
pub mod layout;
pub mod lp;
pub mod model;
pub mod pricing;
pub mod report;
pub mod roster;
pub mod targets;

pub use apportion::{
    group, letters_per_group, plan, Apportionment, Group, GroupPlan, MinBudget, MinBudgetMode,
    PlanInputs, SizeThresholds,
};
pub use buckets::{buckets, Bucket, BucketRule, BucketsError, BucketsResult};
pub use colgen::{feasible, min_feasible_t, optimize_proportional, ColgenError, PricingMode};
pub use greedy::{greedy_equal, GreedyError, GreedyResult};
pub use layout::{
    dependent_round, rng_from_seed, DistributionEntry, Layout, LayoutError, LetterDistribution,
    Mode, Segment, RNG_NAME,
};
pub use model::{
    audit, Allocation, City, FairnessAudit, GroupKey, ModelError, ProblemInstance, SizeClass,
    WidthProfile, ABS_TOL, FAIRNESS_REL_TOL,
};
pub use pricing::{DeviationScope, DualPoint};
pub use report::{expected_phi, phi, Metrics};
pub use roster::{read_roster, CapRule, Roster, RosterError};
pub use targets::{solve_kappa, TargetError, TargetFunction, TargetProfile};
