//! Partition of the ascending city order into at most `t` contiguous buckets.
//! One city is drawn from each bucket proportionally to population and
//! receives the bucket height, so every city has a single possible letter
//! count when selected.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{Layout, Segment};
use crate::model::{Allocation, ProblemInstance, ABS_TOL};
use crate::targets::TargetProfile;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BucketsError {
    #[error("budget {t} below the width bound {bound}")]
    BelowWidthBound { t: usize, bound: usize },
    #[error("target profile has {got} entries, instance has {expected} cities")]
    TargetMismatch { expected: usize, got: usize },
    #[error("{remaining} cities left over after filling {t} buckets")]
    Failure {
        t: usize,
        remaining: usize,
        buckets: Vec<Bucket>,
    },
}

/// How the per-bucket target condition is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketRule {
    /// Target widths of the bucket may not exceed the remaining widths
    /// spread evenly over the remaining buckets.
    #[default]
    TargetWidth,
    /// Same comparison on target letters instead of target widths.
    TargetLetters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// First and last member (inclusive) in ascending order.
    pub first: usize,
    pub last: usize,
    /// Letters for whichever member is drawn.
    pub height: f64,
}

impl Bucket {
    pub fn members(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketsResult {
    pub buckets: Vec<Bucket>,
    pub layout: Layout,
}

pub fn buckets(
    instance: &ProblemInstance,
    t: usize,
    targets: &TargetProfile,
) -> Result<BucketsResult, BucketsError> {
    buckets_with(instance, t, targets, BucketRule::default())
}

pub fn buckets_with(
    instance: &ProblemInstance,
    t: usize,
    targets: &TargetProfile,
    rule: BucketRule,
) -> Result<BucketsResult, BucketsError> {
    let n = instance.n();
    let bound = instance.lower_bound_t();
    if t < bound {
        return Err(BucketsError::BelowWidthBound { t, bound });
    }
    if targets.tau.len() != n {
        return Err(BucketsError::TargetMismatch {
            expected: n,
            got: targets.tau.len(),
        });
    }
    let measure: &[f64] = match rule {
        BucketRule::TargetWidth => &targets.widths,
        BucketRule::TargetLetters => &targets.tau,
    };
    // suffix[i] = sum of measure over i..n
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + measure[i];
    }
    let fair = instance.fair_shares();

    let mut out = Vec::new();
    let mut i = 0;
    let mut j = 0;
    while j < t && i < n {
        let share = (t - j) as f64;
        let mut height = fair[i];
        let mut mass = measure[i];
        let mut min_cap = instance.cap(i);
        let mut last = i;
        for k in i + 1..n {
            let h = height + fair[k];
            let m = mass + measure[k];
            let cap = min_cap.min(instance.cap(k));
            let fits_cap = h <= cap + ABS_TOL;
            let fits_share = share * m <= suffix[i] * (1.0 + 1e-12) + ABS_TOL;
            if !(fits_cap && fits_share) {
                break;
            }
            height = h;
            mass = m;
            min_cap = cap;
            last = k;
        }
        out.push(Bucket {
            first: i,
            last,
            height,
        });
        i = last + 1;
        j += 1;
    }
    if i < n {
        return Err(BucketsError::Failure {
            t,
            remaining: n - i,
            buckets: out,
        });
    }

    let mut segments = Vec::with_capacity(n);
    for (j, b) in out.iter().enumerate() {
        let mut x = j as f64;
        for k in b.members() {
            let w = fair[k] / b.height;
            let end = if k == b.last { j as f64 + 1.0 } else { x + w };
            segments.push(Segment {
                city: k,
                start: x,
                end,
                height: b.height,
            });
            x = end;
        }
    }
    // Unused trailing buckets leave [len, t) empty; the layout spans only
    // the buckets actually filled.
    let layout = Layout::new(segments, out.len(), instance.letters(), n);
    Ok(BucketsResult {
        buckets: out,
        layout,
    })
}

/// Draws one city per bucket independently, with probability proportional
/// to its population within the bucket.
pub fn bucket_sample<R: Rng + ?Sized>(layout: &Layout, rng: &mut R) -> Allocation {
    let mut a = vec![0.0; layout.n];
    for j in 0..layout.t {
        let rho: f64 = rng.random();
        if let Some(s) = layout.segment_at(j as f64 + rho) {
            a[s.city] += s.height;
        }
    }
    Allocation(a)
}

/// CSV table: bucket, member ids, height, member widths.
pub fn bucket_table_csv(result: &BucketsResult, instance: &ProblemInstance) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bucket", "members", "height", "widths"])
        .expect("in-memory write");
    for (j, b) in result.buckets.iter().enumerate() {
        let ids: Vec<&str> = b.members().map(|k| instance.city(k).id.as_str()).collect();
        let widths: Vec<String> = b
            .members()
            .map(|k| format!("{:.9}", instance.fair_share(k) / b.height))
            .collect();
        w.write_record([
            j.to_string(),
            ids.join(";"),
            format!("{:.9}", b.height),
            widths.join(";"),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
