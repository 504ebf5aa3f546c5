//! Piecewise-constant layouts over `[0, t)`, their decomposition into
//! finite-support distributions, rho-line sampling and dependent rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Allocation, ABS_TOL};

/// Name of the generator behind every seeded draw, recorded in reports.
pub const RNG_NAME: &str = "ChaCha20Rng (rand_chacha 0.9, seed_from_u64)";

const BREAKPOINT_MERGE: f64 = 1e-12;

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("no city covers position {x}")]
    CoverageGap { x: f64 },
    #[error("letters sum to {total}, expected {expected}")]
    MassMismatch { total: f64, expected: f64 },
    #[error("probabilities sum to {total}, expected 1")]
    ProbabilityMass { total: f64 },
    #[error("entry {index} has probability {p} outside (0, 1]")]
    InvalidProbability { index: usize, p: f64 },
    #[error("distribution has no entries")]
    Empty,
    #[error("allocations have inconsistent lengths")]
    RaggedEntries,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub city: usize,
    pub start: f64,
    pub end: f64,
    pub height: f64,
}

impl Segment {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height
    }
}

/// Rectangles laid side by side on `[0, t)`; position `x` and `x + 1`
/// belong to the same draw of rho.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub segments: Vec<Segment>,
    pub t: usize,
    pub letters: u64,
    pub n: usize,
    /// Set for layouts produced by the greedy equal-height walk.
    #[serde(default)]
    pub greedy_equal: bool,
}

impl Layout {
    /// Builds a layout, sorting segments by start.
    pub fn new(mut segments: Vec<Segment>, t: usize, letters: u64, n: usize) -> Self {
        segments.sort_by(|a, b| a.start.total_cmp(&b.start));
        Layout {
            segments,
            t,
            letters,
            n,
            greedy_equal: false,
        }
    }

    /// Segment covering `x`, if any.
    pub fn segment_at(&self, x: f64) -> Option<&Segment> {
        let idx = self.segments.partition_point(|s| s.start <= x);
        if idx == 0 {
            return None;
        }
        let s = &self.segments[idx - 1];
        (x < s.end).then_some(s)
    }

    /// Height at `x` (zero when uncovered).
    pub fn height_at(&self, x: f64) -> f64 {
        self.segment_at(x).map_or(0.0, |s| s.height)
    }

    /// Sum of heights at `x` and every position below it congruent mod 1.
    pub fn cumulative(&self, x: f64) -> f64 {
        let frac = x - x.floor();
        let top = x.floor() as i64;
        (0..=top).map(|k| self.height_at(k as f64 + frac)).sum()
    }

    /// Area per city.
    pub fn city_areas(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for s in &self.segments {
            out[s.city] += s.area();
        }
        out
    }

    /// First uncovered position on `[0, t)`, if any.
    pub fn coverage_gap(&self) -> Option<f64> {
        let mut pos = 0.0;
        for s in &self.segments {
            if s.start > pos + ABS_TOL {
                return Some(pos);
            }
            pos = pos.max(s.end);
        }
        (pos < self.t as f64 - ABS_TOL).then_some(pos)
    }

    /// Sorted distinct fractional parts of all segment endpoints, with 0 and 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0, 1.0];
        for s in &self.segments {
            for v in [s.start, s.end] {
                let f = v - v.floor();
                pts.push(f);
            }
        }
        pts.sort_by(f64::total_cmp);
        let mut out: Vec<f64> = Vec::with_capacity(pts.len());
        for p in pts {
            match out.last() {
                Some(&last) if p - last < BREAKPOINT_MERGE => {}
                _ => out.push(p),
            }
        }
        // The closing 1.0 may have been swallowed by a point just below it.
        if let Some(last) = out.last_mut() {
            *last = 1.0;
        }
        out
    }

    /// Allocation drawn at offset `rho` in `[0, 1)`.
    pub fn allocation_at(&self, rho: f64) -> Result<Allocation, LayoutError> {
        let mut a = vec![0.0; self.n];
        for k in 0..self.t {
            let x = k as f64 + rho;
            let s = self.segment_at(x).ok_or(LayoutError::CoverageGap { x })?;
            a[s.city] += s.height;
        }
        Ok(Allocation(a))
    }

    /// Decomposes the layout into a fractional distribution.
    pub fn extract_distribution(&self) -> Result<LetterDistribution, LayoutError> {
        if let Some(x) = self.coverage_gap() {
            return Err(LayoutError::CoverageGap { x });
        }
        let bps = self.breakpoints();
        let mut entries: Vec<DistributionEntry> = Vec::with_capacity(bps.len());
        for w in bps.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let allocation = self.allocation_at(mid)?;
            let probability = w[1] - w[0];
            match entries.last_mut() {
                Some(prev) if same_allocation(&prev.allocation, &allocation) => {
                    prev.probability += probability;
                }
                _ => entries.push(DistributionEntry {
                    probability,
                    allocation,
                }),
            }
        }
        Ok(LetterDistribution {
            entries,
            mode: Mode::Fractional,
        })
    }

    /// Allocation at `rho`; pure function of its inputs.
    pub fn sample(&self, rho: f64) -> Result<Allocation, LayoutError> {
        self.allocation_at(rho.clamp(0.0, 1.0 - f64::EPSILON))
    }
}

fn same_allocation(a: &Allocation, b: &Allocation) -> bool {
    a.0.iter().zip(&b.0).all(|(x, y)| (x - y).abs() <= ABS_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fractional,
    Integral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    #[serde(rename = "p")]
    pub probability: f64,
    #[serde(rename = "letters")]
    pub allocation: Allocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterDistribution {
    entries: Vec<DistributionEntry>,
    mode: Mode,
}

impl LetterDistribution {
    /// Checks probabilities and lengths. Mass must be 1 within 1e-9.
    pub fn new(entries: Vec<DistributionEntry>, mode: Mode) -> Result<Self, LayoutError> {
        let n = entries.first().ok_or(LayoutError::Empty)?.allocation.len();
        for (index, e) in entries.iter().enumerate() {
            if !(e.probability > 0.0 && e.probability <= 1.0 + ABS_TOL) {
                return Err(LayoutError::InvalidProbability {
                    index,
                    p: e.probability,
                });
            }
            if e.allocation.len() != n {
                return Err(LayoutError::RaggedEntries);
            }
        }
        let total: f64 = entries.iter().map(|e| e.probability).sum();
        if (total - 1.0).abs() > ABS_TOL {
            return Err(LayoutError::ProbabilityMass { total });
        }
        Ok(LetterDistribution { entries, mode })
    }

    /// Drops non-positive weights, merges duplicate allocations and rescales
    /// to unit mass. Used for LP solutions carrying round-off.
    pub fn from_weights(weighted: Vec<(f64, Allocation)>, mode: Mode) -> Result<Self, LayoutError> {
        let mut entries: Vec<DistributionEntry> = Vec::new();
        for (p, a) in weighted {
            if p <= 1e-12 {
                continue;
            }
            if let Some(e) = entries
                .iter_mut()
                .find(|e| same_allocation(&e.allocation, &a))
            {
                e.probability += p;
            } else {
                entries.push(DistributionEntry {
                    probability: p,
                    allocation: a,
                });
            }
        }
        let total: f64 = entries.iter().map(|e| e.probability).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(LayoutError::ProbabilityMass { total });
        }
        for e in &mut entries {
            e.probability /= total;
        }
        LetterDistribution::new(entries, mode)
    }

    pub fn point_mass(allocation: Allocation, mode: Mode) -> Self {
        LetterDistribution {
            entries: vec![DistributionEntry {
                probability: 1.0,
                allocation,
            }],
            mode,
        }
    }

    /// No validation; for tests and deserialized documents checked later.
    pub fn from_entries_unchecked(entries: Vec<DistributionEntry>, mode: Mode) -> Self {
        LetterDistribution { entries, mode }
    }

    pub fn entries(&self) -> &[DistributionEntry] {
        &self.entries
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.entries.first().map_or(0, |e| e.allocation.len())
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).sum()
    }

    pub fn max_support(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.allocation.support_size())
            .max()
            .unwrap_or(0)
    }

    /// Entry whose cumulative probability interval contains `rho`.
    pub fn sample(&self, rho: f64) -> &Allocation {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.probability;
            if rho < acc {
                return &e.allocation;
            }
        }
        &self
            .entries
            .last()
            .expect("non-empty distribution")
            .allocation
    }

    /// Probability that city `i` receives letters.
    pub fn selection_probability(&self, i: usize) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.allocation.0[i] > ABS_TOL)
            .map(|e| e.probability)
            .sum()
    }
}

/// Whether larger cities in the support receive at least as many letters as
/// smaller ones, up to `slack`.
pub fn is_monotone(allocation: &Allocation, slack: f64) -> bool {
    monotonicity_violations(allocation, slack) == 0
}

/// Adjacent pairs of supported cities (in population order) where the larger
/// city receives fewer letters than the smaller one by more than `slack`.
pub fn monotonicity_violations(allocation: &Allocation, slack: f64) -> usize {
    let support: Vec<f64> = allocation
        .letters()
        .iter()
        .copied()
        .filter(|&a| a > ABS_TOL)
        .collect();
    support
        .windows(2)
        .filter(|w| w[1] < w[0] - slack - ABS_TOL)
        .count()
}

/// Rounds a fractional allocation to integers keeping the letter sum and
/// each city's expectation.
pub fn dependent_round(
    allocation: &Allocation,
    letters: u64,
    seed: u64,
) -> Result<Allocation, LayoutError> {
    let mut rng = rng_from_seed(seed);
    dependent_round_with(allocation, letters, &mut rng)
}

/// As [`dependent_round`] with a caller-provided generator.
pub fn dependent_round_with<R: Rng + ?Sized>(
    allocation: &Allocation,
    letters: u64,
    rng: &mut R,
) -> Result<Allocation, LayoutError> {
    let expected = letters as f64;
    let total = allocation.total();
    if (total - expected).abs() > ABS_TOL * expected.max(1.0) {
        return Err(LayoutError::MassMismatch { total, expected });
    }
    let mut a: Vec<f64> = allocation.0.clone();
    let mut base = vec![0.0; a.len()];
    let mut frac = vec![0.0; a.len()];
    for i in 0..a.len() {
        let r = a[i].round();
        if (a[i] - r).abs() <= ABS_TOL {
            base[i] = r;
        } else {
            base[i] = a[i].floor();
            frac[i] = a[i] - base[i];
        }
    }
    let is_frac = |f: f64| f > ABS_TOL && f < 1.0 - ABS_TOL;
    let mut open: Vec<usize> = (0..a.len()).filter(|&i| is_frac(frac[i])).collect();
    // Each step settles at least one of the two lowest-index fractional entries.
    while open.len() >= 2 {
        let (i, j) = (open[0], open[1]);
        let d1 = (1.0 - frac[i]).min(frac[j]);
        let d2 = frac[i].min(1.0 - frac[j]);
        if rng.random::<f64>() < d2 / (d1 + d2) {
            frac[i] += d1;
            frac[j] -= d1;
        } else {
            frac[i] -= d2;
            frac[j] += d2;
        }
        open.retain(|&k| is_frac(frac[k]));
    }
    // A single leftover can only be round-off; settle it to the nearest side.
    for k in open {
        frac[k] = frac[k].round();
    }
    for i in 0..a.len() {
        a[i] = base[i] + frac[i].round();
    }
    // Repair the sum against accumulated round-off.
    let mut diff = letters as i64 - a.iter().map(|v| *v as i64).sum::<i64>();
    let mut k = 0;
    while diff != 0 && k < 4 * a.len() {
        let i = k % a.len();
        let orig = allocation.0[i];
        if diff > 0 && a[i] < orig.ceil() && orig > ABS_TOL {
            a[i] += 1.0;
            diff -= 1;
        } else if diff < 0 && a[i] > orig.floor() {
            a[i] -= 1.0;
            diff += 1;
        }
        k += 1;
    }
    Ok(Allocation(a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(city: usize, start: f64, end: f64, height: f64) -> Segment {
        Segment {
            city,
            start,
            end,
            height,
        }
    }

    #[test]
    fn single_segment_layout() {
        let l = Layout::new(vec![seg(0, 0.0, 1.0, 7.0)], 1, 7, 1);
        let d = l.extract_distribution().unwrap();
        assert_eq!(d.entries().len(), 1);
        assert_eq!(d.entries()[0].probability, 1.0);
        assert_eq!(d.entries()[0].allocation.0, vec![7.0]);
    }

    #[test]
    fn breakpoint_at_one_third() {
        // Layer 0: city 0 on [0,1/3), city 1 on [1/3,1). Layer 1: city 2 whole.
        let l = Layout::new(
            vec![
                seg(0, 0.0, 1.0 / 3.0, 3.0),
                seg(1, 1.0 / 3.0, 1.0, 3.0),
                seg(2, 1.0, 2.0, 3.0),
            ],
            2,
            6,
            3,
        );
        let d = l.extract_distribution().unwrap();
        assert_eq!(d.entries().len(), 2);
        assert!((d.entries()[0].probability - 1.0 / 3.0).abs() < 1e-12);
        assert!((d.entries()[1].probability - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.entries()[0].allocation.0, vec![3.0, 0.0, 3.0]);
        assert_eq!(d.sample(0.0).0, vec![3.0, 0.0, 3.0]);
        assert_eq!(d.sample(0.5).0, vec![0.0, 3.0, 3.0]);
        assert_eq!(l.sample(0.5).unwrap().0, vec![0.0, 3.0, 3.0]);
    }

    #[test]
    fn gap_is_reported() {
        let l = Layout::new(vec![seg(0, 0.0, 0.5, 1.0), seg(1, 0.6, 1.0, 1.0)], 1, 1, 2);
        assert!(matches!(
            l.extract_distribution(),
            Err(LayoutError::CoverageGap { .. })
        ));
        let short = Layout::new(vec![seg(0, 0.0, 1.0, 1.0)], 2, 1, 1);
        assert!(short.coverage_gap().is_some());
    }

    #[test]
    fn identical_neighbours_merge() {
        let l = Layout::new(vec![seg(0, 0.0, 0.4, 2.0), seg(0, 0.4, 1.0, 2.0)], 1, 2, 1);
        assert_eq!(l.extract_distribution().unwrap().entries().len(), 1);
    }

    #[test]
    fn cumulative_sums_lower_layers() {
        let l = Layout::new(vec![seg(0, 0.0, 1.0, 2.0), seg(1, 1.0, 2.0, 5.0)], 2, 7, 2);
        assert_eq!(l.cumulative(0.5), 2.0);
        assert_eq!(l.cumulative(1.5), 7.0);
    }

    #[test]
    fn single_entry_sample() {
        let d = LetterDistribution::point_mass(Allocation(vec![1.0, 2.0]), Mode::Integral);
        for rho in [0.0, 0.3, 0.999] {
            assert_eq!(d.sample(rho).0, vec![1.0, 2.0]);
        }
    }

    #[test]
    fn distribution_validation() {
        let a = Allocation(vec![1.0]);
        let e = |p| DistributionEntry {
            probability: p,
            allocation: a.clone(),
        };
        assert!(LetterDistribution::new(vec![e(0.5), e(0.5)], Mode::Integral).is_ok());
        assert!(matches!(
            LetterDistribution::new(vec![e(0.5)], Mode::Integral),
            Err(LayoutError::ProbabilityMass { .. })
        ));
        assert!(matches!(
            LetterDistribution::new(vec![], Mode::Integral),
            Err(LayoutError::Empty)
        ));
        let merged = LetterDistribution::from_weights(
            vec![
                (0.5, a.clone()),
                (0.5, a.clone()),
                (0.0, Allocation(vec![0.0])),
            ],
            Mode::Integral,
        )
        .unwrap();
        assert_eq!(merged.entries().len(), 1);
    }

    #[test]
    fn rounding_integral_input_unchanged() {
        let a = Allocation(vec![1.0, 0.0, 4.0]);
        assert_eq!(dependent_round(&a, 5, 3).unwrap(), a);
    }

    #[test]
    fn rounding_two_halves() {
        let a = Allocation(vec![1.5, 1.5]);
        let mut first = 0;
        for seed in 0..4000 {
            let r = dependent_round(&a, 3, seed).unwrap();
            assert!(r.0 == vec![2.0, 1.0] || r.0 == vec![1.0, 2.0]);
            if r.0[0] == 2.0 {
                first += 1;
            }
        }
        let p = first as f64 / 4000.0;
        assert!((p - 0.5).abs() < 0.03, "p = {p}");
    }

    #[test]
    fn rounding_quarter_three_quarters() {
        let a = Allocation(vec![0.25, 0.75, 2.0]);
        let mut second = 0;
        for seed in 0..4000 {
            let r = dependent_round(&a, 3, seed).unwrap();
            assert_eq!(r.0[2], 2.0);
            assert!(r.0 == vec![0.0, 1.0, 2.0] || r.0 == vec![1.0, 0.0, 2.0]);
            if r.0[1] == 1.0 {
                second += 1;
            }
        }
        let p = second as f64 / 4000.0;
        assert!((p - 0.75).abs() < 0.03, "p = {p}");
    }

    #[test]
    fn rounding_rejects_mass_mismatch() {
        assert!(matches!(
            dependent_round(&Allocation(vec![1.2, 1.0]), 3, 0),
            Err(LayoutError::MassMismatch { .. })
        ));
    }

    #[test]
    fn rounding_is_deterministic_per_seed() {
        let a = Allocation(vec![0.3, 1.4, 2.6, 0.7]);
        assert_eq!(
            dependent_round(&a, 5, 9).unwrap(),
            dependent_round(&a, 5, 9).unwrap()
        );
    }

    #[test]
    fn monotone_predicate() {
        assert!(is_monotone(&Allocation(vec![0.0, 2.0, 0.0, 3.0]), 0.0));
        assert!(!is_monotone(&Allocation(vec![3.0, 0.0, 2.0]), 0.0));
        assert!(is_monotone(&Allocation(vec![3.0, 0.0, 2.0]), 1.0));
        assert_eq!(
            monotonicity_violations(&Allocation(vec![3.0, 2.0, 1.0]), 0.0),
            2
        );
    }
}
