//! Small regression rosters and a synthetic national roster shaped like the
//! German apportionment table (state, size class, population, city count).

use rand::Rng;

use crate::apportion::SizeThresholds;
use crate::layout::rng_from_seed;
use crate::model::{City, GroupKey, ProblemInstance, SizeClass};
use crate::roster::CapRule;

pub const NAMES: [&str; 5] = ["example1", "fig5", "fig6", "np-hard", "national"];

/// Seed of the synthetic national roster served by [`by_name`].
pub const NATIONAL_SEED: u64 = 2024;

pub fn by_name(name: &str) -> Option<ProblemInstance> {
    match name {
        "example1" => Some(example1()),
        "fig5" => Some(fig5()),
        "fig6" => Some(fig6()),
        "np-hard" => Some(partition_reduction(&[1, 1, 2, 2])),
        "national" => Some(
            ProblemInstance::validate(synthetic_national(NATIONAL_SEED), 20_000, 80)
                .expect("synthetic roster is valid"),
        ),
        _ => None,
    }
}

fn build(pairs: &[(f64, f64)], letters: u64, budget: usize) -> ProblemInstance {
    let width = pairs.len().to_string().len().max(2);
    let cities = pairs
        .iter()
        .enumerate()
        .map(|(k, &(p, u))| City::new(format!("c{:0width$}", k + 1), p, u))
        .collect();
    ProblemInstance::validate(cities, letters, budget).expect("fixture is valid")
}

/// Eight cities, 60 letters, budget 4; total width 8/3.
pub fn example1() -> ProblemInstance {
    let pops = [10.0, 10.0, 40.0, 40.0, 40.0, 50.0, 70.0, 100.0];
    let caps = [5.0, 5.0, 20.0, 20.0, 20.0, 25.0, 35.0, 50.0];
    let pairs: Vec<_> = pops.iter().copied().zip(caps).collect();
    build(&pairs, 60, 4)
}

/// 26 cities with caps equal to populations and 100 letters. GreedyEqual
/// fails at budget 4 although 3 suffices.
pub fn fig5() -> ProblemInstance {
    let mut pops = vec![2.0];
    pops.extend([30.0; 9]);
    pops.extend([33.0; 10]);
    pops.extend([34.0; 5]);
    pops.push(228.0);
    let pairs: Vec<_> = pops.iter().map(|&p| (p, p)).collect();
    build(&pairs, 100, 4)
}

/// Eight cities with caps equal to populations and 129 letters. Buckets
/// fails for every budget up to 3 although 2 suffices.
pub fn fig6() -> ProblemInstance {
    let pops = [1.0, 4.0, 16.0, 64.0, 65.0, 113.0, 125.0, 128.0];
    let pairs: Vec<_> = pops.iter().map(|&p| (p, p)).collect();
    build(&pairs, 129, 2)
}

/// Partition instance: shares `x / sum(x)`, caps `x`, `sum(x)/2` letters,
/// budget 2. Feasible at budget 2 iff `x` splits into two equal halves.
pub fn partition_reduction(x: &[u64]) -> ProblemInstance {
    let sum: u64 = x.iter().sum();
    let pairs: Vec<_> = x.iter().map(|&v| (v as f64, v as f64)).collect();
    build(&pairs, (sum / 2).max(1), 2)
}

/// Two equal cities whose caps equal the letter budget; budget 1.
pub fn two_halves() -> ProblemInstance {
    build(&[(1.0, 8.0), (1.0, 8.0)], 8, 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub state: &'static str,
    pub class: SizeClass,
    pub population: u64,
    pub cities: usize,
}

const fn row(state: &'static str, class: SizeClass, population: u64, cities: usize) -> TableRow {
    TableRow {
        state,
        class,
        population,
        cities,
    }
}

use SizeClass::{Large as L, Medium as M, Small as S};

/// Published group totals for the national apportionment (42 groups).
pub const NATIONAL_GROUPS: [TableRow; 42] = [
    row("Baden-Württemberg", L, 2158197, 9),
    row("Baden-Württemberg", M, 3619302, 98),
    row("Baden-Württemberg", S, 5502758, 994),
    row("Bayern", L, 3010827, 8),
    row("Bayern", M, 2326541, 67),
    row("Bayern", S, 8032025, 1981),
    row("Berlin", L, 3755251, 1),
    row("Brandenburg", L, 185750, 1),
    row("Brandenburg", M, 940363, 27),
    row("Brandenburg", S, 1447022, 385),
    row("Bremen", L, 684864, 2),
    row("Hamburg", L, 1892122, 1),
    row("Hessen", L, 1658130, 6),
    row("Hessen", M, 1805347, 53),
    row("Hessen", S, 2927883, 362),
    row("Mecklenburg-Vorpommern", L, 209920, 1),
    row("Mecklenburg-Vorpommern", M, 396680, 8),
    row("Mecklenburg-Vorpommern", S, 1021778, 716),
    row("Niedersachsen", L, 1588358, 8),
    row("Niedersachsen", M, 2974786, 86),
    row("Niedersachsen", S, 3577098, 847),
    row("Nordrhein-Westfalen", L, 8438299, 30),
    row("Nordrhein-Westfalen", M, 7369437, 182),
    row("Nordrhein-Westfalen", S, 2331380, 184),
    row("Rheinland-Pfalz", L, 723508, 5),
    row("Rheinland-Pfalz", M, 690561, 17),
    row("Rheinland-Pfalz", S, 2745081, 2279),
    row("Saarland", L, 181959, 1),
    row("Saarland", M, 275178, 8),
    row("Saarland", S, 535529, 43),
    row("Sachsen", L, 1427967, 3),
    row("Sachsen", M, 723183, 21),
    row("Sachsen", S, 1935002, 394),
    row("Sachsen-Anhalt", L, 481447, 2),
    row("Sachsen-Anhalt", M, 708172, 22),
    row("Sachsen-Anhalt", S, 997024, 194),
    row("Schleswig-Holstein", L, 465812, 2),
    row("Schleswig-Holstein", M, 753307, 20),
    row("Schleswig-Holstein", S, 1734151, 1082),
    row("Thüringen", L, 326160, 2),
    row("Thüringen", M, 692661, 20),
    row("Thüringen", S, 1108025, 583),
];

/// Integer populations within `[lo, hi]` summing to `total`, log-uniformly
/// spread before rescaling.
fn split_population<R: Rng>(rng: &mut R, total: u64, count: usize, lo: u64, hi: u64) -> Vec<u64> {
    assert!(count as u64 * lo <= total && total <= count as u64 * hi);
    let (llo, lhi) = ((lo as f64).ln(), (hi as f64).ln());
    let mut v: Vec<f64> = (0..count)
        .map(|_| (llo + (lhi - llo) * rng.random::<f64>()).exp())
        .collect();
    // Rescale the unclamped entries until everything fits.
    let mut fixed = vec![false; count];
    for _ in 0..100 {
        let fixed_sum: f64 = v
            .iter()
            .zip(&fixed)
            .filter(|(_, f)| **f)
            .map(|(x, _)| x)
            .sum();
        let free_sum: f64 = v
            .iter()
            .zip(&fixed)
            .filter(|(_, f)| !**f)
            .map(|(x, _)| x)
            .sum();
        if free_sum <= 0.0 {
            break;
        }
        let s = (total as f64 - fixed_sum) / free_sum;
        let mut changed = false;
        for (x, f) in v.iter_mut().zip(fixed.iter_mut()) {
            if !*f {
                *x *= s;
                if *x < lo as f64 || *x > hi as f64 {
                    *x = x.clamp(lo as f64, hi as f64);
                    *f = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut out: Vec<u64> = v.iter().map(|x| (x.round() as u64).clamp(lo, hi)).collect();
    // Push the rounding residual onto entries with room, one unit at a time.
    let mut diff = total as i64 - out.iter().sum::<u64>() as i64;
    let mut k = 0;
    while diff != 0 {
        let j = k % count;
        if diff > 0 && out[j] < hi {
            let step = (diff as u64).min(hi - out[j]);
            out[j] += step;
            diff -= step as i64;
        } else if diff < 0 && out[j] > lo {
            let step = ((-diff) as u64).min(out[j] - lo);
            out[j] -= step;
            diff += step as i64;
        }
        k += 1;
    }
    out
}

/// Synthetic roster matching every group's city count and total population,
/// with caps from the default rule.
pub fn synthetic_national(seed: u64) -> Vec<City> {
    let thresholds = SizeThresholds::default();
    let rule = CapRule::default();
    let medium = thresholds.medium_from as u64;
    let large = thresholds.large_from as u64;
    let mut rng = rng_from_seed(seed);
    let mut cities = Vec::new();
    for (g, r) in NATIONAL_GROUPS.iter().enumerate() {
        let (lo, hi) = match r.class {
            S => (30, medium - 1),
            M => (medium, large - 1),
            L => (large, r.population.max(large)),
        };
        let pops = split_population(&mut rng, r.population, r.cities, lo, hi);
        for (k, p) in pops.into_iter().enumerate() {
            let pop = p as f64;
            cities.push(City {
                id: format!("g{g:02}-{k:04}"),
                name: format!("{} {} {}", r.state, r.class, k + 1),
                population: pop,
                cap: rule.cap(pop),
                group_key: Some(GroupKey {
                    state: r.state.to_string(),
                    size_class: thresholds.classify(pop),
                }),
            });
        }
    }
    cities
}
