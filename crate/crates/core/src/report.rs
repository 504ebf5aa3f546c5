//! Distribution metrics and deterministic SVG renderings.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::layout::{monotonicity_violations, Layout, LetterDistribution, Mode};
use crate::model::{audit, Allocation, ModelError, ProblemInstance, ABS_TOL};
use crate::pricing::deviation;

/// Relative deviation from targets summed over cities receiving letters.
pub fn phi(allocation: &Allocation, tau: &[f64]) -> f64 {
    deviation(allocation, tau)
}

pub fn expected_phi(dist: &LetterDistribution, tau: &[f64]) -> Result<f64, ModelError> {
    let total = dist.total_mass();
    if (total - 1.0).abs() > ABS_TOL {
        return Err(ModelError::ProbabilityMassError { total });
    }
    Ok(dist
        .entries()
        .iter()
        .map(|e| e.probability * phi(&e.allocation, tau))
        .sum())
}

/// Violating adjacent pairs per support entry. Integral distributions are
/// allowed one letter of slack.
pub fn monotonicity_report(dist: &LetterDistribution) -> Vec<usize> {
    let slack = match dist.mode() {
        Mode::Integral => 1.0,
        Mode::Fractional => 0.0,
    };
    dist.entries()
        .iter()
        .map(|e| monotonicity_violations(&e.allocation, slack))
        .collect()
}

/// Distinct positive letter counts per city across the support.
pub fn outcome_sets(dist: &LetterDistribution) -> Vec<Vec<f64>> {
    let n = dist.n();
    let mut sets: Vec<BTreeSet<i64>> = vec![BTreeSet::new(); n];
    for e in dist.entries() {
        for (i, &a) in e.allocation.letters().iter().enumerate() {
            if a > ABS_TOL {
                sets[i].insert((a * 1e9).round() as i64);
            }
        }
    }
    sets.into_iter()
        .map(|s| s.into_iter().map(|v| v as f64 / 1e9).collect())
        .collect()
}

/// Every city that can be selected has exactly one possible letter count.
pub fn binary_outcome(dist: &LetterDistribution) -> bool {
    outcome_sets(dist).iter().all(|s| s.len() <= 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionalityRow {
    pub city_id: String,
    pub target: f64,
    /// (probability, letters) for each support entry selecting the city.
    pub entries: Vec<(f64, f64)>,
    /// `|target - letters| / target` per entry above.
    pub deviations: Vec<f64>,
}

pub fn proportionality_rows(
    instance: &ProblemInstance,
    dist: &LetterDistribution,
    tau: &[f64],
) -> Vec<ProportionalityRow> {
    (0..instance.n())
        .map(|i| {
            let entries: Vec<(f64, f64)> = dist
                .entries()
                .iter()
                .filter(|e| e.allocation.0[i] > ABS_TOL)
                .map(|e| (e.probability, e.allocation.0[i]))
                .collect();
            let deviations = entries
                .iter()
                .map(|(_, a)| (tau[i] - a).abs() / tau[i])
                .collect();
            ProportionalityRow {
                city_id: instance.city(i).id.clone(),
                target: tau[i],
                entries,
                deviations,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n: usize,
    pub letters: u64,
    pub budget: usize,
    pub entries: usize,
    pub max_support: usize,
    pub max_abs_error: f64,
    pub fair: bool,
    pub width_violations: usize,
    pub allocation_violations: usize,
    pub monotonicity_violations: usize,
    pub binary_outcome: bool,
    pub expected_phi: Option<f64>,
}

pub fn metrics(
    instance: &ProblemInstance,
    dist: &LetterDistribution,
    tau: Option<&[f64]>,
) -> Result<Metrics, ModelError> {
    let a = audit(instance, dist)?;
    Ok(Metrics {
        n: instance.n(),
        letters: instance.letters(),
        budget: instance.budget(),
        entries: dist.entries().len(),
        max_support: a.max_support,
        max_abs_error: a.max_abs_error,
        fair: a.fair,
        width_violations: a.width_violations.len(),
        allocation_violations: a.allocation_violations.len(),
        monotonicity_violations: monotonicity_report(dist).iter().sum(),
        binary_outcome: binary_outcome(dist),
        expected_phi: tau.map(|t| expected_phi(dist, t)).transpose()?,
    })
}

/// `metric,value` CSV preceded by a comment line naming the instance digest.
pub fn metrics_csv(m: &Metrics, digest: &str) -> String {
    let mut out = format!("# instance_digest={digest}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value"])
        .expect("in-memory write");
    let rows: Vec<(&str, String)> = vec![
        ("n", m.n.to_string()),
        ("letters", m.letters.to_string()),
        ("budget", m.budget.to_string()),
        ("entries", m.entries.to_string()),
        ("max_support", m.max_support.to_string()),
        ("max_abs_error", format!("{:.3e}", m.max_abs_error)),
        ("fair", m.fair.to_string()),
        ("width_violations", m.width_violations.to_string()),
        ("allocation_violations", m.allocation_violations.to_string()),
        (
            "monotonicity_violations",
            m.monotonicity_violations.to_string(),
        ),
        ("binary_outcome", m.binary_outcome.to_string()),
        (
            "expected_phi",
            m.expected_phi
                .map_or_else(String::new, |v| format!("{v:.9}")),
        ),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()]).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
    out
}

// ---------------------------------------------------------------- rendering

pub const CANVAS_W: f64 = 800.0;
pub const CANVAS_H: f64 = 400.0;
const MARGIN: f64 = 40.0;

const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac", "#86bcb6", "#d37295",
];

pub fn city_color(city: usize) -> &'static str {
    PALETTE[city % PALETTE.len()]
}

/// Fill for a letters/target ratio: neutral at 1, blue at 0.5 and below,
/// red at 1.5 and above.
pub fn deviation_color(ratio: f64) -> String {
    let d = (ratio - 1.0).clamp(-0.5, 0.5) / 0.5;
    let neutral = (247.0, 247.0, 247.0);
    let end = if d < 0.0 {
        (33.0, 102.0, 172.0)
    } else {
        (178.0, 24.0, 43.0)
    };
    let s = d.abs();
    let mix = |a: f64, b: f64| (a + (b - a) * s).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(neutral.0, end.0),
        mix(neutral.1, end.1),
        mix(neutral.2, end.2)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub city: usize,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Layers stacked on top of each other over `[0, 1)`; `y` in letters.
pub fn stacked_rects(layout: &Layout) -> Vec<Rect> {
    let bps = layout.breakpoints();
    let mut out: Vec<Rect> = Vec::new();
    for k in 0..layout.t {
        for w in bps.windows(2) {
            let mid = k as f64 + 0.5 * (w[0] + w[1]);
            let Some(s) = layout.segment_at(mid) else {
                continue;
            };
            let below = if k == 0 {
                0.0
            } else {
                layout.cumulative(mid - 1.0)
            };
            let r = Rect {
                city: s.city,
                x0: w[0],
                x1: w[1],
                y0: below,
                y1: below + s.height,
            };
            match out.last_mut() {
                Some(p)
                    if p.city == r.city
                        && (p.x1 - r.x0).abs() < 1e-12
                        && (p.y0 - r.y0).abs() < 1e-9
                        && (p.y1 - r.y1).abs() < 1e-9 =>
                {
                    p.x1 = r.x1;
                }
                _ => out.push(r),
            }
        }
    }
    out
}

/// Heights laid out flat over `[0, t)`.
pub fn flat_rects(layout: &Layout) -> Vec<Rect> {
    layout
        .segments
        .iter()
        .map(|s| Rect {
            city: s.city,
            x0: s.start,
            x1: s.end,
            y0: 0.0,
            y1: s.height,
        })
        .collect()
}

/// Support rectangles lined up by city (ascending size), width = probability,
/// height = letters.
pub fn proportionality_rects(dist: &LetterDistribution) -> Vec<Rect> {
    let mut out = Vec::new();
    let mut x = 0.0;
    for i in 0..dist.n() {
        for e in dist.entries() {
            let a = e.allocation.0[i];
            if a > ABS_TOL {
                out.push(Rect {
                    city: i,
                    x0: x,
                    x1: x + e.probability,
                    y0: 0.0,
                    y1: a,
                });
                x += e.probability;
            }
        }
    }
    out
}

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + v / self.x_max * (CANVAS_W - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        CANVAS_H - MARGIN - v / self.y_max * (CANVAS_H - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{CANVAS_W}" height="{CANVAS_H}" viewBox="0 0 {CANVAS_W} {CANVAS_H}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="0" y="0" width="{CANVAS_W}" height="{CANVAS_H}" fill="#ffffff"/>"##
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn axes(s: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, y0) = (frame.x(0.0), frame.y(0.0));
    let (x1, y1) = (frame.x(frame.x_max), frame.y(frame.y_max));
    let _ = writeln!(
        s,
        r##"<path d="M{x0:.4} {y1:.4} L{x0:.4} {y0:.4} L{x1:.4} {y0:.4}" fill="none" stroke="#000000" stroke-width="1"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.4}" y="{:.4}" font-size="12" text-anchor="middle">{}</text>"#,
        0.5 * (x0 + x1),
        CANVAS_H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.4}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {:.4})">{}</text>"#,
        0.5 * (y0 + y1),
        0.5 * (y0 + y1),
        escape(y_label)
    );
}

fn rect_svg(s: &mut String, frame: &Frame, r: &Rect, fill: &str) {
    let x = frame.x(r.x0);
    let w = frame.x(r.x1) - x;
    let y = frame.y(r.y1);
    let h = frame.y(r.y0) - y;
    let _ = writeln!(
        s,
        r##"<rect x="{x:.4}" y="{y:.4}" width="{w:.4}" height="{h:.4}" fill="{fill}" stroke="#333333" stroke-width="0.5"><title>city {}</title></rect>"##,
        r.city
    );
}

pub fn render_stacked(layout: &Layout, ids: &[String]) -> String {
    let rects = stacked_rects(layout);
    let frame = Frame {
        x_max: 1.0,
        y_max: rects
            .iter()
            .map(|r| r.y1)
            .fold(layout.letters as f64, f64::max),
    };
    let mut s = svg_open("stacked layout");
    axes(&mut s, &frame, "rho", "letters");
    for r in &rects {
        rect_svg(&mut s, &frame, r, city_color(r.city));
    }
    legend(&mut s, ids, layout.n);
    s.push_str("</svg>\n");
    s
}

pub fn render_flat(layout: &Layout, ids: &[String]) -> String {
    let rects = flat_rects(layout);
    let frame = Frame {
        x_max: layout.t.max(1) as f64,
        y_max: rects.iter().map(|r| r.y1).fold(1.0, f64::max),
    };
    let mut s = svg_open("flat layout");
    axes(&mut s, &frame, "position", "letters");
    for k in 1..layout.t {
        let x = frame.x(k as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.4}" y1="{:.4}" x2="{x:.4}" y2="{:.4}" stroke="#999999" stroke-dasharray="4 2"/>"##,
            frame.y(frame.y_max),
            frame.y(0.0)
        );
    }
    for r in &rects {
        rect_svg(&mut s, &frame, r, city_color(r.city));
    }
    legend(&mut s, ids, layout.n);
    s.push_str("</svg>\n");
    s
}

pub fn render_proportionality(dist: &LetterDistribution, tau: &[f64]) -> String {
    let rects = proportionality_rects(dist);
    let x_max = rects.last().map_or(1.0, |r| r.x1).max(1e-9);
    let y_max = rects
        .iter()
        .map(|r| r.y1)
        .chain(tau.iter().copied())
        .fold(1.0, f64::max);
    let frame = Frame { x_max, y_max };
    let mut s = svg_open("proportionality");
    axes(&mut s, &frame, "selection probability by city", "letters");
    for r in &rects {
        rect_svg(&mut s, &frame, r, &deviation_color(r.y1 / tau[r.city]));
    }
    // Target per city over the span of its rectangles.
    let mut path = String::new();
    let mut i = 0;
    while i < rects.len() {
        let city = rects[i].city;
        let mut j = i;
        while j + 1 < rects.len() && rects[j + 1].city == city {
            j += 1;
        }
        let y = frame.y(tau[city]);
        let _ = write!(
            path,
            "{}{:.4} {y:.4} L{:.4} {y:.4} ",
            if path.is_empty() { "M" } else { "L" },
            frame.x(rects[i].x0),
            frame.x(rects[j].x1)
        );
        i = j + 1;
    }
    if !path.is_empty() {
        let _ = writeln!(
            s,
            r##"<path d="{}" fill="none" stroke="#000000" stroke-width="1.5"/>"##,
            path.trim_end()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, ids: &[String], n: usize) {
    if n > 24 {
        return;
    }
    for i in 0..n {
        let y = MARGIN + 14.0 * i as f64;
        let x = CANVAS_W - MARGIN + 4.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.4}" y="{:.4}" width="8" height="8" fill="{}"/>"#,
            y - 8.0,
            city_color(i)
        );
        let label = ids.get(i).map_or_else(|| i.to_string(), |v| v.clone());
        let _ = writeln!(
            s,
            r#"<text x="{:.4}" y="{y:.4}" font-size="8">{}</text>"#,
            x + 10.0,
            escape(&label)
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::greedy::greedy_equal;
    use crate::layout::{DistributionEntry, Segment};

    #[test]
    fn phi_values() {
        let tau = [2.0, 4.0, 5.0];
        assert_eq!(phi(&Allocation(vec![2.0, 0.0, 5.0]), &tau), 0.0);
        assert_eq!(phi(&Allocation(vec![0.0, 8.0, 0.0]), &tau), 1.0);
        let a = Allocation(vec![1.0, 5.0, 6.0]);
        let direct: f64 =
            a.0.iter()
                .zip(&tau)
                .filter(|(a, _)| **a > 0.0)
                .map(|(a, t)| (t - a).abs() / t)
                .sum();
        assert!((phi(&a, &tau) - direct).abs() < 1e-15);
    }

    #[test]
    fn expected_phi_mixture() {
        let tau = [1.0, 1.0];
        let d = LetterDistribution::new(
            vec![
                DistributionEntry {
                    probability: 0.5,
                    allocation: Allocation(vec![1.0, 1.0]),
                },
                DistributionEntry {
                    probability: 0.5,
                    allocation: Allocation(vec![2.0, 0.0]),
                },
            ],
            Mode::Integral,
        )
        .unwrap();
        // Second entry deviates by 1; hence expectation 0.5.
        assert!((expected_phi(&d, &tau).unwrap() - 0.5).abs() < 1e-12);
        let pm = LetterDistribution::point_mass(Allocation(vec![3.0, 1.0]), Mode::Integral);
        assert_eq!(expected_phi(&pm, &tau).unwrap(), 2.0);
        let d2 = LetterDistribution::new(
            vec![
                DistributionEntry {
                    probability: 0.5,
                    allocation: Allocation(vec![1.0, 1.0]),
                },
                DistributionEntry {
                    probability: 0.5,
                    allocation: Allocation(vec![3.0, 0.0]),
                },
            ],
            Mode::Integral,
        )
        .unwrap();
        assert!((expected_phi(&d2, &tau).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_city_svg() {
        let layout = Layout::new(
            vec![Segment {
                city: 0,
                start: 0.0,
                end: 1.0,
                height: 5.0,
            }],
            1,
            5,
            1,
        );
        let rects = stacked_rects(&layout);
        assert_eq!(
            rects,
            vec![Rect {
                city: 0,
                x0: 0.0,
                x1: 1.0,
                y0: 0.0,
                y1: 5.0
            }]
        );
        let svg = render_stacked(&layout, &["a".into()]);
        assert!(svg.starts_with("<?xml"));
        assert_eq!(svg.matches("<title>city 0</title>").count(), 1);
    }

    #[test]
    fn stacked_areas_match_fair_shares() {
        let inst = fixtures::example1();
        let r = greedy_equal(&inst, 4).unwrap();
        for rects in [stacked_rects(&r.layout), flat_rects(&r.layout)] {
            let mut areas = vec![0.0; inst.n()];
            for rect in &rects {
                areas[rect.city] += rect.area();
            }
            for (a, f) in areas.iter().zip(inst.fair_shares()) {
                assert!((a - f).abs() < 1e-9, "{a} vs {f}");
            }
        }
        let d = r.layout.extract_distribution().unwrap();
        let mut areas = vec![0.0; inst.n()];
        for rect in proportionality_rects(&d) {
            areas[rect.city] += rect.area();
        }
        for (a, f) in areas.iter().zip(inst.fair_shares()) {
            assert!((a - f).abs() < 1e-9);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let inst = fixtures::example1();
        let r = greedy_equal(&inst, 4).unwrap();
        let ids: Vec<String> = inst.cities().iter().map(|c| c.id.clone()).collect();
        assert_eq!(
            render_stacked(&r.layout, &ids),
            render_stacked(&r.layout, &ids)
        );
        assert_eq!(render_flat(&r.layout, &ids), render_flat(&r.layout, &ids));
        let d = r.layout.extract_distribution().unwrap();
        let tau = vec![15.0; inst.n()];
        assert_eq!(
            render_proportionality(&d, &tau),
            render_proportionality(&d, &tau)
        );
    }

    #[test]
    fn color_scale_endpoints() {
        assert_eq!(deviation_color(1.0), "#f7f7f7");
        assert_eq!(deviation_color(0.5), "#2166ac");
        assert_eq!(deviation_color(0.1), "#2166ac");
        assert_eq!(deviation_color(1.5), "#b2182b");
        assert_eq!(deviation_color(9.0), "#b2182b");
    }

    #[test]
    fn binary_outcome_detection() {
        let d = LetterDistribution::new(
            vec![
                DistributionEntry {
                    probability: 0.5,
                    allocation: Allocation(vec![2.0, 0.0]),
                },
                DistributionEntry {
                    probability: 0.5,
                    allocation: Allocation(vec![1.0, 1.0]),
                },
            ],
            Mode::Integral,
        )
        .unwrap();
        assert!(!binary_outcome(&d));
        assert_eq!(outcome_sets(&d)[0], vec![1.0, 2.0]);
    }

    #[test]
    fn metrics_csv_has_digest_header() {
        let inst = fixtures::example1();
        let d = greedy_equal(&inst, 4)
            .unwrap()
            .layout
            .extract_distribution()
            .unwrap();
        let m = metrics(&inst, &d, None).unwrap();
        let csv = metrics_csv(&m, &inst.digest());
        assert!(csv.starts_with(&format!(
            "# instance_digest={}\nmetric,value\n",
            inst.digest()
        )));
        assert!(m.fair);
    }
}
