//! Cost–performance evaluation over sweep results.
//!
//! Cost is always expensive-generator decode tokens. Curves are interpolated
//! linearly between adjacent sweep points; dominated points are pruned first
//! so every query asks for the cheapest member of the policy family.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("weak and strong accuracies coincide ({0}); the gap is degenerate")]
    DegenerateGap(f64),
    #[error("curve has no points")]
    EmptyCurve,
    #[error("PGR {0} is not reached anywhere on the curve")]
    Unreachable(f64),
    #[error("ranking needs at least one positive and one negative example")]
    SingleClass,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Threshold `k` or trade-off `lambda` that produced the point.
    pub control: f64,
    /// Mean expensive-generator tokens per query.
    pub mean_strong_tokens: f64,
    /// Expensive tokens relative to running the expensive generator alone.
    pub normalized_cost: f64,
    pub accuracy: f64,
    pub n_queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    /// Sorted by `mean_strong_tokens`, one point per distinct cost.
    pub points: Vec<SweepPoint>,
    pub r_weak: f64,
    pub r_strong: f64,
    pub mean_strong_only_tokens: f64,
}

impl TradeoffCurve {
    /// Sorts by cost and keeps the most accurate point among equal costs.
    pub fn new(
        mut points: Vec<SweepPoint>,
        r_weak: f64,
        r_strong: f64,
        mean_strong_only_tokens: f64,
    ) -> Self {
        points.sort_by(|a, b| {
            a.mean_strong_tokens
                .total_cmp(&b.mean_strong_tokens)
                .then(b.accuracy.total_cmp(&a.accuracy))
        });
        points.dedup_by(|later, earlier| later.mean_strong_tokens == earlier.mean_strong_tokens);
        Self {
            points,
            r_weak,
            r_strong,
            mean_strong_only_tokens,
        }
    }

    /// Upper-left staircase: strictly increasing in both cost and accuracy.
    pub fn frontier(&self) -> Vec<SweepPoint> {
        let mut out: Vec<SweepPoint> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            if out.last().is_none_or(|last| p.accuracy > last.accuracy) {
                out.push(*p);
            }
        }
        out
    }

    pub fn pgr_of(&self, accuracy: f64) -> Result<f64, MetricError> {
        pgr(accuracy, self.r_weak, self.r_strong)
    }
}

/// Performance gap recovered. May be negative or exceed one.
pub fn pgr(r_pi: f64, r_weak: f64, r_strong: f64) -> Result<f64, MetricError> {
    if r_strong == r_weak {
        return Err(MetricError::DegenerateGap(r_weak));
    }
    Ok((r_pi - r_weak) / (r_strong - r_weak))
}

/// Cost at a cost–performance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptCost {
    pub cost_abs: f64,
    pub cost_norm: f64,
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Minimum cost at which the interpolated PGR reaches `x`.
///
/// Targets below the cheapest frontier point clamp to that point's cost.
pub fn cpt(curve: &TradeoffCurve, x: f64) -> Result<CptCost, MetricError> {
    let frontier = curve.frontier();
    if frontier.is_empty() {
        return Err(MetricError::EmptyCurve);
    }
    let pgrs = frontier
        .iter()
        .map(|p| curve.pgr_of(p.accuracy))
        .collect::<Result<Vec<_>, _>>()?;
    let hit = pgrs
        .iter()
        .position(|&g| g >= x)
        .ok_or(MetricError::Unreachable(x))?;
    let p = frontier[hit];
    if hit == 0 {
        return Ok(CptCost {
            cost_abs: p.mean_strong_tokens,
            cost_norm: p.normalized_cost,
        });
    }
    let q = frontier[hit - 1];
    let t = (x - pgrs[hit - 1]) / (pgrs[hit] - pgrs[hit - 1]);
    Ok(CptCost {
        cost_abs: lerp(q.mean_strong_tokens, p.mean_strong_tokens, t),
        cost_norm: lerp(q.normalized_cost, p.normalized_cost, t),
    })
}

/// How Δ_IBC partitions the weak-to-strong range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IbcRegions {
    /// Equally spaced accuracy targets between the endpoints.
    #[default]
    Accuracy,
    /// Equally spaced cost levels between zero and the strong-only cost.
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbcDelta {
    /// Mean relative IBC gain over the reachable regions.
    pub mean: f64,
    pub reachable: usize,
    pub unreachable: usize,
}

pub const IBC_REGIONS: usize = 100;

/// Mean relative incremental benefit per cost against the strong-only baseline.
///
/// The curve is extended with the zero-cost weak operating point, so a target
/// below the cheapest sweep point is reached by mixing with the weak model.
pub fn ibc_delta(curve: &TradeoffCurve) -> Result<IbcDelta, MetricError> {
    ibc_delta_with(curve, IbcRegions::Accuracy)
}

pub fn ibc_delta_with(curve: &TradeoffCurve, regions: IbcRegions) -> Result<IbcDelta, MetricError> {
    if curve.points.is_empty() {
        return Err(MetricError::EmptyCurve);
    }
    let gap = curve.r_strong - curve.r_weak;
    if gap <= 0.0 {
        return Err(MetricError::DegenerateGap(curve.r_weak));
    }
    if !(curve.mean_strong_only_tokens > 0.0) {
        return Err(MetricError::Invalid(
            "mean_strong_only_tokens must be positive".into(),
        ));
    }
    let base = gap / curve.mean_strong_only_tokens;

    let mut staircase = vec![(0.0, curve.r_weak)];
    for p in curve.frontier() {
        let last = *staircase.last().unwrap();
        if p.accuracy > last.1 {
            if p.mean_strong_tokens <= last.0 {
                staircase.pop();
            }
            staircase.push((p.mean_strong_tokens, p.accuracy));
        }
    }

    let mut sum = 0.0;
    let mut reachable = 0;
    for i in 0..IBC_REGIONS {
        let frac = (i as f64 + 0.5) / IBC_REGIONS as f64;
        let ibc = match regions {
            IbcRegions::Accuracy => {
                let target = curve.r_weak + frac * gap;
                cost_to_reach(&staircase, target).map(|cost| (target - curve.r_weak) / cost)
            }
            IbcRegions::Cost => {
                let budget = frac * curve.mean_strong_only_tokens;
                accuracy_within(&staircase, budget)
                    .filter(|&acc| acc > curve.r_weak)
                    .map(|acc| (acc - curve.r_weak) / budget)
            }
        };
        if let Some(ibc) = ibc {
            sum += (ibc - base) / base;
            reachable += 1;
        }
    }
    Ok(IbcDelta {
        mean: if reachable > 0 { sum / reachable as f64 } else { f64::NAN },
        reachable,
        unreachable: IBC_REGIONS - reachable,
    })
}

/// Frontier cost at which `target` accuracy is reached, interpolating
/// between sweep points. `None` outside the frontier's accuracy range.
pub fn cost_at_accuracy(curve: &TradeoffCurve, target: f64) -> Option<f64> {
    let stairs: Vec<(f64, f64)> = curve
        .frontier()
        .iter()
        .map(|p| (p.mean_strong_tokens, p.accuracy))
        .collect();
    if stairs.first()?.1 > target {
        return None;
    }
    cost_to_reach(&stairs, target)
}

fn cost_to_reach(staircase: &[(f64, f64)], target: f64) -> Option<f64> {
    let hit = staircase.iter().position(|&(_, acc)| acc >= target)?;
    if hit == 0 {
        return Some(staircase[0].0);
    }
    let (c0, a0) = staircase[hit - 1];
    let (c1, a1) = staircase[hit];
    Some(lerp(c0, c1, (target - a0) / (a1 - a0)))
}

fn accuracy_within(staircase: &[(f64, f64)], budget: f64) -> Option<f64> {
    let last = staircase.iter().rposition(|&(c, _)| c <= budget)?;
    if last + 1 == staircase.len() {
        return Some(staircase[last].1);
    }
    let (c0, a0) = staircase[last];
    let (c1, a1) = staircase[last + 1];
    Some(lerp(a0, a1, (budget - c0) / (c1 - c0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetedAccuracy {
    pub accuracy: f64,
    pub pgr: f64,
}

/// Best interpolated accuracy with normalized cost at most `budget_norm`.
///
/// Below the cheapest point only the weak model is affordable.
pub fn budgeted_accuracy(
    curve: &TradeoffCurve,
    budget_norm: f64,
) -> Result<BudgetedAccuracy, MetricError> {
    if !(budget_norm >= 0.0) {
        return Err(MetricError::Invalid(format!("budget {budget_norm} is negative")));
    }
    let mut frontier = curve.frontier();
    if frontier.is_empty() {
        return Err(MetricError::EmptyCurve);
    }
    // Normalized cost is monotone in absolute cost for one query set, but
    // sort defensively on the axis we interpolate.
    frontier.sort_by(|a, b| a.normalized_cost.total_cmp(&b.normalized_cost));
    let stairs: Vec<(f64, f64)> = frontier
        .iter()
        .map(|p| (p.normalized_cost, p.accuracy))
        .collect();
    let accuracy = accuracy_within(&stairs, budget_norm)
        .map_or(curve.r_weak, |a| a.max(curve.r_weak));
    Ok(BudgetedAccuracy {
        accuracy,
        pgr: curve.pgr_of(accuracy)?,
    })
}

/// AUC-ROC of a score as a ranking statistic for a binary label; ties count half.
pub fn auc(samples: &[(f64, bool)]) -> Result<f64, MetricError> {
    let pos = samples.iter().filter(|s| s.1).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann–Whitney: midranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += midrank * sorted[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC of the minimum step score against final correctness.
///
/// A trace counts as correct when every step is labeled correct; unlabeled
/// traces are skipped.
pub fn min_score_auc(traces: &[crate::trace::TraceState]) -> Result<f64, MetricError> {
    let samples: Vec<(f64, bool)> = traces
        .iter()
        .filter_map(|t| Some((t.min_score()?, t.all_correct()?)))
        .collect();
    auc(&samples)
}

pub fn write_curve_csv<W: Write>(writer: W, points: &[SweepPoint]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p).map_err(|e| MetricError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| MetricError::Csv(e.to_string()))
}

pub fn read_curve_csv<R: Read>(reader: R) -> Result<Vec<SweepPoint>, MetricError> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| MetricError::Csv(e.to_string()))?.clone();
    let expected = ["control", "mean_strong_tokens", "normalized_cost", "accuracy", "n_queries"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(MetricError::Csv(format!(
            "expected header {}, found {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| MetricError::Csv(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub r_weak: f64,
    pub r_strong: f64,
    pub mean_strong_only_tokens: f64,
}

/// Summary table row: CPT at 50/80/95 % PGR, Δ_IBC, and budgeted accuracy
/// at 10–30 % normalized cost. Unreachable entries are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pgr_endpoints: Endpoints,
    pub cpt: BTreeMap<String, Option<CptCost>>,
    pub ibc_delta: Option<IbcDelta>,
    pub budgeted: BTreeMap<String, Option<BudgetedAccuracy>>,
    pub interpolation: String,
}

pub fn metric_report(curve: &TradeoffCurve) -> MetricReport {
    let cpt = [50u32, 80, 95]
        .into_iter()
        .map(|x| (x.to_string(), cpt(curve, f64::from(x) / 100.0).ok()))
        .collect();
    let budgeted = [10u32, 15, 20, 25, 30]
        .into_iter()
        .map(|b| (b.to_string(), budgeted_accuracy(curve, f64::from(b) / 100.0).ok()))
        .collect();
    MetricReport {
        pgr_endpoints: Endpoints {
            r_weak: curve.r_weak,
            r_strong: curve.r_strong,
            mean_strong_only_tokens: curve.mean_strong_only_tokens,
        },
        cpt,
        ibc_delta: ibc_delta(curve).ok(),
        budgeted,
        interpolation: "linear".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pt(cost: f64, acc: f64) -> SweepPoint {
        SweepPoint {
            control: 0.0,
            mean_strong_tokens: cost,
            normalized_cost: cost / 200.0,
            accuracy: acc,
            n_queries: 100,
        }
    }

    #[test]
    fn pgr_midpoint_and_endpoint() {
        assert_abs_diff_eq!(pgr(0.7, 0.6, 0.8).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(pgr(0.6, 0.6, 0.8).unwrap(), 0.0);
        assert_eq!(pgr(0.6, 0.7, 0.7), Err(MetricError::DegenerateGap(0.7)));
    }

    #[test]
    fn pgr_reproduces_published_row() {
        // Two rows (accuracy ↔ PGR) give two equations in (r_w, r_s):
        // 0.6660 = r_w + 0.085 g and 0.7040 = r_w + 0.317 g with g = r_s - r_w.
        let g = (0.7040 - 0.6660) / (0.317 - 0.085);
        let r_w = 0.6660 - 0.085 * g;
        let r_s = r_w + g;
        assert_abs_diff_eq!(r_w, 0.652, epsilon = 1e-3);
        assert_abs_diff_eq!(r_s, 0.816, epsilon = 1e-3);
        let predicted = pgr(0.8222, r_w, r_s).unwrap();
        assert!((predicted - 1.038).abs() < 0.005, "{predicted}");
    }

    #[test]
    fn cpt_interpolates() {
        // PGR = (acc - 0.5) / 0.5 with these endpoints.
        let curve = TradeoffCurve::new(vec![pt(10.0, 0.7), pt(20.0, 0.8)], 0.5, 1.0, 200.0);
        let c = cpt(&curve, 0.5).unwrap();
        assert_abs_diff_eq!(c.cost_abs, 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.cost_norm, 0.075, epsilon = 1e-12);
    }

    #[test]
    fn cpt_left_clamp_and_unreachable() {
        let curve = TradeoffCurve::new(vec![pt(10.0, 0.7), pt(20.0, 0.95)], 0.5, 1.0, 200.0);
        assert_eq!(cpt(&curve, 0.1).unwrap().cost_abs, 10.0);
        assert_eq!(cpt(&curve, 0.95), Err(MetricError::Unreachable(0.95)));
        let empty = TradeoffCurve::new(vec![], 0.5, 1.0, 200.0);
        assert_eq!(cpt(&empty, 0.5), Err(MetricError::EmptyCurve));
    }

    #[test]
    fn ibc_of_strong_only_is_zero() {
        let curve = TradeoffCurve::new(vec![pt(200.0, 0.85)], 0.65, 0.85, 200.0);
        let d = ibc_delta(&curve).unwrap();
        assert_abs_diff_eq!(d.mean, 0.0, epsilon = 1e-12);
        assert_eq!(d.reachable, 100);
    }

    #[test]
    fn ibc_hand_arithmetic() {
        // IBC = (0.75 - 0.65) / 50 = 0.002; base = 0.2 / 200 = 0.001.
        let curve = TradeoffCurve::new(vec![pt(50.0, 0.75)], 0.65, 0.85, 200.0);
        let d = ibc_delta(&curve).unwrap();
        assert_abs_diff_eq!(d.mean, 1.0, epsilon = 1e-12);
        assert_eq!((d.reachable, d.unreachable), (50, 50));
    }

    #[test]
    fn ibc_positive_for_cheaper_curve() {
        let curve = TradeoffCurve::new(
            vec![pt(20.0, 0.72), pt(60.0, 0.80), pt(120.0, 0.86)],
            0.65,
            0.85,
            200.0,
        );
        assert!(ibc_delta(&curve).unwrap().mean > 0.0);
        assert!(ibc_delta_with(&curve, IbcRegions::Cost).unwrap().mean > 0.0);
    }

    #[test]
    fn ibc_errors() {
        let empty = TradeoffCurve::new(vec![], 0.65, 0.85, 200.0);
        assert_eq!(ibc_delta(&empty), Err(MetricError::EmptyCurve));
        let flat = TradeoffCurve::new(vec![pt(1.0, 0.7)], 0.7, 0.7, 200.0);
        assert!(matches!(ibc_delta(&flat), Err(MetricError::DegenerateGap(_))));
    }

    #[test]
    fn budgeted_cases() {
        let curve = TradeoffCurve::new(
            vec![
                SweepPoint { normalized_cost: 0.10, ..pt(20.0, 0.70) },
                SweepPoint { normalized_cost: 0.20, ..pt(40.0, 0.74) },
            ],
            0.65,
            0.85,
            200.0,
        );
        assert_eq!(budgeted_accuracy(&curve, 0.0).unwrap().accuracy, 0.65);
        assert_eq!(budgeted_accuracy(&curve, 0.9).unwrap().accuracy, 0.74);
        let mid = budgeted_accuracy(&curve, 0.15).unwrap();
        assert_abs_diff_eq!(mid.accuracy, 0.72, epsilon = 1e-12);
        assert_abs_diff_eq!(mid.pgr, 0.35, epsilon = 1e-12);
    }

    #[test]
    fn auc_fixtures() {
        let separated = [(0.9, true), (0.8, true), (0.7, false), (0.6, false)];
        assert_eq!(auc(&separated).unwrap(), 1.0);
        let swapped = [(0.9, true), (0.8, false), (0.7, true), (0.6, false)];
        assert_eq!(auc(&swapped).unwrap(), 0.75);
        let ties = [(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        assert_eq!(auc(&ties).unwrap(), 0.5);
        assert_eq!(auc(&[(0.3, true)]), Err(MetricError::SingleClass));
    }

    #[test]
    fn csv_round_trip_and_header() {
        let pts = vec![pt(10.0, 0.7), pt(20.0, 0.8)];
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("control,mean_strong_tokens,normalized_cost,accuracy,n_queries\n"));
        assert_eq!(read_curve_csv(buf.as_slice()).unwrap(), pts);
        assert!(read_curve_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn report_has_table_columns() {
        let curve = TradeoffCurve::new(
            vec![
                SweepPoint { normalized_cost: 0.1, ..pt(20.0, 0.75) },
                SweepPoint { normalized_cost: 0.3, ..pt(60.0, 0.86) },
            ],
            0.65,
            0.85,
            200.0,
        );
        let json = serde_json::to_value(metric_report(&curve)).unwrap();
        for k in ["50", "80", "95"] {
            assert!(json["cpt"][k].is_object(), "{k}");
        }
        for k in ["10", "15", "20", "25", "30"] {
            assert!(json["budgeted"][k].is_object(), "{k}");
        }
        assert!(json["ibc_delta"]["mean"].is_number());
    }

    fn arb_curve() -> impl Strategy<Value = TradeoffCurve> {
        prop::collection::vec((1.0f64..200.0, 0.0f64..1.0), 1..8)
            .prop_map(|v| TradeoffCurve::new(v.into_iter().map(|(c, a)| pt(c, a)).collect(), 0.2, 0.8, 200.0))
    }

    proptest! {
        #[test]
        fn pgr_affine_invariant(r in 0.0f64..1.0, w in 0.0f64..0.5, s in 0.5f64..1.0, a in -3.0f64..3.0, b in 0.1f64..5.0, neg in any::<bool>()) {
            prop_assume!((s - w).abs() > 1e-3);
            let b = if neg { -b } else { b };
            let direct = pgr(r, w, s).unwrap();
            let mapped = pgr(a + b * r, a + b * w, a + b * s).unwrap();
            prop_assert!((direct - mapped).abs() < 1e-9);
        }

        #[test]
        fn dominating_curve_never_costs_more(curve in arb_curve(), x in 0.05f64..1.0, shrink in 0.3f64..1.0, lift in 0.0f64..0.2) {
            // Scaling every cost down and every accuracy up dominates the
            // original interpolated curve pointwise.
            if let Ok(before) = cpt(&curve, x) {
                let pts = curve.points.iter()
                    .map(|p| pt(p.mean_strong_tokens * shrink, p.accuracy + lift))
                    .collect();
                let better = TradeoffCurve::new(pts, curve.r_weak, curve.r_strong, 200.0);
                let after = cpt(&better, x).unwrap();
                prop_assert!(after.cost_abs <= before.cost_abs + 1e-9);
            }
        }

        #[test]
        fn budgeted_monotone(curve in arb_curve(), b1 in 0.0f64..1.2, b2 in 0.0f64..1.2) {
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let a = budgeted_accuracy(&curve, lo).unwrap().accuracy;
            let b = budgeted_accuracy(&curve, hi).unwrap().accuracy;
            prop_assert!(a <= b + 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_maps(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..60),
        ) {
            prop_assume!(data.iter().any(|d| d.1) && data.iter().any(|d| !d.1));
            let base = auc(&data).unwrap();
            let mapped: Vec<_> = data.iter().map(|&(s, l)| ((3.0 * s).exp() - 7.0, l)).collect();
            prop_assert_eq!(auc(&mapped).unwrap(), base);
            prop_assert_eq!(auc(&data).unwrap().to_bits(), base.to_bits());
        }
    }
}
