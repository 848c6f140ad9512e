//! Cost-performance metrics on a hand-written curve.

use steproute::metrics::{
    budgeted_accuracy, cpt, ibc_delta, ibc_delta_with, metric_report, pgr, IbcRegions, SweepPoint, TradeoffCurve,
};

fn point(control: f64, tokens: f64, accuracy: f64) -> SweepPoint {
    SweepPoint { control, mean_strong_tokens: tokens, normalized_cost: tokens / 400.0, accuracy, n_queries: 1000 }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Cheap generator alone: 0.62; expensive alone: 0.80 at 400 tokens per query.
    let curve = TradeoffCurve::new(
        vec![
            point(0.2, 20.0, 0.66),
            point(0.4, 60.0, 0.72),
            point(0.5, 70.0, 0.70), // dominated
            point(0.6, 140.0, 0.77),
            point(0.8, 260.0, 0.80),
        ],
        0.62,
        0.80,
        400.0,
    );
    println!("frontier: {} of {} points", curve.frontier().len(), curve.points.len());
    println!("pgr at 0.74: {:.3}", pgr(0.74, curve.r_weak, curve.r_strong)?);
    for x in [0.5, 0.8, 0.95] {
        let c = cpt(&curve, x)?;
        println!("cpt({:.0}%): {:.1} tokens ({:.1}% of expensive-only)", x * 100.0, c.cost_abs, c.cost_norm * 100.0);
    }
    for budget in [0.1, 0.2, 0.3] {
        let b = budgeted_accuracy(&curve, budget)?;
        println!("budget {:.0}%: accuracy {:.3}, pgr {:.3}", budget * 100.0, b.accuracy, b.pgr);
    }
    println!("ibc gain (accuracy regions): {:.3}", ibc_delta(&curve)?.mean);
    println!("ibc gain (cost regions):     {:.3}", ibc_delta_with(&curve, IbcRegions::Cost)?.mean);
    println!("{}", serde_json::to_string_pretty(&metric_report(&curve))?);
    Ok(())
}
