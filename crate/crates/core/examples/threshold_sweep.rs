//! Threshold ladder sweep on the benchmark environment, with the summary report.

use steproute::eval::sweep_threshold;
use steproute::metrics::{metric_report, write_curve_csv};
use steproute::seed::SeedTree;
use steproute::sim::EnvConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::canonical();
    let ladder: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
    let run = sweep_threshold(&env, &ladder, 3000, SeedTree::new(7), false)?;
    let curve = run.curve();

    write_curve_csv(std::io::stdout(), &curve.points)?;
    println!();
    println!("{}", serde_json::to_string_pretty(&metric_report(&curve))?);
    Ok(())
}
