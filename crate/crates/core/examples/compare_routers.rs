//! Threshold, belief-space and binned-classifier routers under noisy scores,
//! compared by IBC gain with a paired bootstrap.

use std::sync::Arc;
use steproute::eval::{
    automix_calibration, bootstrap, geometric_ladder, paired_bootstrap, run_curve, sweep_lambda_pomdp,
    sweep_threshold, CurveRun,
};
use steproute::metrics::{ibc_delta, MetricError, TradeoffCurve};
use steproute::policy::{fit_automix_bins, AutomixRouter, RandomRegenerate, Router};
use steproute::pomdp::{collect_labeled_steps, ObservationModel, RecomputeTrigger, SolveOptions};
use steproute::seed::SeedTree;
use steproute::sim::{EnvConfig, NoiseSpec};

fn ibc(c: &TradeoffCurve) -> Result<f64, MetricError> {
    ibc_delta(c).map(|d| d.mean)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::canonical().with_noise(NoiseSpec::ExtraVariance { scale: 0.15 });
    let episodes = 2000;
    let seed = SeedTree::new(31);
    let lambdas = geometric_ladder(2e-5, 4e-3, 8);

    let ladder: Vec<f64> = (0..=20).map(|i| f64::from(i) / 20.0).collect();
    let threshold = sweep_threshold(&env, &ladder, episodes, seed, false)?;

    let rows = collect_labeled_steps(&env, &RandomRegenerate { p: 0.3 }, 1000, seed.named("fit"))?;
    let model = Arc::new(ObservationModel::fit(&rows)?);
    let (pomdp, _) = sweep_lambda_pomdp(
        &env,
        model,
        &lambdas,
        &SolveOptions::default(),
        RecomputeTrigger::Always,
        episodes,
        seed,
    )?;

    let clf = fit_automix_bins(&automix_calibration(&env, 1000, seed.named("automix"))?, 10)?;
    let automix: Vec<AutomixRouter> = lambdas
        .iter()
        .map(|&lambda| AutomixRouter {
            classifier: clf.clone(),
            lambda,
            expected_strong_tokens: env.expected_strong_tokens(),
        })
        .collect();
    let refs: Vec<(f64, &dyn Router)> = lambdas.iter().zip(&automix).map(|(&l, r)| (l, r as &dyn Router)).collect();
    let automix = run_curve(&refs, &env, episodes, seed)?;

    let families: [(&str, &CurveRun); 3] = [("threshold", &threshold), ("belief-space", &pomdp), ("binned", &automix)];
    for (name, run) in families {
        let b = bootstrap(run, ibc, 100, seed.named("bootstrap"))?;
        println!("{name:>13}: ibc gain {:+.3} (se {:.3})", b.estimate, b.se);
    }
    for (name, run) in &families[1..] {
        let d = paired_bootstrap(run, &threshold, ibc, 100, seed.named("paired"))?;
        println!("{name:>13} - threshold: {:+.3} ({:.1} se)", d.estimate, d.z());
    }
    Ok(())
}
