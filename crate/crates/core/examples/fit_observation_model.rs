//! Fits the per-class score densities from simulated, labeled steps.
//!
//! Pass a path to also write the model as JSON.

use steproute::policy::RandomRegenerate;
use steproute::pomdp::{collect_labeled_steps, ObservationModel};
use steproute::seed::SeedTree;
use steproute::sim::{EnvConfig, LatentClass, NoiseSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::canonical().with_noise(NoiseSpec::ExtraVariance { scale: 0.15 });
    let rows = collect_labeled_steps(&env, &RandomRegenerate { p: 0.3 }, 1000, SeedTree::new(1))?;
    let model = ObservationModel::fit(&rows)?;

    for class in LatentClass::LIVE {
        let d = model.class(class)?;
        println!("{class:?}: {} samples, bandwidth {:.4}", d.n_samples(), d.bandwidth());
    }
    // (min previous score, current score)
    for obs in [(0.9, 0.9), (0.9, 0.2), (0.3, 0.8)] {
        let l = model.likelihoods(obs)?;
        println!("likelihoods at {obs:?}: S0 {:.3}  S1 {:.3}  S2 {:.3}", l[0], l[1], l[2]);
    }
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, model.to_json())?;
        println!("wrote {path}");
    }
    Ok(())
}
