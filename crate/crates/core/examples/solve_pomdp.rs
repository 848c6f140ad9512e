//! Solves the belief-space routing problem and prints actions on a belief grid.

use steproute::eval::pomdp_spec_for;
use steproute::policy::RandomRegenerate;
use steproute::pomdp::{collect_labeled_steps, precompute_lookup, solve, Belief, ObservationModel, SolveOptions};
use steproute::seed::SeedTree;
use steproute::sim::EnvConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::canonical();
    let rows = collect_labeled_steps(&env, &RandomRegenerate { p: 0.3 }, 1000, SeedTree::new(5))?;
    let model = ObservationModel::fit(&rows)?;
    let spec = pomdp_spec_for(&env, 5e-4);
    let opts = SolveOptions::default();

    let policy = solve(&spec, &model, &Belief::initial(), &opts)?;
    println!("{} stages, regeneration costs {:.4} reward units", policy.stages.len(), spec.regenerate_cost());
    for probs in [[0.9, 0.05, 0.05], [0.6, 0.17, 0.23], [0.3, 0.1, 0.6], [0.1, 0.8, 0.1]] {
        for step in [1, 10, 25] {
            let b = Belief::new(probs, step)?;
            println!("belief {probs:?} at step {step:>2}: {:?}  (value {:.3})", policy.action(&b), policy.value(&b));
        }
    }

    let table = precompute_lookup(&spec, &model, 20, &opts)?;
    let regen: usize = table.actions.iter().map(|row| row.bytes().filter(|&c| c == b'R').count()).sum();
    println!(
        "lookup table: {} cells x {} stages, {regen} regenerate entries",
        table.n_cells(),
        table.actions.len()
    );
    Ok(())
}
