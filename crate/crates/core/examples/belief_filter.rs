//! Filters the latent-class belief along a simulated trace.

use steproute::eval::pomdp_spec_for;
use steproute::policy::{AlwaysContinue, RandomRegenerate};
use steproute::pomdp::{belief_update, collect_labeled_steps, Belief, ObservationModel};
use steproute::seed::SeedTree;
use steproute::sim::{run_episode, EnvConfig};
use steproute::trace::{aggregate_features, RoutingAction, TraceState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::canonical();
    let rows = collect_labeled_steps(&env, &RandomRegenerate { p: 0.3 }, 500, SeedTree::new(3))?;
    let model = ObservationModel::fit(&rows)?;
    let spec = pomdp_spec_for(&env, 0.0);

    let episode = run_episode(&mut AlwaysContinue, &env, 0.0, SeedTree::new(11))?;
    let mut belief = Belief::initial();
    let mut prefix = TraceState::with_max_steps("demo", env.max_steps);
    println!("{:>4}  {:>6}  {:>22}  latent", "step", "score", "belief S0 / S1 / S2");
    for (step, class) in episode.trace.steps().iter().zip(&episode.latent_path) {
        prefix = prefix.append_step(*step)?;
        let obs = aggregate_features(&prefix)?.score_pair();
        belief = belief_update(&belief, RoutingAction::Continue, obs, &spec, &model)?;
        let [a, b, c] = belief.probs;
        println!("{:>4}  {:>6.3}  {a:>6.3} / {b:>5.3} / {c:>5.3}  {class:?}", belief.step_index, step.score);
    }
    Ok(())
}
