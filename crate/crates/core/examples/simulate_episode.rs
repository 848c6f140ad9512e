//! One simulated episode under a threshold router, step by step.

use steproute::policy::{Router, ThresholdPolicy};
use steproute::seed::SeedTree;
use steproute::sim::{run_episode, EnvConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::canonical();
    let router = ThresholdPolicy::new(0.6);
    let seed = SeedTree::new(2024);
    let mut session = router.session(seed.named("policy"));
    let result = run_episode(&mut *session, &env, 5e-4, seed.named("env"))?;

    println!("{:>4}  {:>6}  {:>6}  {:>6}  {:>8}  class", "step", "score", "tokens", "origin", "truth");
    for (i, (step, class)) in result.trace.steps().iter().zip(&result.latent_path).enumerate() {
        println!(
            "{:>4}  {:>6.3}  {:>6}  {:>6}  {:>8}  {:?}",
            i + 1,
            step.score,
            step.token_count,
            format!("{:?}", step.origin),
            format!("{:?}", step.truth.expect("simulated steps are labeled")),
            class
        );
    }
    println!(
        "reward {}  weak tokens {}  strong tokens {}  return {:.4}",
        result.final_reward, result.ledger.weak_tokens, result.ledger.strong_tokens, result.rl_return
    );
    Ok(())
}
