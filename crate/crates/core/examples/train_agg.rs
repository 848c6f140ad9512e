//! Short PPO run for the aggregate-feature router; prints the training curve.

use steproute::eval::evaluate;
use steproute::rl::{train_agg, write_history_csv, ActionMode, AggRouter, PpoConfig, TrainConfig};
use steproute::seed::SeedTree;
use steproute::sim::EnvConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = EnvConfig::canonical();
    let cfg = TrainConfig {
        lambda: 1e-4,
        hidden: [32, 32],
        ppo: PpoConfig { iterations: 40, learning_rate: 1e-3, ..PpoConfig::default() },
    };
    let seed = SeedTree::new(9);
    let run = train_agg(&env, &cfg, seed.named("train"))?;
    write_history_csv(std::io::stdout(), &run.history)?;

    let router = AggRouter::new(run.net, ActionMode::Greedy);
    let ev = evaluate(&router, &env, cfg.lambda, 2000, seed.named("eval"))?;
    println!(
        "greedy: accuracy {:.3}, strong tokens {:.1}, regenerate rate {:.3}",
        ev.accuracy(),
        ev.mean_strong_tokens(),
        ev.regen_rate()
    );
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, router.net.save_json())?;
        println!("wrote {path}");
    }
    Ok(())
}
