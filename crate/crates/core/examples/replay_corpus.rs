//! Builds a paired JSONL corpus (cheap-only and expensive-only traces per
//! query), reloads it, and replays a threshold ladder over it offline.

use steproute::eval::{pair_corpus, Bench};
use steproute::metrics::{metric_report, min_score_auc};
use steproute::policy::{AlwaysContinue, AlwaysRegenerate, Router, ThresholdPolicy};
use steproute::seed::SeedTree;
use steproute::sim::{replay_load, run_episode, write_jsonl, EnvConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A stronger cheap generator, so some cheap-only traces succeed.
    let env = EnvConfig { p_weak: 0.9, ..EnvConfig::canonical() };
    let seed = SeedTree::new(77);
    let mut traces = Vec::new();
    for q in 0..300 {
        // The same seed gives both runs the same horizon, so steps align.
        let ep = seed.index(q);
        traces.push(run_episode(&mut AlwaysContinue, &env, 0.0, ep)?.trace);
        traces.push(run_episode(&mut AlwaysRegenerate, &env, 0.0, ep)?.trace);
    }
    let path = std::env::temp_dir().join("steproute-corpus.jsonl");
    write_jsonl(std::fs::File::create(&path)?, &traces)?;

    let loaded = replay_load(&path)?;
    let pairs = pair_corpus(&loaded)?;
    let weak: Vec<_> = pairs.iter().map(|p| p.weak.clone()).collect();
    println!("{} traces, {} queries, min-score auc {:.3}", loaded.len(), pairs.len(), min_score_auc(&weak)?);

    let routers: Vec<ThresholdPolicy> = [0.2, 0.4, 0.6, 0.8].map(ThresholdPolicy::new).to_vec();
    let refs: Vec<(f64, &dyn Router)> = routers.iter().map(|r| (r.k, r as &dyn Router)).collect();
    let run = Bench::Replay { pairs: &pairs, seed }.run_curve(&refs)?;
    for ev in std::iter::once(&run.weak).chain(&run.points).chain(std::iter::once(&run.strong)) {
        println!("{:>24}: accuracy {:.3}, strong tokens {:.1}", ev.label, ev.accuracy(), ev.mean_strong_tokens());
    }
    println!("{}", serde_json::to_string_pretty(&metric_report(&run.curve()))?);
    Ok(())
}
