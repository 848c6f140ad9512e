//! Central-difference check of the clipped PPO loss gradient on a random batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steproute::rl::{log_softmax, loss_and_grad, Batch, PolicyNet, PpoConfig};
use steproute::seed::SeedTree;
use steproute::trace::RoutingAction;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = PolicyNet::init([8, 8], SeedTree::new(0));
    let mut batch = Batch::default();
    for _ in 0..32 {
        let x = [rng.random(), rng.random(), rng.random_range(0.0..2.0), rng.random()];
        let a = if rng.random_bool(0.5) { RoutingAction::Regenerate } else { RoutingAction::Continue };
        let lp = log_softmax(net.forward_encoded(&x).0)[a.index()];
        batch.inputs.push(x);
        batch.actions.push(a);
        batch.old_log_probs.push(lp + rng.random_range(-0.4..0.4));
        batch.advantages.push(rng.random_range(-1.0..1.0));
        batch.returns.push(rng.random_range(-1.0..1.0));
    }
    let cfg = PpoConfig::default();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (parts, grad) = loss_and_grad(&net, &batch, &idx, &batch.advantages, &cfg);
    println!(
        "loss {:.6} (surrogate {:.6}, value error {:.6}, entropy {:.6})",
        parts.total, parts.policy, parts.value, parts.entropy
    );

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..net.n_params() {
        let mut plus = net.clone();
        plus.params[k] += h;
        let mut minus = net.clone();
        minus.params[k] -= h;
        let lp = loss_and_grad(&plus, &batch, &idx, &batch.advantages, &cfg).0.total;
        let lm = loss_and_grad(&minus, &batch, &idx, &batch.advantages, &cfg).0.total;
        let numeric = (lp - lm) / (2.0 * h);
        worst = worst.max((grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-6));
    }
    println!("{} parameters, max relative error {worst:.2e}", net.n_params());
}
