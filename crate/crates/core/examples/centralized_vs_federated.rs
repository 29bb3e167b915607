//! Trains one model per client on its own shard and one federated model,
//! then scores all of them on the pooled test set of every client.
//!
//! The default is a scaled-down run. `full` uses 4920 samples split
//! 1000/1000/1000/1000/920, 30 centralized epochs and 30 rounds of 5 local
//! epochs (about five minutes per seed in release on one core).
//!
//! ```text
//! cargo run --release --example centralized_vs_federated [-- full [SEED]]
//! ```

use fedattn::data::{build_federated_dataset, synthesize_dataset, TokenizedPair};
use fedattn::federated::{run_federation, FederatedConfig};
use fedattn::model::{ModelParams, Preset};
use fedattn::rng::derive_seed;
use fedattn::train::{evaluate, train_centralized, TrainConfig};

struct Scale {
    sizes: Vec<usize>,
    epochs: usize,
    rounds: usize,
    local_epochs: usize,
}

pub fn run_example() -> fedattn::Result<()> {
    compare(&scale(false), 0)
}

fn scale(full: bool) -> Scale {
    if full {
        Scale {
            sizes: vec![1000, 1000, 1000, 1000, 920],
            epochs: 30,
            rounds: 30,
            local_epochs: 5,
        }
    } else {
        Scale {
            sizes: vec![100; 5],
            epochs: 8,
            rounds: 4,
            local_epochs: 2,
        }
    }
}

fn compare(scale: &Scale, seed: u64) -> fedattn::Result<()> {
    let total = scale.sizes.iter().sum();
    let pairs = synthesize_dataset(41, 132, total, seed)?;
    let (vocab, shards) = build_federated_dataset(&pairs, &scale.sizes, 0.8, seed)?;
    let pooled: Vec<TokenizedPair> = shards.iter().flat_map(|s| s.test.iter().cloned()).collect();
    let dims = Preset::Desk.dims(vocab.input.len(), vocab.output.len());
    let init = ModelParams::init(dims, seed)?;

    println!("model        own train  pooled test");
    let mut central = Vec::new();
    for s in &shards {
        let config = TrainConfig {
            seed: derive_seed(seed, s.client_id as u64),
            ..TrainConfig::default()
        };
        let (params, _) = train_centralized(&init, &s.train, &[], scale.epochs, &config, 0)?;
        let test = evaluate(&params, &pooled)?;
        println!("client {}     {:>9.5}  {:>11.5}", s.client_id, evaluate(&params, &s.train)?, test);
        central.push(test);
    }

    let mut config = FederatedConfig::new(dims);
    config.num_clients = shards.len();
    config.num_rounds = scale.rounds;
    config.train.local_epochs = scale.local_epochs;
    config.seed = seed;
    let state = run_federation(&config, &shards)?;
    let last = state.history.last().expect("at least one round");
    println!("federated    {:>9.5}  {:>11.5}", last.global_train_loss, last.global_test_loss);

    central.sort_by(f64::total_cmp);
    let median = central[central.len() / 2];
    println!(
        "federated pooled test loss {} the median centralized one ({median:.5})",
        if last.global_test_loss <= median { "is at or below" } else { "is above" }
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedattn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.first().is_some_and(|a| a == "full");
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    compare(&scale(full), seed)
}
