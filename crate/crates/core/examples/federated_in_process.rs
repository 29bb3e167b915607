//! A three-client federation inside one process, with checkpoints, and a
//! resumed run that picks up where an interrupted one stopped.
//!
//! ```text
//! cargo run --release --example federated_in_process
//! ```

use fedattn::data::{build_federated_dataset, even_sizes, synthesize_dataset};
use fedattn::federated::{resume_federation, run_federation, Event, FederatedConfig};
use fedattn::model::Preset;

pub fn run_example() -> fedattn::Result<()> {
    let pairs = synthesize_dataset(41, 132, 600, 3)?;
    let (vocab, shards) = build_federated_dataset(&pairs, &even_sizes(600, 3), 0.8, 3)?;
    let mut config = FederatedConfig::new(Preset::Desk.dims(vocab.input.len(), vocab.output.len()));
    config.num_clients = 3;
    config.num_rounds = 3;
    config.train.local_epochs = 2;
    config.seed = 3;

    let full = run_federation(&config, &shards)?;
    println!("round  global train  global test  clients' own test");
    for m in &full.history {
        println!(
            "{:>5}  {:>12.5}  {:>11.5}  {:>17.5}",
            m.round_index,
            m.global_train_loss,
            m.global_test_loss,
            m.clients_mean_test_loss()
        );
    }
    let broadcasts = full.events.iter().filter(|e| matches!(e, Event::Broadcast { .. })).count();
    println!("{} events, {broadcasts} broadcasts", full.events.len());

    // Stop after two rounds, then resume from the checkpoint directory.
    let dir = tempfile::tempdir()?;
    config.checkpoint_dir = Some(dir.path().to_path_buf());
    config.num_rounds = 2;
    run_federation(&config, &shards)?;
    config.num_rounds = 3;
    let resumed = resume_federation(&config, &shards)?;
    println!(
        "resumed run matches the uninterrupted one bitwise: {}",
        resumed.global_params.bitwise_eq(&full.global_params)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedattn::Result<()> {
    run_example()
}
