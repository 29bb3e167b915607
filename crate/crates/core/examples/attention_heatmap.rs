//! Trains a small model on synthetic data, then shows which symptoms the
//! decoder attended to for a few predictions.
//!
//! ```text
//! cargo run --release --example attention_heatmap
//! ```

use fedattn::cli::report::{predict, render_heatmap, top_k};
use fedattn::data::{synthesize_dataset, Vocab};
use fedattn::model::{ModelParams, Preset};
use fedattn::train::{evaluate, train_centralized, TrainConfig};

pub fn run_example() -> fedattn::Result<()> {
    let pairs = synthesize_dataset(8, 30, 160, 1)?;
    let vocab = Vocab::build(&pairs)?;
    let train = vocab.tokenize_all(&pairs);
    let dims = Preset::Desk.dims(vocab.input.len(), vocab.output.len());
    let config = TrainConfig {
        batch_size: 16,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let init = ModelParams::init(dims, 1)?;
    let (params, _) = train_centralized(&init, &train, &[], 15, &config, 0)?;
    println!("training loss {:.4}\n", evaluate(&params, &train)?);

    for pair in pairs.iter().take(3) {
        let p = predict(&params, &vocab, &pair.symptoms, 4)?;
        println!("expected {}, predicted {}", pair.disease, p.predicted.join(" "));
        print!("{}", render_heatmap(&p.report));
        for (token, cols) in top_k(&p.report, 2) {
            let listed: Vec<String> = cols.iter().map(|(s, w)| format!("{s} ({w:.2})")).collect();
            println!("  {token}: {}", listed.join(", "));
        }
        println!();
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedattn::Result<()> {
    run_example()
}
