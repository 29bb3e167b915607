//! Generates the synthetic symptom–disease benchmark, shards it across five
//! clients and reads it back.
//!
//! ```text
//! cargo run --example prepare_data [-- OUT_DIR]
//! ```

use std::path::PathBuf;

use fedattn::data::{load_dataset_dir, synthesize_dataset, write_dataset_dir};

pub fn run_example() -> fedattn::Result<()> {
    run(None)
}

fn run(keep: Option<PathBuf>) -> fedattn::Result<()> {
    let tmp = tempfile::tempdir()?;
    let dir = keep.clone().unwrap_or_else(|| tmp.path().to_path_buf());

    let pairs = synthesize_dataset(41, 132, 4920, 0)?;
    let sizes = [1000, 1000, 1000, 1000, 920];
    let manifest = write_dataset_dir(&dir, &pairs, &sizes, 0.8, 0, "synthetic", 0)?;
    println!(
        "{} pairs, {} diseases, {} symptoms -> {}",
        manifest.num_pairs,
        manifest.num_diseases,
        manifest.num_symptoms,
        dir.display()
    );

    let ds = load_dataset_dir(&dir)?;
    for (s, file) in ds.shards.iter().zip(&ds.manifest.shard_files) {
        println!("  client {}  {file:<12} train {:>4}  test {:>4}", s.client_id, s.train.len(), s.test.len());
    }
    let first = ds.vocab.detokenize(&ds.shards[0].train[0])?;
    println!("example pair: {} -> {}", first.symptoms.join(" "), first.disease);
    println!("tokenized:    {:?}", ds.shards[0].train[0]);
    if keep.is_none() {
        println!("(pass a directory to keep the files)");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedattn::Result<()> {
    run(std::env::args().nth(1).map(PathBuf::from))
}
