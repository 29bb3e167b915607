//! Prepared dataset directories: one text file per client shard, the shared
//! vocabulary and a manifest.

use std::path::{Path, PathBuf};

use super::{
    client_shards, read_text_pairs, shard, write_text_pairs, ClientShard, DatasetManifest, SymptomDiseasePair,
    TokenizedPair, Vocab, VocabListing,
};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "dataset.json";
pub const VOCAB_FILE: &str = "vocab.json";

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(Error::file(path))
}

fn shard_file(k: usize) -> String {
    format!("shard_{k}.txt")
}

/// Shuffles `pairs` into shards of `sizes` and writes them to `dir` along
/// with the vocabulary and a manifest. Returns the manifest.
pub fn write_dataset_dir(
    dir: &Path,
    pairs: &[SymptomDiseasePair],
    sizes: &[usize],
    train_fraction: f64,
    seed: u64,
    source: &str,
    skipped_rows: usize,
) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} is not in (0, 1)")));
    }
    let vocab = Vocab::build(pairs)?;
    let pieces = shard(pairs, sizes, seed)?;
    std::fs::create_dir_all(dir)?;
    let mut shard_files = Vec::with_capacity(pieces.len());
    let mut shard_crc32 = Vec::with_capacity(pieces.len());
    for (k, piece) in pieces.iter().enumerate() {
        let mut buf = Vec::new();
        write_text_pairs(&mut buf, piece)?;
        let name = shard_file(k);
        std::fs::write(dir.join(&name), &buf)?;
        shard_crc32.push(crc32fast::hash(&buf));
        shard_files.push(name);
    }
    std::fs::write(dir.join(VOCAB_FILE), serde_json::to_vec_pretty(&vocab.listing())?)?;
    let manifest = DatasetManifest {
        source: source.to_owned(),
        num_pairs: pairs.len(),
        num_diseases: vocab.output.len() - crate::tokens::RESERVED.len(),
        num_symptoms: vocab.input.len() - crate::tokens::RESERVED.len(),
        skipped_rows,
        seed,
        shard_sizes: sizes.to_vec(),
        shard_files,
        train_fraction,
        vocab_file: VOCAB_FILE.into(),
        shard_crc32,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub vocab: Vocab,
    pub shards: Vec<ClientShard>,
}

impl LoadedDataset {
    pub fn pooled_train(&self) -> Vec<TokenizedPair> {
        self.shards.iter().flat_map(|s| s.train.iter().cloned()).collect()
    }

    pub fn pooled_test(&self) -> Vec<TokenizedPair> {
        self.shards.iter().flat_map(|s| s.test.iter().cloned()).collect()
    }
}

/// Reads a directory written by [`write_dataset_dir`] and performs each
/// client's train/test split exactly as [`client_shards`] would.
pub fn load_vocab(dir: &Path) -> Result<Vocab> {
    let manifest: DatasetManifest = serde_json::from_slice(&read(&dir.join(MANIFEST_FILE))?)?;
    let listing: VocabListing = serde_json::from_slice(&read(&dir.join(&manifest.vocab_file))?)?;
    Vocab::from_listing(&listing)
}

pub fn load_dataset_dir(dir: &Path) -> Result<LoadedDataset> {
    let manifest: DatasetManifest = serde_json::from_slice(&read(&dir.join(MANIFEST_FILE))?)?;
    let listing: VocabListing = serde_json::from_slice(&read(&dir.join(&manifest.vocab_file))?)?;
    let vocab = Vocab::from_listing(&listing)?;
    let mut pieces = Vec::with_capacity(manifest.shard_files.len());
    for (k, name) in manifest.shard_files.iter().enumerate() {
        let pairs = read_text_pairs(&dir.join(name))?;
        if manifest.shard_sizes.get(k) != Some(&pairs.len()) {
            return Err(Error::Config(format!(
                "{name} holds {} pairs but the manifest says {:?}",
                pairs.len(),
                manifest.shard_sizes.get(k)
            )));
        }
        pieces.push(pairs);
    }
    let shards = client_shards(&pieces, &vocab, manifest.train_fraction, manifest.seed)?;
    Ok(LoadedDataset {
        dir: dir.to_path_buf(),
        manifest,
        vocab,
        shards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_federated_dataset, synthesize_dataset};

    #[test]
    fn directory_round_trip_matches_in_memory_preparation() {
        let pairs = synthesize_dataset(5, 16, 60, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset_dir(dir.path(), &pairs, &[25, 35], 0.8, 9, "synthetic", 0).unwrap();
        assert_eq!(m.shard_files, vec!["shard_0.txt", "shard_1.txt"]);
        let loaded = load_dataset_dir(dir.path()).unwrap();
        let (vocab, shards) = build_federated_dataset(&pairs, &[25, 35], 0.8, 9).unwrap();
        assert_eq!(loaded.vocab, vocab);
        assert_eq!(loaded.shards, shards);
        assert_eq!(loaded.shards[1].train.len() + loaded.shards[1].test.len(), 35);
    }
}
