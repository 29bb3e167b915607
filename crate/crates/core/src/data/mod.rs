//! Symptom–disease corpora: parsing, vocabularies, client sharding and the
//! synthetic stand-in generator.

mod csv_format;
mod shard;
mod store;
mod synth;
mod text_format;
mod vocab;

pub use csv_format::{parse_onehot_csv, write_onehot_csv, ParsedCsv};
pub use shard::{client_shards, shard, split_train_test, ClientShard};
pub use store::{load_dataset_dir, load_vocab, write_dataset_dir, LoadedDataset, MANIFEST_FILE, VOCAB_FILE};
pub use synth::synthesize_dataset;
pub use text_format::{parse_text_pairs, read_text_pairs, write_text_pairs};
pub use vocab::{TokenMap, TokenizedPair, Vocab};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymptomDiseasePair {
    pub symptoms: Vec<String>,
    pub disease: String,
}

impl SymptomDiseasePair {
    pub fn new(symptoms: Vec<String>, disease: impl Into<String>) -> Result<Self> {
        let pair = Self {
            symptoms,
            disease: disease.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.symptoms.is_empty() {
            return Err(Error::Contract("pair has no symptoms".into()));
        }
        if self.disease.is_empty() || self.symptoms.iter().any(String::is_empty) {
            return Err(Error::Contract("empty token name".into()));
        }
        let unique: BTreeSet<&String> = self.symptoms.iter().collect();
        if unique.len() != self.symptoms.len() {
            return Err(Error::Contract(format!(
                "duplicate symptom in pair for {}",
                self.disease
            )));
        }
        Ok(())
    }
}

/// Token names are single words in the text format; interior whitespace
/// becomes `_`.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join("_")
}

/// Description of a prepared dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub num_pairs: usize,
    pub num_diseases: usize,
    pub num_symptoms: usize,
    pub skipped_rows: usize,
    pub seed: u64,
    pub shard_sizes: Vec<usize>,
    pub shard_files: Vec<String>,
    pub train_fraction: f64,
    pub vocab_file: String,
    /// CRC-32 of each shard file, for checking that a rerun reproduced it.
    pub shard_crc32: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabListing {
    pub input: Vec<String>,
    pub output: Vec<String>,
}

/// Builds one vocabulary over all pairs, cuts them into client pieces of
/// the given sizes and splits each piece into train and test.
pub fn build_federated_dataset(
    pairs: &[SymptomDiseasePair],
    sizes: &[usize],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vocab, Vec<ClientShard>)> {
    let vocab = Vocab::build(pairs)?;
    let pieces = shard(pairs, sizes, seed)?;
    let shards = client_shards(&pieces, &vocab, train_fraction, seed)?;
    Ok((vocab, shards))
}

/// Splits `total` into `clients` sizes that differ by at most one, larger
/// pieces first.
pub fn even_sizes(total: usize, clients: usize) -> Vec<usize> {
    if clients == 0 {
        return Vec::new();
    }
    (0..clients)
        .map(|k| total / clients + usize::from(k < total % clients))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split() {
        assert_eq!(even_sizes(10, 3), vec![4, 3, 3]);
        assert_eq!(even_sizes(4920, 1), vec![4920]);
    }

    #[test]
    fn pair_validation() {
        assert!(SymptomDiseasePair::new(vec!["a".into()], "d").is_ok());
        assert!(SymptomDiseasePair::new(vec![], "d").is_err());
        assert!(SymptomDiseasePair::new(vec!["a".into(), "a".into()], "d").is_err());
        assert!(SymptomDiseasePair::new(vec!["a".into()], "").is_err());
    }

    #[test]
    fn names_lose_interior_whitespace() {
        assert_eq!(normalize_name(" spotting_ urination "), "spotting__urination");
        assert_eq!(normalize_name("skin rash"), "skin_rash");
    }
}
