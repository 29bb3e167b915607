use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{SymptomDiseasePair, VocabListing};
use crate::error::{Error, Result};
use crate::tokens::{END, RESERVED, START, UNK};

/// Token ↔ id map. Ids `0..4` are the reserved tokens; the rest follow in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMap {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenMap {
    fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = names
            .into_iter()
            .filter(|n| !RESERVED.contains(n))
            .collect();
        let tokens: Vec<String> = RESERVED
            .iter()
            .copied()
            .chain(sorted)
            .map(str::to_owned)
            .collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Rebuilds a map from a full listing, reserved tokens included.
    pub fn from_listing(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Config("vocabulary listing must start with the reserved tokens".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Config("vocabulary listing has duplicate tokens".into()));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pub input: TokenMap,
    pub output: TokenMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub input_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
}

impl Vocab {
    pub fn build(pairs: &[SymptomDiseasePair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("cannot build a vocabulary from no pairs".into()));
        }
        Ok(Self::from_tokens(
            pairs.iter().flat_map(|p| p.symptoms.iter().map(String::as_str)),
            pairs.iter().map(|p| p.disease.as_str()),
        ))
    }

    pub fn from_tokens<'a>(
        symptoms: impl IntoIterator<Item = &'a str>,
        diseases: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        Self {
            input: TokenMap::from_names(symptoms),
            output: TokenMap::from_names(diseases),
        }
    }

    pub fn tokenize(&self, pair: &SymptomDiseasePair) -> TokenizedPair {
        let mut input_ids = Vec::with_capacity(pair.symptoms.len() + 2);
        input_ids.push(START);
        input_ids.extend(pair.symptoms.iter().map(|s| self.input.id_or_unk(s)));
        input_ids.push(END);
        TokenizedPair {
            input_ids,
            target_ids: vec![START, self.output.id_or_unk(&pair.disease), END],
        }
    }

    pub fn tokenize_all(&self, pairs: &[SymptomDiseasePair]) -> Vec<TokenizedPair> {
        pairs.iter().map(|p| self.tokenize(p)).collect()
    }

    /// Inverse of [`Vocab::tokenize`]: strips `<start>`/`<end>` and maps ids
    /// back to names.
    pub fn detokenize(&self, pair: &TokenizedPair) -> Result<SymptomDiseasePair> {
        let strip = |ids: &[usize]| -> Vec<usize> {
            ids.iter().copied().filter(|&i| i != START && i != END).collect()
        };
        let name = |map: &TokenMap, id: usize| -> Result<String> {
            map.token(id)
                .map(str::to_owned)
                .ok_or(Error::OutOfVocabulary { id, size: map.len() })
        };
        let symptoms = strip(&pair.input_ids)
            .into_iter()
            .map(|id| name(&self.input, id))
            .collect::<Result<Vec<_>>>()?;
        let targets = strip(&pair.target_ids);
        let [disease] = targets[..] else {
            return Err(Error::Contract(format!("expected one target token, got {}", targets.len())));
        };
        Ok(SymptomDiseasePair {
            symptoms,
            disease: name(&self.output, disease)?,
        })
    }

    pub fn listing(&self) -> VocabListing {
        VocabListing {
            input: self.input.tokens().to_vec(),
            output: self.output.tokens().to_vec(),
        }
    }

    pub fn from_listing(listing: &VocabListing) -> Result<Self> {
        Ok(Self {
            input: TokenMap::from_listing(listing.input.clone())?,
            output: TokenMap::from_listing(listing.output.clone())?,
        })
    }
}
