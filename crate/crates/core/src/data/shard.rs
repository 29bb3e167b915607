use rand::seq::SliceRandom;

use super::TokenizedPair;
use crate::error::{Error, Result};
use crate::rng;

/// One client's private data, already split.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Vec<TokenizedPair>,
    pub test: Vec<TokenizedPair>,
}

/// Shuffles `items` with the `shard` stream of `seed` and cuts the result
/// into consecutive pieces of the given sizes.
pub fn shard<T: Clone>(items: &[T], sizes: &[usize], seed: u64) -> Result<Vec<Vec<T>>> {
    let total: usize = sizes.iter().sum();
    if total != items.len() {
        return Err(Error::Config(format!(
            "shard sizes sum to {total} but there are {} items",
            items.len()
        )));
    }
    if sizes.is_empty() {
        return Err(Error::Config("at least one shard size is required".into()));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::SHARD));
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &size in sizes {
        out.push(order[start..start + size].iter().map(|&i| items[i].clone()).collect());
        start += size;
    }
    Ok(out)
}

/// Seeded split into `round(fraction · n)` training items and the rest,
/// keeping at least one item on each side.
pub fn split_train_test<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} is not in (0, 1)")));
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::TooSmall(n));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

/// Splits each client's pairs and tokenizes them. Client `k` splits with
/// seed `seed + k` so clients do not share a permutation.
pub fn client_shards(
    pieces: &[Vec<super::SymptomDiseasePair>],
    vocab: &super::Vocab,
    fraction: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    pieces
        .iter()
        .enumerate()
        .map(|(k, pairs)| {
            let (train, test) = split_train_test(pairs, fraction, seed.wrapping_add(k as u64))?;
            Ok(ClientShard {
                client_id: k,
                train: vocab.tokenize_all(&train),
                test: vocab.tokenize_all(&test),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_sizes() {
        let items: Vec<usize> = (0..4920).collect();
        let shards = shard(&items, &[1000, 1000, 1000, 1000, 920], 42).unwrap();
        let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1000, 1000, 1000, 1000, 920]);
    }

    #[test]
    fn single_shard_is_a_permutation() {
        let items: Vec<usize> = (0..50).collect();
        let shards = shard(&items, &[50], 1).unwrap();
        let mut sorted = shards[0].clone();
        sorted.sort_unstable();
        assert_eq!(sorted, items);
        assert_eq!(shard(&items, &[50], 1).unwrap(), shards);
    }

    #[test]
    fn size_mismatch_is_a_config_error() {
        let items = [1, 2, 3];
        assert!(matches!(shard(&items, &[1, 1], 0), Err(Error::Config(_))));
    }

    #[test]
    fn split_sizes() {
        let items: Vec<usize> = (0..1000).collect();
        let (tr, te) = split_train_test(&items, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (800, 200));
        let items: Vec<usize> = (0..10).collect();
        let (tr, te) = split_train_test(&items, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(matches!(split_train_test(&[1], 0.8, 3), Err(Error::TooSmall(1))));
        assert!(split_train_test(&items, 1.0, 3).is_err());
    }

    proptest! {
        #[test]
        fn shards_partition_the_input(
            sizes in prop::collection::vec(0usize..20, 1..6),
            seed in any::<u64>(),
        ) {
            let n: usize = sizes.iter().sum();
            let items: Vec<usize> = (0..n).collect();
            let shards = shard(&items, &sizes, seed).unwrap();
            let mut all: Vec<usize> = shards.concat();
            all.sort_unstable();
            prop_assert_eq!(all, items);
            for (s, &want) in shards.iter().zip(&sizes) {
                prop_assert_eq!(s.len(), want);
            }
        }

        #[test]
        fn split_is_a_partition(n in 2usize..200, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (tr, te) = split_train_test(&items, 0.8, seed).unwrap();
            prop_assert!(!tr.is_empty() && !te.is_empty());
            let mut all = [tr, te].concat();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }
}
