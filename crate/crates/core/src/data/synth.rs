use rand::seq::SliceRandom;
use rand::Rng as _;

use super::SymptomDiseasePair;
use crate::error::{Error, Result};
use crate::rng;

const MIN_SET: usize = 3;
const MAX_SET: usize = 17;
const MAX_CORE: usize = 15;

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// Generates a one-hot-compatible corpus with the shape of a symptom–disease
/// knowledge base.
///
/// Each disease owns a disjoint core of symptoms and borrows a few from a
/// shared noise pool, for a characteristic set of 3 to 17 symptoms. A sample
/// draws its disease uniformly, then a random subset (at least 3 where the
/// set allows) of that set which always contains at least one core symptom,
/// so every sample identifies its disease. Symptoms are listed in column
/// (name) order.
pub fn synthesize_dataset(
    n_diseases: usize,
    n_symptoms: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SymptomDiseasePair>> {
    if n_diseases < 2 || n_symptoms < n_diseases {
        return Err(Error::Config(format!(
            "need at least 2 diseases and no fewer symptoms than diseases, got {n_diseases}/{n_symptoms}"
        )));
    }
    let mut rng = rng::stream(seed, rng::SYNTH);
    let symptom_names: Vec<String> = (0..n_symptoms)
        .map(|i| format!("symptom_{i:0w$}", w = width(n_symptoms)))
        .collect();
    let disease_names: Vec<String> = (0..n_diseases)
        .map(|i| format!("disease_{i:0w$}", w = width(n_diseases)))
        .collect();

    let mut pool: Vec<usize> = (0..n_symptoms).collect();
    pool.shuffle(&mut rng);
    let reserve_noise = (n_symptoms / 4).min(n_symptoms - n_diseases);
    let core_pool = n_symptoms - reserve_noise;
    let mut cores: Vec<Vec<usize>> = vec![Vec::new(); n_diseases];
    for (i, &s) in pool[..core_pool].iter().enumerate() {
        let d = i % n_diseases;
        if cores[d].len() < MAX_CORE {
            cores[d].push(s);
        }
    }
    let used: std::collections::HashSet<usize> = cores.iter().flatten().copied().collect();
    let noise: Vec<usize> = pool.iter().copied().filter(|s| !used.contains(s)).collect();

    let sets: Vec<Vec<usize>> = cores
        .iter()
        .map(|core| {
            let lo = MIN_SET.max(core.len());
            let hi = MAX_SET.max(lo);
            let target = rng.gen_range(lo..=hi);
            let extra = (target - core.len()).min(noise.len());
            let mut set = core.clone();
            set.extend(noise.choose_multiple(&mut rng, extra).copied());
            set
        })
        .collect();

    let mut pairs = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let d = rng.gen_range(0..n_diseases);
        let (core, set) = (&cores[d], &sets[d]);
        let k = rng.gen_range(MIN_SET.min(set.len())..=set.len());
        let anchor = *core.choose(&mut rng).expect("every disease has a core symptom");
        let rest: Vec<usize> = set.iter().copied().filter(|&s| s != anchor).collect();
        let mut chosen: Vec<usize> = rest.choose_multiple(&mut rng, k - 1).copied().collect();
        chosen.push(anchor);
        chosen.sort_unstable();
        pairs.push(SymptomDiseasePair {
            symptoms: chosen.iter().map(|&s| symptom_names[s].clone()).collect(),
            disease: disease_names[d].clone(),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeSet, HashMap};

    #[test]
    fn full_scale_shape() {
        let pairs = synthesize_dataset(41, 132, 4920, 7).unwrap();
        assert_eq!(pairs.len(), 4920);
        let diseases: BTreeSet<&str> = pairs.iter().map(|p| p.disease.as_str()).collect();
        assert_eq!(diseases.len(), 41);
        let symptoms: BTreeSet<&str> = pairs.iter().flat_map(|p| p.symptoms.iter().map(String::as_str)).collect();
        assert!(symptoms.len() <= 132);
        for p in &pairs {
            p.validate().unwrap();
            assert!((MIN_SET..=MAX_SET).contains(&p.symptoms.len()));
            let mut sorted = p.symptoms.clone();
            sorted.sort();
            assert_eq!(sorted, p.symptoms);
        }
    }

    #[test]
    fn tiny_range_and_determinism() {
        let a = synthesize_dataset(2, 4, 10, 3).unwrap();
        assert!(a.iter().all(|p| p.disease == "disease_0" || p.disease == "disease_1"));
        assert_eq!(a, synthesize_dataset(2, 4, 10, 3).unwrap());
        assert_ne!(a, synthesize_dataset(2, 4, 10, 4).unwrap());
    }

    #[test]
    fn invalid_counts() {
        assert!(synthesize_dataset(1, 10, 10, 0).is_err());
        assert!(synthesize_dataset(5, 4, 10, 0).is_err());
    }

    /// Scores each disease by how often it co-occurred with the sample's
    /// symptoms in the training half.
    #[test]
    fn frequency_classifier_separates_held_out_samples() {
        let pairs = synthesize_dataset(41, 132, 4920, 11).unwrap();
        let (train, test) = pairs.split_at(3936);
        let mut disease_count: HashMap<&str, f64> = HashMap::new();
        let mut co: HashMap<(&str, &str), f64> = HashMap::new();
        for p in train {
            *disease_count.entry(&p.disease).or_default() += 1.0;
            for s in &p.symptoms {
                *co.entry((s.as_str(), p.disease.as_str())).or_default() += 1.0;
            }
        }
        let correct = test
            .iter()
            .filter(|p| {
                let best = disease_count
                    .iter()
                    .map(|(&d, &n)| {
                        let score: f64 = p
                            .symptoms
                            .iter()
                            .map(|s| co.get(&(s.as_str(), d)).copied().unwrap_or(0.0) / n)
                            .sum();
                        (d, score)
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(a.0)))
                    .unwrap()
                    .0;
                best == p.disease
            })
            .count();
        let accuracy = correct as f64 / test.len() as f64;
        assert!(accuracy > 0.9, "accuracy {accuracy}");
    }
}
