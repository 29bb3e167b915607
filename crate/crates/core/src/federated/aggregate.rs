use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::train::ClientUpdate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Each client weighted by its training-set size.
    #[default]
    Weighted,
    /// Plain mean over clients.
    Uniform,
}

/// Mixing weights for the given sample counts, in input order.
pub fn aggregation_weights(sample_counts: &[usize], mode: AggregationMode) -> Result<Vec<f64>> {
    if sample_counts.is_empty() {
        return Err(Error::Contract("no updates to aggregate".into()));
    }
    if let Some(i) = sample_counts.iter().position(|&n| n == 0) {
        return Err(Error::Contract(format!("update {i} reports zero samples")));
    }
    Ok(match mode {
        AggregationMode::Weighted => {
            let total: usize = sample_counts.iter().sum();
            sample_counts.iter().map(|&n| n as f64 / total as f64).collect()
        }
        AggregationMode::Uniform => vec![1.0 / sample_counts.len() as f64; sample_counts.len()],
    })
}

/// Element-wise weighted mean of the client parameters.
///
/// Terms are summed in ascending `client_id` order whatever the input order,
/// so the result depends only on the set of updates.
pub fn aggregate(updates: &[ClientUpdate], mode: AggregationMode) -> Result<ModelParams> {
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    if let Some(w) = order.windows(2).find(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::Aggregation(format!("two updates from client {}", w[0].client_id)));
    }
    let counts: Vec<usize> = order.iter().map(|u| u.sample_count).collect();
    let weights = aggregation_weights(&counts, mode).map_err(|e| match (e, order.iter().find(|u| u.sample_count == 0)) {
        (Error::Contract(_), Some(u)) => Error::Contract(format!("client {} reports zero samples", u.client_id)),
        (e, _) => e,
    })?;
    let first = order[0];
    for u in &order[1..] {
        if u.params.dims != first.params.dims {
            return Err(Error::Aggregation(format!(
                "client {} has dims {:?} but client {} has {:?}",
                u.client_id, u.params.dims, first.client_id, first.params.dims
            )));
        }
    }
    if order.len() == 1 {
        return Ok(first.params.clone());
    }

    let mut out = first.params.clone();
    for (slot, dst) in out.tensors_mut().into_iter().enumerate() {
        let sources: Vec<&[f64]> = order.iter().map(|u| u.params.tensors()[slot].data()).collect();
        for (i, x) in dst.data_mut().iter_mut().enumerate() {
            let mut acc = weights[0] * sources[0][i];
            for (w, src) in weights.iter().zip(&sources).skip(1) {
                acc += w * src[i];
            }
            *x = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::tensor::Tensor;

    fn update(client_id: usize, sample_count: usize, params: ModelParams) -> ClientUpdate {
        ClientUpdate {
            client_id,
            params,
            sample_count,
            mean_train_loss: 0.0,
            mean_test_loss: 0.0,
        }
    }

    fn filled(dims: ModelDims, v: f64) -> ModelParams {
        let mut p = ModelParams::zeros(dims);
        for t in p.tensors_mut() {
            *t = Tensor::full(t.shape(), v);
        }
        p
    }

    #[test]
    fn equal_counts_are_a_plain_mean() {
        let dims = ModelDims::new(5, 5, 2, 2);
        let ups = [update(0, 10, filled(dims, 0.0)), update(1, 10, filled(dims, 2.0))];
        let g = aggregate(&ups, AggregationMode::Weighted).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn table_sizes_example() {
        let dims = ModelDims::new(5, 5, 2, 2);
        let sizes = [1000, 1000, 1000, 1000, 920];
        let ups: Vec<_> = sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| update(k, n, filled(dims, (k + 1) as f64)))
            .collect();
        let g = aggregate(&ups, AggregationMode::Weighted).unwrap();
        let want = 14600.0 / 4920.0;
        assert!(g.flatten().iter().all(|&x| (x - want).abs() < 1e-12));
    }

    #[test]
    fn input_order_does_not_matter() {
        let dims = ModelDims::new(5, 5, 2, 3);
        let mut ups: Vec<_> = (0..4)
            .map(|k| update(k, 10 + k, ModelParams::init(dims, k as u64).unwrap()))
            .collect();
        let a = aggregate(&ups, AggregationMode::Weighted).unwrap();
        ups.reverse();
        let b = aggregate(&ups, AggregationMode::Weighted).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn single_update_is_returned_exactly() {
        let p = ModelParams::init(ModelDims::new(5, 5, 2, 3), 1).unwrap();
        let g = aggregate(&[update(4, 3, p.clone())], AggregationMode::Uniform).unwrap();
        assert!(g.bitwise_eq(&p));
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = ModelParams::init(ModelDims::new(5, 5, 2, 3), 1).unwrap();
        let b = ModelParams::init(ModelDims::new(5, 5, 2, 4), 1).unwrap();
        assert!(matches!(aggregate(&[], AggregationMode::Weighted), Err(Error::Contract(_))));
        let err = aggregate(&[update(0, 1, a.clone()), update(1, 1, b)], AggregationMode::Weighted).unwrap_err();
        assert!(matches!(&err, Error::Aggregation(m) if m.contains("client 1") && m.contains("client 0")));
        assert!(matches!(
            aggregate(&[update(0, 0, a.clone()), update(1, 1, a.clone())], AggregationMode::Weighted),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            aggregate(&[update(0, 1, a.clone()), update(0, 1, a)], AggregationMode::Weighted),
            Err(Error::Aggregation(_))
        ));
    }
}
