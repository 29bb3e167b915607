//! Weighted and uniform federated averaging on hand-made client updates.
//!
//! ```text
//! cargo run --example aggregation
//! ```

use fedattn::federated::{aggregate, aggregation_weights, AggregationMode};
use fedattn::model::{ModelDims, ModelParams};
use fedattn::train::ClientUpdate;

pub fn run_example() -> fedattn::Result<()> {
    let sizes = [1000, 1000, 1000, 1000, 920];
    for mode in [AggregationMode::Weighted, AggregationMode::Uniform] {
        let w = aggregation_weights(&sizes, mode)?;
        let shown: Vec<String> = w.iter().map(|x| format!("{x:.4}")).collect();
        println!("{mode:?} weights for {sizes:?}: [{}]", shown.join(", "));
    }

    // Three clients whose parameters are constant tensors 1, 2 and 4.
    let dims = ModelDims::new(5, 5, 2, 3);
    let updates: Vec<ClientUpdate> = [(1.0, 100), (2.0, 300), (4.0, 600)]
        .iter()
        .enumerate()
        .map(|(k, &(value, n))| {
            let mut params = ModelParams::zeros(dims);
            for t in params.tensors_mut() {
                t.data_mut().fill(value);
            }
            ClientUpdate {
                client_id: k,
                params,
                sample_count: n,
                mean_train_loss: 0.0,
                mean_test_loss: 0.0,
            }
        })
        .collect();
    for mode in [AggregationMode::Weighted, AggregationMode::Uniform] {
        let global = aggregate(&updates, mode)?;
        println!("{mode:?} average of 1, 2, 4 with n = 100, 300, 600: {}", global.attn_v.data()[0]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedattn::Result<()> {
    run_example()
}
