//! Compares tape gradients with central differences, first for a single GRU
//! cell and then for the whole teacher-forced sequence loss.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use fedattn::model::graph::{gru_step, sequence_loss_batch, GruVars, ParamVars};
use fedattn::model::{ModelDims, ModelParams};
use fedattn::tensor::{grad_check, Tape, Tensor, Var};
use fedattn::tokens::{END, START};

const EPS: f64 = 1e-5;

pub fn run_example() -> fedattn::Result<()> {
    let dims = ModelDims::new(6, 6, 4, 8);
    let params = ModelParams::init(dims, 42)?;

    // GRU cell: inputs are x, h and the nine cell parameters.
    let cell = &params.encoder_gru;
    let mut inputs = vec![
        Tensor::new(vec![2, 4], vec![0.3, -0.2, 0.9, 0.1, -0.5, 0.4, 0.0, 0.7])?,
        Tensor::new(vec![2, 8], (0..16).map(|i| (i as f64 * 0.37).sin() * 0.5).collect())?,
    ];
    inputs.extend(
        [&cell.w_z, &cell.w_r, &cell.w_h, &cell.u_z, &cell.u_r, &cell.u_h, &cell.b_z, &cell.b_r, &cell.b_h]
            .into_iter()
            .cloned(),
    );
    let gru = |tape: &mut Tape, v: &[Var]| {
        let p = GruVars {
            w_z: v[2],
            w_r: v[3],
            w_h: v[4],
            u_z: v[5],
            u_r: v[6],
            u_h: v[7],
            b_z: v[8],
            b_r: v[9],
            b_h: v[10],
        };
        let h = gru_step(tape, &p, v[0], v[1])?;
        let sq = tape.mul(h, h)?;
        tape.sum(sq)
    };
    println!("gru cell         max relative error {:.2e}", grad_check(gru, &inputs, EPS)?);

    // Sequence loss over every model parameter. Gradients here can be tiny,
    // so part of this error is rounding in the f64 difference quotient.
    let source = [START, 4, 5, END];
    let target = [START, 3, END];
    let loss = |tape: &mut Tape, v: &[Var]| {
        let pv = ParamVars::from_vars(v)?;
        Ok(sequence_loss_batch(tape, &pv, dims.hidden_dim, &[&source], &[&target])?.loss)
    };
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    println!(
        "sequence loss    max relative error {:.2e} over {} parameters",
        grad_check(loss, &tensors, EPS)?,
        params.num_scalars()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedattn::Result<()> {
    run_example()
}
