use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(value)
}

/// Largest elementwise relative error between the tape gradient of the scalar
/// function `f` and central differences with step `eps`, over every element
/// of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(format!("input{i}"), t.clone()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).expect("every input is registered");
        for j in 0..inputs[i].len() {
            let original = inputs[i].data()[j];
            probe[i].data_mut()[j] = original + eps;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = original - eps;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact() {
        let err = grad_check(
            |tape, x| {
                let sq = tape.mul(x[0], x[0])?;
                tape.sum(sq)
            },
            &[Tensor::vector(vec![3.0])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn tanh_at_half() {
        let err = grad_check(
            |tape, x| {
                let y = tape.tanh(x[0])?;
                tape.sum(y)
            },
            &[Tensor::vector(vec![0.5])],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(
            |tape, _x| {
                let c = tape.constant(Tensor::scalar(7.0));
                tape.sum(c)
            },
            &[Tensor::vector(vec![1.0, 2.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let res = grad_check(
            |tape, x| {
                let y = tape.scale(x[0], 1e308)?;
                tape.sum(y)
            },
            &[Tensor::vector(vec![2.0])],
            1e-5,
        );
        assert!(matches!(res, Err(Error::NonFinite { .. })));
    }
}
