//! Batched model graph on a [`Tape`].
//!
//! Every activation is a `B × width` matrix, one row per sequence. Sequences
//! of different lengths share a batch: an encoder row stops updating once its
//! sequence ends, and attention over a row never sees positions past its end,
//! so each row computes exactly what it would alone.

use super::{GruParams, ModelParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::tokens::PAD;

pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

/// Parameters registered on a tape, in canonical order.
pub struct ParamVars {
    pub input_embedding: Var,
    pub output_embedding: Var,
    pub encoder: GruVars,
    pub decoder: GruVars,
    pub attn_w1: Var,
    pub attn_w2: Var,
    pub attn_v: Var,
    pub attn_wc: Var,
    pub out_proj: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars: Vec<Var> = params
            .tensors()
            .into_iter()
            .zip(PARAM_NAMES)
            .map(|(t, name)| tape.param(name, t.clone()))
            .collect();
        Self::from_vars(&vars).expect("PARAM_COUNT tensors")
    }

    /// Assigns already registered variables, given in [`PARAM_NAMES`] order.
    pub fn from_vars(vars: &[Var]) -> Result<Self> {
        if vars.len() != PARAM_NAMES.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter variables, got {}",
                PARAM_NAMES.len(),
                vars.len()
            )));
        }
        let mut vars = vars.iter().copied();
        let mut next = || vars.next().expect("length checked");
        let input_embedding = next();
        let output_embedding = next();
        let mut gru = || GruVars {
            w_z: next(),
            w_r: next(),
            w_h: next(),
            u_z: next(),
            u_r: next(),
            u_h: next(),
            b_z: next(),
            b_r: next(),
            b_h: next(),
        };
        let encoder = gru();
        let decoder = gru();
        Ok(Self {
            input_embedding,
            output_embedding,
            encoder,
            decoder,
            attn_w1: next(),
            attn_w2: next(),
            attn_v: next(),
            attn_wc: next(),
            out_proj: next(),
        })
    }
}

/// Registers a [`GruParams`] on its own, for testing a single cell.
pub fn register_gru(tape: &mut Tape, p: &GruParams) -> GruVars {
    GruVars {
        w_z: tape.param("w_z", p.w_z.clone()),
        w_r: tape.param("w_r", p.w_r.clone()),
        w_h: tape.param("w_h", p.w_h.clone()),
        u_z: tape.param("u_z", p.u_z.clone()),
        u_r: tape.param("u_r", p.u_r.clone()),
        u_h: tape.param("u_h", p.u_h.clone()),
        b_z: tape.param("b_z", p.b_z.clone()),
        b_r: tape.param("b_r", p.b_r.clone()),
        b_h: tape.param("b_h", p.b_h.clone()),
    }
}

fn gate(tape: &mut Tape, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let pre = tape.add(xw, hu)?;
    tape.add_row(pre, b)
}

/// One GRU step:
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_step(tape: &mut Tape, p: &GruVars, x: Var, h: Var) -> Result<Var> {
    let z_pre = gate(tape, x, p.w_z, h, p.u_z, p.b_z)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, x, p.w_r, h, p.u_r, p.b_r)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.mul(r, h)?;
    let cand_pre = gate(tape, x, p.w_h, rh, p.u_h, p.b_h)?;
    let cand = tape.tanh(cand_pre)?;
    let keep = tape.one_minus(z)?;
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}

/// Encoder activations for a batch.
pub struct EncodedBatch {
    /// One `B × hidden` matrix per source position.
    pub states: Vec<Var>,
    /// `states[s] · W_2`, cached because every decode step reuses it.
    pub keys: Vec<Var>,
    /// Hidden state after each row's last token.
    pub final_state: Var,
    pub lengths: Vec<usize>,
}

impl EncodedBatch {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.states.len()
    }

    /// Row-major `B × S` validity mask, `None` when no row is padded.
    fn mask(&self) -> Option<Vec<bool>> {
        let s_max = self.max_len();
        if self.lengths.iter().all(|&l| l == s_max) {
            return None;
        }
        Some(
            self.lengths
                .iter()
                .flat_map(|&len| (0..s_max).map(move |s| s < len))
                .collect(),
        )
    }
}

pub fn encode_batch(
    tape: &mut Tape,
    pv: &ParamVars,
    hidden_dim: usize,
    inputs: &[&[usize]],
) -> Result<EncodedBatch> {
    if inputs.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if inputs.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptySequence);
    }
    let lengths: Vec<usize> = inputs.iter().map(|s| s.len()).collect();
    let s_max = *lengths.iter().max().expect("non-empty batch");
    let mut h = tape.constant(Tensor::zeros(&[inputs.len(), hidden_dim]));
    let mut states = Vec::with_capacity(s_max);
    let mut keys = Vec::with_capacity(s_max);
    for t in 0..s_max {
        let ids: Vec<usize> = inputs.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
        let x = tape.gather_rows(pv.input_embedding, &ids)?;
        let stepped = gru_step(tape, &pv.encoder, x, h)?;
        let active: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
        h = if active.iter().all(|&a| a) {
            stepped
        } else {
            tape.select_rows(&active, stepped, h)?
        };
        states.push(h);
        keys.push(tape.matmul(h, pv.attn_w2)?);
    }
    Ok(EncodedBatch {
        states,
        keys,
        final_state: h,
        lengths,
    })
}

pub struct AttentionVars {
    /// `B × S` attention weights.
    pub weights: Var,
    pub context: Var,
    pub attn_vector: Var,
}

/// Additive scores `v·tanh(h_t W_1 + h̄_s W_2)` for every source position,
/// as a `B × S` matrix.
pub fn attention_scores(tape: &mut Tape, pv: &ParamVars, h_t: Var, enc: &EncodedBatch) -> Result<Var> {
    let query = tape.matmul(h_t, pv.attn_w1)?;
    let mut scores = Vec::with_capacity(enc.max_len());
    for &key in &enc.keys {
        let pre = tape.add(query, key)?;
        let act = tape.tanh(pre)?;
        scores.push(tape.matmul(act, pv.attn_v)?);
    }
    tape.stack_columns(&scores)
}

/// Softmax-normalized weights, their context vector `Σ_s α_s h̄_s`, and the
/// attention vector `tanh([c_t; h_t] W_c)`.
pub fn attend(tape: &mut Tape, pv: &ParamVars, h_t: Var, enc: &EncodedBatch) -> Result<AttentionVars> {
    let scores = attention_scores(tape, pv, h_t, enc)?;
    let mask = enc.mask();
    let weights = tape.masked_softmax(scores, mask.as_deref())?;
    let mut context = None;
    for (s, &state) in enc.states.iter().enumerate() {
        let alpha = tape.column(weights, s)?;
        let term = tape.mul_col(state, alpha)?;
        context = Some(match context {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let context = context.expect("encoder output is non-empty");
    let joined = tape.concat(context, h_t)?;
    let projected = tape.matmul(joined, pv.attn_wc)?;
    let attn_vector = tape.tanh(projected)?;
    Ok(AttentionVars {
        weights,
        context,
        attn_vector,
    })
}

pub struct StepVars {
    pub logits: Var,
    pub hidden: Var,
    pub attention: AttentionVars,
}

/// Decoder GRU on the previous tokens, then attention with the new state,
/// then the output projection.
pub fn decode_step(
    tape: &mut Tape,
    pv: &ParamVars,
    prev_tokens: &[usize],
    h_prev: Var,
    enc: &EncodedBatch,
) -> Result<StepVars> {
    let x = tape.gather_rows(pv.output_embedding, prev_tokens)?;
    let hidden = gru_step(tape, &pv.decoder, x, h_prev)?;
    let attention = attend(tape, pv, hidden, enc)?;
    let logits = tape.matmul(attention.attn_vector, pv.out_proj)?;
    Ok(StepVars {
        logits,
        hidden,
        attention,
    })
}

pub struct BatchLoss {
    /// Mean over the batch of each pair's mean per-token cross-entropy.
    pub loss: Var,
    /// Per-pair mean cross-entropy, read off the forward values.
    pub per_pair: Vec<f64>,
}

/// Teacher-forced loss: the decoder reads `target[..T-1]` and is scored
/// against `target[1..]`.
pub fn sequence_loss_batch(
    tape: &mut Tape,
    pv: &ParamVars,
    hidden_dim: usize,
    inputs: &[&[usize]],
    targets: &[&[usize]],
) -> Result<BatchLoss> {
    if inputs.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if let Some(short) = targets.iter().find(|t| t.len() < 2) {
        return Err(Error::Contract(format!(
            "target sequence needs at least 2 tokens, got {}",
            short.len()
        )));
    }
    let enc = encode_batch(tape, pv, hidden_dim, inputs)?;
    let batch = inputs.len();
    let steps = targets.iter().map(|t| t.len() - 1).max().expect("non-empty batch");
    let mut h = enc.final_state;
    let mut total: Option<Var> = None;
    let mut per_pair = vec![0.0; batch];
    for t in 0..steps {
        let prev: Vec<usize> = targets.iter().map(|s| if t + 1 < s.len() { s[t] } else { PAD }).collect();
        let next: Vec<usize> = targets.iter().map(|s| if t + 1 < s.len() { s[t + 1] } else { PAD }).collect();
        let weights: Vec<f64> = targets
            .iter()
            .map(|s| {
                if t + 1 < s.len() {
                    1.0 / ((s.len() - 1) * batch) as f64
                } else {
                    0.0
                }
            })
            .collect();
        let step = decode_step(tape, pv, &prev, h, &enc)?;
        h = step.hidden;
        let ce = tape.cross_entropy(step.logits, &next)?;
        for (b, (acc, &ce_b)) in per_pair.iter_mut().zip(tape.value(ce).data()).enumerate() {
            if t + 1 < targets[b].len() {
                *acc += ce_b / (targets[b].len() - 1) as f64;
            }
        }
        let w = tape.constant(Tensor::vector(weights));
        let weighted = tape.mul(ce, w)?;
        let step_loss = tape.sum(weighted)?;
        total = Some(match total {
            None => step_loss,
            Some(acc) => tape.add(acc, step_loss)?,
        });
    }
    Ok(BatchLoss {
        loss: total.expect("at least one decode step"),
        per_pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    fn desk_dims() -> ModelDims {
        ModelDims::new(9, 7, 4, 6)
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let p = GruParams::zeros(3, 4);
        let mut tape = Tape::new();
        let gv = register_gru(&mut tape, &p);
        let x = tape.constant(Tensor::new(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap());
        let h = tape.constant(Tensor::new(vec![1, 4], vec![1.0, -2.0, 0.5, 4.0]).unwrap());
        let out = gru_step(&mut tape, &gv, x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.5, -1.0, 0.25, 2.0]);

        let h0 = tape.constant(Tensor::zeros(&[1, 4]));
        let out = gru_step(&mut tape, &gv, x, h0).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 4]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padded_batch_matches_individual_sequences() {
        let params = ModelParams::init(desk_dims(), 11).unwrap();
        let inputs: [&[usize]; 3] = [&[1, 4, 5, 2], &[1, 6, 2], &[1, 7, 8, 4, 5, 2]];
        let targets: [&[usize]; 3] = [&[1, 4, 2], &[1, 5, 6, 2], &[1, 4, 2]];

        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &params);
        let batched = sequence_loss_batch(&mut tape, &pv, 6, &inputs, &targets).unwrap();
        let batched_grads = tape.backward(batched.loss).unwrap();

        let mut mean = 0.0;
        let mut summed: Option<Vec<Tensor>> = None;
        for (i, (inp, tgt)) in inputs.iter().zip(&targets).enumerate() {
            let mut tape = Tape::new();
            let pv = ParamVars::register(&mut tape, &params);
            let single = sequence_loss_batch(&mut tape, &pv, 6, &[inp], &[tgt]).unwrap();
            let v = tape.value(single.loss).item().unwrap();
            assert!((v - batched.per_pair[i]).abs() < 1e-12);
            mean += v / 3.0;
            let g = tape.backward(single.loss).unwrap().into_tensors();
            summed = Some(match summed {
                None => g,
                Some(mut acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.axpy(1.0, b).unwrap();
                    }
                    acc
                }
            });
        }
        assert!((tape.value(batched.loss).item().unwrap() - mean).abs() < 1e-12);
        for (b, s) in batched_grads.into_tensors().iter().zip(summed.unwrap()) {
            let mut s = s;
            s.scale_in_place(1.0 / 3.0);
            assert!(b.max_abs_diff(&s).unwrap() < 1e-12);
        }
    }

    #[test]
    fn short_target_is_rejected() {
        let params = ModelParams::init(desk_dims(), 1).unwrap();
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, &params);
        let res = sequence_loss_batch(&mut tape, &pv, 6, &[&[1, 4, 2]], &[&[1]]);
        assert!(matches!(res, Err(Error::Contract(_))));
    }
}
