use super::graph::{self, EncodedBatch, ParamVars};
use super::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::tokens::{END, START};

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// One hidden state per source token.
    pub states: Vec<Tensor>,
    pub final_state: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub weights: Tensor,
    pub context: Tensor,
    pub attn_vector: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    pub hidden: Tensor,
    pub prev_token: usize,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    /// Predicted tokens, `<end>` excluded.
    pub output_ids: Vec<usize>,
    /// `steps × S`; row `t` holds the attention weights of decode step `t`.
    pub attention: Tensor,
}

fn as_row(tape: &mut Tape, t: &Tensor) -> Result<crate::tensor::Var> {
    let row = t.reshape(vec![1, t.len()])?;
    Ok(tape.constant(row))
}

fn check_hidden(params: &ModelParams, t: &Tensor) -> Result<()> {
    if t.shape() != [params.dims.hidden_dim] {
        return Err(Error::dim("hidden state", t.shape(), &[params.dims.hidden_dim]));
    }
    Ok(())
}

fn load_encoded(tape: &mut Tape, pv: &ParamVars, params: &ModelParams, enc: &EncoderOutput) -> Result<EncodedBatch> {
    if enc.states.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut states = Vec::with_capacity(enc.states.len());
    let mut keys = Vec::with_capacity(enc.states.len());
    for s in &enc.states {
        check_hidden(params, s)?;
        let v = as_row(tape, s)?;
        keys.push(tape.matmul(v, pv.attn_w2)?);
        states.push(v);
    }
    check_hidden(params, &enc.final_state)?;
    let final_state = as_row(tape, &enc.final_state)?;
    Ok(EncodedBatch {
        lengths: vec![states.len()],
        states,
        keys,
        final_state,
    })
}

/// Runs the encoder GRU left to right from a zero state.
pub fn encode(params: &ModelParams, input_ids: &[usize]) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let enc = graph::encode_batch(&mut tape, &pv, params.dims.hidden_dim, &[input_ids])?;
    let states = enc
        .states
        .iter()
        .map(|&v| tape.value(v).row(0))
        .collect::<Result<_>>()?;
    Ok(EncoderOutput {
        states,
        final_state: tape.value(enc.final_state).row(0)?,
    })
}

/// Additive score of one source state against the decoder state.
pub fn attention_score(params: &ModelParams, h_t: &Tensor, h_s: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let enc = EncoderOutput {
        states: vec![h_s.clone()],
        final_state: h_s.clone(),
    };
    let enc = load_encoded(&mut tape, &pv, params, &enc)?;
    check_hidden(params, h_t)?;
    let query = as_row(&mut tape, h_t)?;
    let scores = graph::attention_scores(&mut tape, &pv, query, &enc)?;
    tape.value(scores).item()
}

pub fn attend(params: &ModelParams, h_t: &Tensor, enc: &EncoderOutput) -> Result<AttentionOutput> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let enc = load_encoded(&mut tape, &pv, params, enc)?;
    check_hidden(params, h_t)?;
    let query = as_row(&mut tape, h_t)?;
    let out = graph::attend(&mut tape, &pv, query, &enc)?;
    Ok(AttentionOutput {
        weights: tape.value(out.weights).row(0)?,
        context: tape.value(out.context).row(0)?,
        attn_vector: tape.value(out.attn_vector).row(0)?,
    })
}

pub fn decode_step(
    params: &ModelParams,
    state: &DecoderState,
    enc: &EncoderOutput,
) -> Result<(Tensor, DecoderState, AttentionOutput)> {
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let enc = load_encoded(&mut tape, &pv, params, enc)?;
    check_hidden(params, &state.hidden)?;
    let h_prev = as_row(&mut tape, &state.hidden)?;
    let step = graph::decode_step(&mut tape, &pv, &[state.prev_token], h_prev, &enc)?;
    let logits = tape.value(step.logits).row(0)?;
    let hidden = tape.value(step.hidden).row(0)?;
    let attn = AttentionOutput {
        weights: tape.value(step.attention.weights).row(0)?,
        context: tape.value(step.attention.context).row(0)?,
        attn_vector: tape.value(step.attention.attn_vector).row(0)?,
    };
    let prev_token = argmax(logits.data());
    Ok((logits, DecoderState { hidden, prev_token }, attn))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding from `<start>` until `<end>` or `max_len` steps.
pub fn greedy_decode(params: &ModelParams, input_ids: &[usize], max_len: usize) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let enc = graph::encode_batch(&mut tape, &pv, params.dims.hidden_dim, &[input_ids])?;
    let mut h = enc.final_state;
    let mut prev = START;
    let mut output_ids = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..max_len {
        let step = graph::decode_step(&mut tape, &pv, &[prev], h, &enc)?;
        h = step.hidden;
        rows.push(tape.value(step.attention.weights).to_vec());
        let token = argmax(tape.value(step.logits).data());
        if token == END {
            break;
        }
        output_ids.push(token);
        prev = token;
    }
    Ok(Decoded {
        output_ids,
        attention: Tensor::matrix(&rows)?,
    })
}
