//! Encoder–attention–decoder model: parameter containers, initialization,
//! graph construction on a [`Tape`](crate::tensor::Tape), and the
//! tensor-level inference entry points.

mod api;
pub mod graph;

pub use api::{
    argmax, attend, attention_score, decode_step, encode, greedy_decode, AttentionOutput, Decoded,
    DecoderState, EncoderOutput,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_in: usize,
    pub vocab_out: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
}

impl ModelDims {
    /// Dimensions with `attention_dim == hidden_dim`.
    pub fn new(vocab_in: usize, vocab_out: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            vocab_in,
            vocab_out,
            embed_dim,
            hidden_dim,
            attention_dim: hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.vocab_in,
            self.vocab_out,
            self.embed_dim,
            self.hidden_dim,
            self.attention_dim,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.vocab_in <= crate::tokens::UNK || self.vocab_out <= crate::tokens::UNK {
            return Err(Error::Config(
                "vocabularies must include the 4 reserved tokens".into(),
            ));
        }
        Ok(())
    }
}

/// Named size presets. `Paper` is the full-size configuration; `Desk` is
/// small enough to train on a laptop CPU in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    /// `(embed_dim, hidden_dim)`.
    pub fn sizes(self) -> (usize, usize) {
        match self {
            Preset::Desk => (32, 128),
            Preset::Paper => (256, 1024),
        }
    }

    pub fn dims(self, vocab_in: usize, vocab_out: usize) -> ModelDims {
        let (e, h) = self.sizes();
        ModelDims::new(vocab_in, vocab_out, e, h)
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected desk or paper)"))),
        }
    }
}

/// Gate weights of one GRU cell. `w_*` act on the input, `u_*` on the
/// previous hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[input_dim, hidden]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z,
            &self.b_r, &self.b_h,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

pub const PARAM_COUNT: usize = 25;

/// Tensor names in canonical order. Serialization, aggregation and the
/// optimizer all walk parameters in this order.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "input_embedding",
    "output_embedding",
    "encoder.w_z",
    "encoder.w_r",
    "encoder.w_h",
    "encoder.u_z",
    "encoder.u_r",
    "encoder.u_h",
    "encoder.b_z",
    "encoder.b_r",
    "encoder.b_h",
    "decoder.w_z",
    "decoder.w_r",
    "decoder.w_h",
    "decoder.u_z",
    "decoder.u_r",
    "decoder.u_h",
    "decoder.b_z",
    "decoder.b_r",
    "decoder.b_h",
    "attn_w1",
    "attn_w2",
    "attn_v",
    "attn_wc",
    "out_proj",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub input_embedding: Tensor,
    pub output_embedding: Tensor,
    pub encoder_gru: GruParams,
    pub decoder_gru: GruParams,
    pub attn_w1: Tensor,
    pub attn_w2: Tensor,
    pub attn_v: Tensor,
    pub attn_wc: Tensor,
    pub out_proj: Tensor,
}

fn expected_shapes(d: &ModelDims) -> [Vec<usize>; PARAM_COUNT] {
    let (e, h, a) = (d.embed_dim, d.hidden_dim, d.attention_dim);
    let gru = [
        vec![e, h],
        vec![e, h],
        vec![e, h],
        vec![h, h],
        vec![h, h],
        vec![h, h],
        vec![h],
        vec![h],
        vec![h],
    ];
    let mut out: Vec<Vec<usize>> = vec![vec![d.vocab_in, e], vec![d.vocab_out, e]];
    out.extend(gru.iter().cloned());
    out.extend(gru.iter().cloned());
    out.extend([vec![h, a], vec![h, a], vec![a], vec![2 * h, h], vec![h, d.vocab_out]]);
    out.try_into().expect("25 shapes")
}

fn is_bias(name: &str) -> bool {
    name.contains(".b_")
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let shapes = expected_shapes(&dims);
        let tensors = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Self::from_tensors(dims, tensors).expect("shapes are consistent by construction")
    }

    /// Glorot-uniform weights drawn from the `init` sub-stream of `seed`;
    /// biases are zero.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = rng::stream(seed, rng::INIT);
        let mut params = Self::zeros(dims);
        for (name, tensor) in PARAM_NAMES.iter().zip(params.tensors_mut()) {
            if is_bias(name) {
                continue;
            }
            let (fan_in, fan_out) = match tensor.shape() {
                [n] => (*n, 1),
                [r, c] => (*r, *c),
                _ => unreachable!("parameters are rank 1 or 2"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in tensor.data_mut() {
                *x = rng.gen_range(-limit..limit);
            }
        }
        Ok(params)
    }

    /// Rebuilds parameters from tensors in [`PARAM_NAMES`] order.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != PARAM_COUNT {
            return Err(Error::Contract(format!(
                "expected {PARAM_COUNT} parameter tensors, got {}",
                tensors.len()
            )));
        }
        for ((name, shape), t) in PARAM_NAMES.iter().zip(expected_shapes(&dims)).zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Contract(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        // Field evaluation order follows PARAM_NAMES.
        let input_embedding = next();
        let output_embedding = next();
        let mut gru = || GruParams {
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
        let encoder_gru = gru();
        let decoder_gru = gru();
        Ok(Self {
            dims,
            input_embedding,
            output_embedding,
            encoder_gru,
            decoder_gru,
            attn_w1: next(),
            attn_w2: next(),
            attn_v: next(),
            attn_wc: next(),
            out_proj: next(),
        })
    }

    pub fn tensors(&self) -> [&Tensor; PARAM_COUNT] {
        let e = self.encoder_gru.tensors();
        let d = self.decoder_gru.tensors();
        [
            &self.input_embedding,
            &self.output_embedding,
            e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8],
            d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8],
            &self.attn_w1,
            &self.attn_w2,
            &self.attn_v,
            &self.attn_wc,
            &self.out_proj,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(PARAM_COUNT);
        out.push(&mut self.input_embedding);
        out.push(&mut self.output_embedding);
        out.extend(self.encoder_gru.tensors_mut());
        out.extend(self.decoder_gru.tensors_mut());
        out.push(&mut self.attn_w1);
        out.push(&mut self.attn_w2);
        out.push(&mut self.attn_v);
        out.push(&mut self.attn_wc);
        out.push(&mut self.out_proj);
        out
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.into_iter().zip(self.tensors())
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Same dims and bitwise-identical tensors.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.bitwise_eq(b))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::Contract("parameter dims differ".into()));
        }
        let mut worst = 0.0f64;
        for (a, b) in self.tensors().iter().zip(other.tensors()) {
            worst = worst.max(a.max_abs_diff(b)?);
        }
        Ok(worst)
    }

    /// All values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims::new(9, 7, 3, 5)
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::init(dims(), 1).unwrap();
        assert!(a.bitwise_eq(&ModelParams::init(dims(), 1).unwrap()));
        assert!(!a.bitwise_eq(&ModelParams::init(dims(), 2).unwrap()));
    }

    #[test]
    fn biases_start_at_zero_and_weights_within_glorot_limit() {
        let p = ModelParams::init(dims(), 3).unwrap();
        for (name, t) in p.named() {
            if is_bias(name) {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
                continue;
            }
            let (fan_in, fan_out) = match t.shape() {
                [n] => (*n, 1),
                [r, c] => (*r, *c),
                _ => unreachable!(),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            assert!(t.data().iter().all(|x| x.abs() <= limit), "{name}");
            assert!(t.data().iter().any(|&x| x != 0.0), "{name}");
        }
    }

    #[test]
    fn from_tensors_checks_count_and_shapes() {
        let p = ModelParams::init(dims(), 4).unwrap();
        let mut tensors = p.clone().into_tensors();
        assert!(ModelParams::from_tensors(dims(), tensors.clone()).unwrap().bitwise_eq(&p));
        tensors[23] = Tensor::zeros(&[5, 5]);
        assert!(matches!(ModelParams::from_tensors(dims(), tensors.clone()), Err(Error::Contract(m)) if m.contains("attn_wc")));
        tensors.pop();
        assert!(ModelParams::from_tensors(dims(), tensors).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(Preset::Desk.dims(50, 45), ModelDims::new(50, 45, 32, 128));
        assert_eq!(Preset::Paper.dims(50, 45).hidden_dim, 1024);
        assert_eq!("desk".parse::<Preset>().unwrap(), Preset::Desk);
    }
}
