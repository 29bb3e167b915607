//! Reference forward pass in double-double arithmetic (about 32 significant
//! digits), written independently of the tape. Central differences of an
//! O(1) loss evaluated in plain f64 carry ~1e-11 of rounding noise at
//! ε = 1e-5, which swamps gradients near 1e-8; evaluated here the noise is
//! gone and only the O(ε²) truncation term remains.

use std::ops::{Add, Div, Mul, Neg, Sub};

use fedattn::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    fn ldexp(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi < -700.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        // |r| ≤ ln2/2, then scaled down so the series converges in a few terms.
        let r = (self - LN2 * Dd::from(k)).ldexp(-10);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..30 {
            term = term * r / Dd::from(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    pub fn ln(self) -> Self {
        assert!(self.hi > 0.0, "ln of {}", self.hi);
        let mut x = Dd::from(self.hi.ln());
        for _ in 0..2 {
            x = x + self * (-x).exp() - Dd::ONE;
        }
        x
    }

    pub fn tanh(self) -> Self {
        let neg = self.hi < 0.0;
        let a = if neg { -self } else { self };
        let e = (-(a + a)).exp();
        let t = (Dd::ONE - e) / (Dd::ONE + e);
        if neg {
            -t
        } else {
            t
        }
    }

    pub fn sigmoid(self) -> Self {
        Dd::ONE / (Dd::ONE + (-self).exp())
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

/// Row-major matrix of `rows × cols`; rank-1 tensors are `1 × n`.
#[derive(Clone)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Dd>,
}

impl Mat {
    fn row(&self, i: usize) -> &[Dd] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// `x W` for a row vector `x`.
fn vec_mat(x: &[Dd], w: &Mat) -> Vec<Dd> {
    assert_eq!(x.len(), w.rows);
    (0..w.cols)
        .map(|j| x.iter().enumerate().fold(Dd::ZERO, |acc, (i, &xi)| acc + xi * w.data[i * w.cols + j]))
        .collect()
}

fn add(a: &[Dd], b: &[Dd]) -> Vec<Dd> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// Parameters as double-double matrices in canonical order.
pub fn lift(params: &ModelParams) -> Vec<Mat> {
    params
        .tensors()
        .into_iter()
        .map(|t| {
            let (rows, cols) = match t.shape() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                s => panic!("unexpected shape {s:?}"),
            };
            Mat {
                rows,
                cols,
                data: t.data().iter().map(|&x| Dd::from(x)).collect(),
            }
        })
        .collect()
}

struct Gru<'a> {
    w: [&'a Mat; 3],
    u: [&'a Mat; 3],
    b: [&'a Mat; 3],
}

impl Gru<'_> {
    fn step(&self, x: &[Dd], h: &[Dd]) -> Vec<Dd> {
        let gate = |k: usize, hh: &[Dd]| add(&add(&vec_mat(x, self.w[k]), &vec_mat(hh, self.u[k])), &self.b[k].data);
        let z: Vec<Dd> = gate(0, h).into_iter().map(Dd::sigmoid).collect();
        let r: Vec<Dd> = gate(1, h).into_iter().map(Dd::sigmoid).collect();
        let rh: Vec<Dd> = r.iter().zip(h).map(|(&a, &b)| a * b).collect();
        let cand: Vec<Dd> = gate(2, &rh).into_iter().map(Dd::tanh).collect();
        (0..h.len())
            .map(|i| (Dd::ONE - z[i]) * h[i] + z[i] * cand[i])
            .collect()
    }
}

fn gru(p: &[Mat], first: usize) -> Gru<'_> {
    Gru {
        w: [&p[first], &p[first + 1], &p[first + 2]],
        u: [&p[first + 3], &p[first + 4], &p[first + 5]],
        b: [&p[first + 6], &p[first + 7], &p[first + 8]],
    }
}

/// Teacher-forced mean cross-entropy of one pair: encoder GRU from zero,
/// decoder GRU from the final encoder state, additive attention scored with
/// the new decoder state, `tanh([c; h] W_c)` then the output projection.
pub fn sequence_loss(p: &[Mat], input: &[usize], target: &[usize]) -> Dd {
    let (emb_in, emb_out) = (&p[0], &p[1]);
    let (enc, dec) = (gru(p, 2), gru(p, 11));
    let (w1, w2, v, wc, out) = (&p[20], &p[21], &p[22], &p[23], &p[24]);
    let hidden = p[5].rows;

    let mut h = vec![Dd::ZERO; hidden];
    let mut states = Vec::new();
    for &id in input {
        h = enc.step(emb_in.row(id), &h);
        states.push(h.clone());
    }
    let keys: Vec<Vec<Dd>> = states.iter().map(|s| vec_mat(s, w2)).collect();

    let steps = target.len() - 1;
    let mut total = Dd::ZERO;
    for t in 0..steps {
        h = dec.step(emb_out.row(target[t]), &h);
        let query = vec_mat(&h, w1);
        let scores: Vec<Dd> = keys
            .iter()
            .map(|k| {
                add(&query, k)
                    .into_iter()
                    .zip(&v.data)
                    .fold(Dd::ZERO, |acc, (a, &vv)| acc + a.tanh() * vv)
            })
            .collect();
        let max = scores.iter().map(|s| s.hi).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<Dd> = scores.iter().map(|&s| (s - Dd::from(max)).exp()).collect();
        let z = exps.iter().fold(Dd::ZERO, |acc, &e| acc + e);
        let mut context = vec![Dd::ZERO; hidden];
        for (e, s) in exps.iter().zip(&states) {
            let alpha = *e / z;
            for (c, &x) in context.iter_mut().zip(s) {
                *c = *c + alpha * x;
            }
        }
        let joined: Vec<Dd> = context.iter().chain(&h).copied().collect();
        let attn: Vec<Dd> = vec_mat(&joined, wc).into_iter().map(Dd::tanh).collect();
        let logits = vec_mat(&attn, out);
        let max = logits.iter().map(|s| s.hi).fold(f64::NEG_INFINITY, f64::max);
        let lse = logits
            .iter()
            .fold(Dd::ZERO, |acc, &l| acc + (l - Dd::from(max)).exp())
            .ln()
            + Dd::from(max);
        total = total + lse - logits[target[t + 1]];
    }
    total / Dd::from(steps as f64)
}
