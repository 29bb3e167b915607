//! Attention-annotated predictions and their text rendering.

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{greedy_decode, ModelParams};
use crate::tokens::{END, RESERVED, START, UNK};

/// Attention matrix in the exported JSON layout: one row per output step,
/// one column per input token including `<start>` and `<end>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub input_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub report: AttentionReport,
    /// Predicted tokens without `<end>`.
    pub predicted: Vec<String>,
    pub unknown_symptoms: Vec<String>,
}

/// Greedy prediction for a list of symptom names. Unknown names become
/// `<unk>` and are listed in the result.
pub fn predict(params: &ModelParams, vocab: &Vocab, symptoms: &[String], max_len: usize) -> Result<Prediction> {
    if symptoms.is_empty() {
        return Err(Error::Config("no symptoms given".into()));
    }
    let mut input_ids = vec![START];
    let mut unknown_symptoms = Vec::new();
    for s in symptoms {
        let id = vocab.input.id_or_unk(s);
        if id == UNK {
            unknown_symptoms.push(s.clone());
        }
        input_ids.push(id);
    }
    input_ids.push(END);
    let decoded = greedy_decode(params, &input_ids, max_len)?;
    let out_name = |id: usize| vocab.output.token(id).unwrap_or(RESERVED[UNK]).to_owned();
    let predicted: Vec<String> = decoded.output_ids.iter().map(|&id| out_name(id)).collect();
    let steps = decoded.attention.shape()[0];
    let mut output_tokens = predicted.clone();
    if steps > output_tokens.len() {
        output_tokens.push(RESERVED[END].to_owned());
    }
    let input_tokens = input_ids
        .iter()
        .map(|&id| vocab.input.token(id).unwrap_or(RESERVED[UNK]).to_owned())
        .collect();
    let weights = (0..steps).map(|r| decoded.attention.row(r).map(|t| t.to_vec())).collect::<Result<_>>()?;
    Ok(Prediction {
        report: AttentionReport {
            input_tokens,
            output_tokens,
            weights,
        },
        predicted,
        unknown_symptoms,
    })
}

const RAMP: &[u8] = b" .:-=+*#%@";

fn shade(w: f64) -> char {
    let i = (w.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64).round() as usize;
    RAMP[i] as char
}

/// Text heatmap: rows are output tokens, columns input tokens. Each cell
/// shades its weight on a ten-step ramp; the largest weight of a row is
/// bracketed.
pub fn render_heatmap(report: &AttentionReport) -> String {
    let label_w = report.output_tokens.iter().map(String::len).max().unwrap_or(0).max(6);
    let col_w: Vec<usize> = report.input_tokens.iter().map(|t| t.len().max(3)).collect();
    let mut out = String::new();
    out.push_str(&format!("{:label_w$}", ""));
    for (t, w) in report.input_tokens.iter().zip(&col_w) {
        out.push_str(&format!(" {t:^w$}"));
    }
    out.push('\n');
    for (label, row) in report.output_tokens.iter().zip(&report.weights) {
        out.push_str(&format!("{label:label_w$}"));
        let best = crate::model::argmax(row);
        for (j, (&w, &cw)) in row.iter().zip(&col_w).enumerate() {
            let cell = if j == best {
                format!("[{}]", shade(w))
            } else {
                format!(" {} ", shade(w))
            };
            out.push_str(&format!(" {cell:^cw$}"));
        }
        out.push('\n');
    }
    out.push_str(&format!("scale: '{}' = 0 .. '@' = 1, [x] = row maximum\n", RAMP[0] as char));
    out
}

/// The `k` most attended symptoms for each output step, reserved tokens
/// excluded, highest first.
pub fn top_k(report: &AttentionReport, k: usize) -> Vec<(String, Vec<(String, f64)>)> {
    report
        .output_tokens
        .iter()
        .zip(&report.weights)
        .map(|(out, row)| {
            let mut cols: Vec<(String, f64)> = report
                .input_tokens
                .iter()
                .zip(row)
                .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
                .map(|(t, &w)| (t.clone(), w))
                .collect();
            cols.sort_by(|a, b| b.1.total_cmp(&a.1));
            cols.truncate(k);
            (out.clone(), cols)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> AttentionReport {
        AttentionReport {
            input_tokens: vec!["<start>".into(), "fever".into(), "cough".into(), "<end>".into()],
            output_tokens: vec!["flu".into(), "<end>".into()],
            weights: vec![vec![0.1, 0.6, 0.2, 0.1], vec![0.25, 0.25, 0.25, 0.25]],
        }
    }

    #[test]
    fn heatmap_marks_row_maximum() {
        let text = render_heatmap(&report());
        let flu = text.lines().find(|l| l.starts_with("flu")).unwrap();
        assert_eq!(flu.matches('[').count(), 1);
        assert!(flu.contains("[+]"));
        // Ties go to the first column.
        let end = text.lines().nth(2).unwrap();
        assert_eq!(end.matches("[:]").count(), 1);
        assert!(end.find("[:]").unwrap() < end.find(" : ").unwrap());
    }

    #[test]
    fn top_k_skips_reserved_tokens() {
        let t = top_k(&report(), 1);
        assert_eq!(t[0].1, vec![("fever".to_string(), 0.6)]);
    }

    #[test]
    fn json_layout() {
        let v = serde_json::to_value(report()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 3);
        assert!(v["weights"].is_array() && v["input_tokens"].is_array() && v["output_tokens"].is_array());
    }
}
