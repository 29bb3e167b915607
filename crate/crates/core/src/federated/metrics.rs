//! Per-round metrics as CSV: `round,client_id,train_loss,test_loss,sample_count`.
//!
//! Each round has one row per client, a `global` row with the aggregated
//! model scored on the pooled sets, and a `client_mean` row averaging the
//! clients' own losses.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::run::{ClientMetrics, RoundMetrics};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const GLOBAL_ROW: &str = "global";
pub const CLIENT_MEAN_ROW: &str = "client_mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub client_id: String,
    pub train_loss: f64,
    pub test_loss: f64,
    pub sample_count: usize,
}

pub fn metrics_rows(history: &[RoundMetrics]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for m in history {
        for c in &m.clients {
            rows.push(MetricsRow {
                round: m.round_index,
                client_id: c.client_id.to_string(),
                train_loss: c.train_loss,
                test_loss: c.test_loss,
                sample_count: c.sample_count,
            });
        }
        let total = m.clients.iter().map(|c| c.sample_count).sum();
        rows.push(MetricsRow {
            round: m.round_index,
            client_id: GLOBAL_ROW.into(),
            train_loss: m.global_train_loss,
            test_loss: m.global_test_loss,
            sample_count: total,
        });
        rows.push(MetricsRow {
            round: m.round_index,
            client_id: CLIENT_MEAN_ROW.into(),
            train_loss: m.clients_mean_train_loss(),
            test_loss: m.clients_mean_test_loss(),
            sample_count: total,
        });
    }
    rows
}

pub fn write_metrics_csv(writer: impl Write, history: &[RoundMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in metrics_rows(history) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_metrics_csv`]. Derived `client_mean` rows are skipped.
pub fn read_metrics_csv(reader: impl Read) -> Result<Vec<RoundMetrics>> {
    let mut rounds: BTreeMap<usize, (Vec<ClientMetrics>, Option<(f64, f64)>)> = BTreeMap::new();
    for (i, row) in csv::Reader::from_reader(reader).deserialize::<MetricsRow>().enumerate() {
        let row = row?;
        let entry = rounds.entry(row.round).or_default();
        match row.client_id.as_str() {
            GLOBAL_ROW => entry.1 = Some((row.train_loss, row.test_loss)),
            CLIENT_MEAN_ROW => {}
            id => {
                let client_id = id.parse().map_err(|_| Error::Format {
                    row: i + 2,
                    column: 2,
                    message: format!("bad client id {id:?}"),
                })?;
                entry.0.push(ClientMetrics {
                    client_id,
                    train_loss: row.train_loss,
                    test_loss: row.test_loss,
                    sample_count: row.sample_count,
                });
            }
        }
    }
    rounds
        .into_iter()
        .map(|(round_index, (clients, global))| {
            let (global_train_loss, global_test_loss) =
                global.ok_or_else(|| Error::Contract(format!("round {round_index} has no global row")))?;
            Ok(RoundMetrics {
                round_index,
                clients,
                global_train_loss,
                global_test_loss,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history() -> Vec<RoundMetrics> {
        (1..=2)
            .map(|r| RoundMetrics {
                round_index: r,
                clients: (0..2)
                    .map(|k| ClientMetrics {
                        client_id: k,
                        train_loss: 0.1 * (r + k) as f64,
                        test_loss: 0.3,
                        sample_count: 800 + k,
                    })
                    .collect(),
                global_train_loss: 0.5 / r as f64,
                global_test_loss: 0.25,
            })
            .collect()
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &history()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("round,client_id,train_loss,test_loss,sample_count"));
        assert_eq!(text.lines().filter(|l| l.contains(",global,")).count(), 2);
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), history());
    }
}
