use std::collections::HashSet;
use std::io::{Read, Write};

use super::{normalize_name, SymptomDiseasePair};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ParsedCsv {
    pub pairs: Vec<SymptomDiseasePair>,
    /// Symptom column names in header order.
    pub symptom_columns: Vec<String>,
    /// Rows dropped because no symptom cell was set.
    pub skipped_rows: usize,
}

/// Parses a one-hot table: a header of symptom columns followed by the
/// disease label column, then one `0`/`1` row per example. Row and column
/// numbers in errors are 1-based file coordinates (the header is row 1).
pub fn parse_onehot_csv<R: Read>(reader: R) -> Result<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Format {
            row: 1,
            column: header.len(),
            message: "need at least one symptom column and a disease column".into(),
        });
    }
    let symptom_columns: Vec<String> = header
        .iter()
        .take(header.len() - 1)
        .map(normalize_name)
        .collect();
    let mut seen = HashSet::new();
    for (i, name) in symptom_columns.iter().enumerate() {
        if name.is_empty() || !seen.insert(name) {
            return Err(Error::Format {
                row: 1,
                column: i + 1,
                message: format!("empty or duplicate symptom column {name:?}"),
            });
        }
    }

    let mut pairs = Vec::new();
    let mut skipped_rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Format {
                row,
                column: record.len(),
                message: format!("expected {} fields", header.len()),
            });
        }
        let mut symptoms = Vec::new();
        for (j, cell) in record.iter().take(header.len() - 1).enumerate() {
            match cell {
                "1" => symptoms.push(symptom_columns[j].clone()),
                "0" => {}
                other => {
                    return Err(Error::Format {
                        row,
                        column: j + 1,
                        message: format!("non-binary cell {other:?}"),
                    })
                }
            }
        }
        let disease = normalize_name(&record[header.len() - 1]);
        if disease.is_empty() {
            return Err(Error::Format {
                row,
                column: header.len(),
                message: "missing disease label".into(),
            });
        }
        if symptoms.is_empty() {
            skipped_rows += 1;
            continue;
        }
        pairs.push(SymptomDiseasePair { symptoms, disease });
    }
    if skipped_rows > 0 {
        log::warn!("skipped {skipped_rows} rows without any symptom");
    }
    Ok(ParsedCsv {
        pairs,
        symptom_columns,
        skipped_rows,
    })
}

/// Writes pairs as a one-hot table over `columns`, label column `prognosis`.
pub fn write_onehot_csv<W: Write>(writer: W, columns: &[String], pairs: &[SymptomDiseasePair]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = columns.iter().map(String::as_str).collect();
    header.push("prognosis");
    wtr.write_record(&header)?;
    for pair in pairs {
        let present: HashSet<&str> = pair.symptoms.iter().map(String::as_str).collect();
        let mut row: Vec<&str> = columns
            .iter()
            .map(|c| if present.contains(c.as_str()) { "1" } else { "0" })
            .collect();
        row.push(&pair.disease);
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_set_columns_in_header_order() {
        let csv = "s1,s2,s3,disease\n1,0,1,flu\n";
        let parsed = parse_onehot_csv(csv.as_bytes()).unwrap();
        assert_eq!(parsed.pairs.len(), 1);
        assert_eq!(parsed.pairs[0].symptoms, vec!["s1", "s3"]);
        assert_eq!(parsed.pairs[0].disease, "flu");
        assert_eq!(parsed.skipped_rows, 0);
    }

    #[test]
    fn empty_rows_are_skipped_and_counted() {
        let csv = "s1,s2,s3,disease\n0,0,0,flu\n0,1,0,cold\n";
        let parsed = parse_onehot_csv(csv.as_bytes()).unwrap();
        assert_eq!(parsed.skipped_rows, 1);
        assert_eq!(parsed.pairs.len(), 1);
    }

    #[test]
    fn non_binary_cell_reports_position() {
        let csv = "s1,s2,disease\n1,0,flu\n1,2,flu\n";
        match parse_onehot_csv(csv.as_bytes()) {
            Err(Error::Format { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn whitespace_in_names_is_normalized() {
        let csv = "skin rash, itching ,prognosis\n1,1,Fungal infection\n";
        let parsed = parse_onehot_csv(csv.as_bytes()).unwrap();
        assert_eq!(parsed.symptom_columns, vec!["skin_rash", "itching"]);
        assert_eq!(parsed.pairs[0].disease, "Fungal_infection");
    }

    #[test]
    fn write_then_parse_round_trips() {
        let cols: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let pairs = vec![
            SymptomDiseasePair::new(vec!["a".into(), "c".into()], "x").unwrap(),
            SymptomDiseasePair::new(vec!["b".into()], "y").unwrap(),
        ];
        let mut buf = Vec::new();
        write_onehot_csv(&mut buf, &cols, &pairs).unwrap();
        let parsed = parse_onehot_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed.pairs, pairs);
        assert_eq!(parsed.symptom_columns, cols);
    }
}
