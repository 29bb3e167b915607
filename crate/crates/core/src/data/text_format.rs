use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::SymptomDiseasePair;
use crate::error::{Error, Result};

/// Reads `symptom symptom ...<TAB>disease` lines. Blank lines are ignored.
pub fn parse_text_pairs<R: Read>(reader: R) -> Result<Vec<SymptomDiseasePair>> {
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((lhs, rhs)) = line.split_once('\t') else {
            return Err(Error::Format {
                row: i + 1,
                column: 1,
                message: "expected a TAB between symptoms and disease".into(),
            });
        };
        let symptoms = lhs.split_whitespace().map(str::to_owned).collect();
        let pair = SymptomDiseasePair::new(symptoms, rhs.trim()).map_err(|e| Error::Format {
            row: i + 1,
            column: 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn read_text_pairs(path: &Path) -> Result<Vec<SymptomDiseasePair>> {
    parse_text_pairs(File::open(path).map_err(crate::Error::file(path))?)
}

pub fn write_text_pairs<W: Write>(mut writer: W, pairs: &[SymptomDiseasePair]) -> Result<()> {
    for pair in pairs {
        writeln!(writer, "{}\t{}", pair.symptoms.join(" "), pair.disease)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fixture_lines() {
        let text = "cough fever\tflu\n\nitching\tallergy\n";
        let pairs = parse_text_pairs(text.as_bytes()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].symptoms, vec!["cough", "fever"]);
        assert_eq!(pairs[1].disease, "allergy");
    }

    #[test]
    fn missing_tab_is_a_format_error() {
        assert!(matches!(
            parse_text_pairs("cough fever flu\n".as_bytes()),
            Err(Error::Format { row: 1, .. })
        ));
    }

    #[test]
    fn written_pairs_parse_back() {
        let pairs = vec![SymptomDiseasePair::new(vec!["a".into(), "b".into()], "d").unwrap()];
        let mut buf = Vec::new();
        write_text_pairs(&mut buf, &pairs).unwrap();
        assert_eq!(parse_text_pairs(buf.as_slice()).unwrap(), pairs);
    }
}
