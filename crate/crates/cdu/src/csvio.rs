//! CSV datasets: comma separated, header line first, optional trailing
//! integer `label` column.

use std::io::{Read, Write};
use std::path::Path;

use cdu_core::streams::Dataset;
use cdu_core::Matrix;

use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "label";

pub fn load_csv(path: &Path, has_labels: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, has_labels).map_err(|e| e.context(path.display().to_string()))
}

/// Like [`load_csv`], treating a final `label` column as labels.
pub fn load_csv_auto(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = bytes.split(|b| *b == b'\n').next().unwrap_or_default();
    let has_labels = String::from_utf8_lossy(header)
        .trim_end()
        .rsplit(',')
        .next()
        .is_some_and(|last| last.trim() == LABEL_COLUMN);
    parse_csv(bytes.as_slice(), has_labels).map_err(|e| e.context(path.display().to_string()))
}

/// Parses CSV text. Row numbers in errors are 1-based data rows (the header
/// is row 0); columns are 1-based.
pub fn parse_csv<R: Read>(reader: R, has_labels: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Data("empty file".into()));
    }
    let n_features = if has_labels {
        if header.last().map(String::as_str) != Some(LABEL_COLUMN) {
            return Err(Error::Data(format!("expected final column `{LABEL_COLUMN}`")));
        }
        header.len() - 1
    } else {
        header.len()
    };
    if n_features == 0 {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "row {row}: expected {} columns, found {}",
                header.len(),
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate().take(n_features) {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "row {row}, column {}: cannot parse {cell:?} as a number",
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {row}, column {}: non-finite value", j + 1)));
            }
            data.push(v);
        }
        if has_labels {
            let cell = &record[n_features];
            let l: i64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "row {row}, column {}: cannot parse {cell:?} as an integer label",
                    n_features + 1
                ))
            })?;
            labels.push(l);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data("no data rows".into()));
    }
    let features = Matrix::from_vec(rows, n_features, data)?;
    let names = header[..n_features].to_vec();
    Ok(Dataset::new(features, has_labels.then_some(labels), Some(names))?)
}

pub fn save_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, data)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Values are written in Rust's shortest round-trip float format, so a
/// save/load cycle reproduces every bit.
pub fn write_csv<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let names: Vec<String> = match &data.feature_names {
        Some(n) => n.clone(),
        None => (0..data.dim()).map(|j| format!("x{j}")).collect(),
    };
    let mut header = names;
    if data.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    let csv_err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in data.features.iter_rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = &data.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv write failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn labels_parsed_as_integers() {
        let d = parse_csv("a,b,label\n1.5,2,3\n-1,0.25,7\n".as_bytes(), true).unwrap();
        assert_eq!(d.labels, Some(vec![3, 7]));
        assert_eq!(d.feature_names, Some(vec!["a".into(), "b".into()]));
        assert_eq!(d.features.row(1), &[-1.0, 0.25]);
    }

    #[test]
    fn errors_name_row_and_column() {
        let e = parse_csv("a,b\n1,2\n3,abc\n".as_bytes(), false).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");
        let e = parse_csv("a,b\n1,2\n3\n".as_bytes(), false).unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
        assert!(parse_csv("".as_bytes(), false).is_err());
        assert!(parse_csv("a,b\n".as_bytes(), false).is_err());
        assert!(parse_csv("a,b\n1,2\n".as_bytes(), true).is_err());
        assert!(parse_csv("a,label\n1,x\n".as_bytes(), true).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 4)) {
            let d = Dataset::new(Matrix::from_vec(2, 2, vals).unwrap(), None, None).unwrap();
            let mut buf = Vec::new();
            write_csv(&mut buf, &d).unwrap();
            let back = parse_csv(buf.as_slice(), false).unwrap();
            for (a, b) in back.features.as_slice().iter().zip(d.features.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
