//! CSV output helpers. All emitted files are RFC-4180 with a header row;
//! the writer comes from the `csv` crate, which handles quoting.

use std::path::Path;

use crate::error::{Result, ToolError};

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)
        .map_err(|e| ToolError::Config(format!("csv write: {e}")))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(ToolError::Config(format!(
                "csv row width {} does not match header width {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row)
            .map_err(|e| ToolError::Config(format!("csv write: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV produced by `write_csv` back into header + string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| ToolError::Config(format!("csv read: {e}")))?;
    let header = r
        .headers()
        .map_err(|e| ToolError::Config(format!("csv read: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ToolError::Config(format!("csv read: {e}")))?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok((header, rows))
}

/// Loads an exported routing-plan CSV and validates that the permutation
/// column is a bijection on 0..L.
pub fn read_plan_csv(path: &Path) -> Result<Vec<(usize, usize, usize, usize)>> {
    let (header, rows) = read_csv(path)?;
    if header != ["row", "col", "label", "perm_index"] {
        return Err(ToolError::Config(format!(
            "unexpected plan header {header:?}"
        )));
    }
    let mut out = Vec::with_capacity(rows.len());
    for row in &rows {
        let parse = |i: usize| -> Result<usize> {
            row[i]
                .parse()
                .map_err(|_| ToolError::Config(format!("bad plan value {:?}", row[i])))
        };
        out.push((parse(0)?, parse(1)?, parse(2)?, parse(3)?));
    }
    let l = out.len();
    let mut seen = vec![false; l];
    for &(_, _, _, p) in &out {
        if p >= l || seen[p] {
            return Err(ToolError::Config(format!(
                "perm_index column is not a permutation of 0..{l}"
            )));
        }
        seen[p] = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![
            vec!["1".to_string(), "plain".to_string()],
            vec!["2".to_string(), "has,comma and \"quote\"".to_string()],
        ];
        write_csv(&p, &["id", "text"], &rows).unwrap();
        let (header, back) = read_csv(&p).unwrap();
        assert_eq!(header, ["id", "text"]);
        assert_eq!(back, rows);
    }

    #[test]
    fn width_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![vec!["only-one".to_string()]];
        assert!(write_csv(&p, &["a", "b"], &rows).is_err());
    }

    #[test]
    fn plan_loader_validates_permutation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.csv");
        let good = vec![
            vec!["0".into(), "0".into(), "1".into(), "1".into()],
            vec!["0".into(), "1".into(), "0".into(), "0".into()],
        ];
        write_csv(&p, &["row", "col", "label", "perm_index"], &good).unwrap();
        assert_eq!(read_plan_csv(&p).unwrap().len(), 2);
        let bad = vec![
            vec!["0".into(), "0".into(), "1".into(), "1".into()],
            vec!["0".into(), "1".into(), "0".into(), "1".into()],
        ];
        write_csv(&p, &["row", "col", "label", "perm_index"], &bad).unwrap();
        assert!(read_plan_csv(&p).is_err());
    }
}
