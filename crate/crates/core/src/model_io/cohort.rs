use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::Sex;

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub scan_id: String,
    pub subject_id: String,
    pub sex: Sex,
    /// Aligned with [`CohortTable::biomarkers`]; `None` marks a missing cell.
    pub values: Vec<Option<f64>>,
}

/// Scan-level subject, sex and biomarker records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortTable {
    pub biomarkers: Vec<String>,
    pub rows: Vec<CohortRow>,
    index: HashMap<String, usize>,
}

impl CohortTable {
    pub fn new(biomarkers: Vec<String>, rows: Vec<CohortRow>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.values.len() != biomarkers.len() {
                return Err(Error::DimensionMismatch {
                    expected: biomarkers.len(),
                    actual: row.values.len(),
                });
            }
            if row.values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite biomarker value for scan {}", row.scan_id)));
            }
            if index.insert(row.scan_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate scan_id {:?}", row.scan_id)));
            }
        }
        Ok(Self { biomarkers, rows, index })
    }

    pub fn get(&self, scan_id: &str) -> Option<&CohortRow> {
        self.index.get(scan_id).map(|&i| &self.rows[i])
    }

    pub fn biomarker_index(&self, name: &str) -> Option<usize> {
        self.biomarkers.iter().position(|b| b == name)
    }

    /// Value of `biomarker` for `scan_id`, `None` when the scan or the cell is missing.
    pub fn value(&self, scan_id: &str, biomarker: usize) -> Option<f64> {
        self.get(scan_id).and_then(|r| r.values[biomarker])
    }

    /// Fraction of rows with a value present for the named biomarker.
    pub fn completion(&self, name: &str) -> Option<f64> {
        let b = self.biomarker_index(name)?;
        if self.rows.is_empty() {
            return Some(0.0);
        }
        let present = self.rows.iter().filter(|r| r.values[b].is_some()).count();
        Some(present as f64 / self.rows.len() as f64)
    }

    /// `(name, completion)` for every biomarker, in column order.
    pub fn completion_report(&self) -> Vec<(String, f64)> {
        self.biomarkers
            .iter()
            .map(|b| (b.clone(), self.completion(b).unwrap_or(0.0)))
            .collect()
    }
}

/// Reads a cohort CSV with header `scan_id,subject_id,sex,<biomarker...>`.
/// Empty biomarker cells are missing values.
pub fn read_cohort(path: impl AsRef<Path>) -> Result<CohortTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 3 || header[0] != "scan_id" || header[1] != "subject_id" || header[2] != "sex" {
        return Err(Error::format(path, "header must start with scan_id,subject_id,sex"));
    }
    let biomarkers = header[3..].to_vec();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::format(path, format!("malformed row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(Error::format(path, format!("row {row}: expected {} fields, found {}", header.len(), record.len())));
        }
        let sex: Sex = record[2]
            .parse()
            .map_err(|_| Error::format(path, format!("row {row}: invalid sex {:?}", &record[2])))?;
        let mut values = Vec::with_capacity(biomarkers.len());
        for (j, cell) in record.iter().skip(3).enumerate() {
            if cell.is_empty() {
                values.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::format(path, format!("row {row}: invalid value {cell:?} for {}", biomarkers[j])))?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("row {row}: non-finite value for {}", biomarkers[j])));
            }
            values.push(Some(v));
        }
        rows.push(CohortRow {
            scan_id: record[0].to_string(),
            subject_id: record[1].to_string(),
            sex,
            values,
        });
    }
    CohortTable::new(biomarkers, rows).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_cohort(table: &CohortTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("scan_id,subject_id,sex");
    for b in &table.biomarkers {
        out.push(',');
        out.push_str(b);
    }
    out.push('\n');
    for r in &table.rows {
        out.push_str(&format!("{},{},{}", r.scan_id, r.subject_id, r.sex));
        for v in &r.values {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort_file(body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cohort.csv");
        fs::write(&p, body).unwrap();
        (dir, p)
    }

    #[test]
    fn completion_counts_missing_cells() {
        let (_d, p) = cohort_file("scan_id,subject_id,sex,glucose,crp\na,1,F,5.5,1\nb,2,M,,2\nc,3,F,6.1,\n");
        let t = read_cohort(&p).unwrap();
        assert_eq!(t.biomarkers, vec!["glucose", "crp"]);
        assert!((t.completion("glucose").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.value("b", 0), None);
        assert_eq!(t.value("c", 0), Some(6.1));
        assert_eq!(t.get("b").unwrap().sex, Sex::M);
    }

    #[test]
    fn rejects_duplicate_scan_id() {
        let (_d, p) = cohort_file("scan_id,subject_id,sex,g\na,1,F,1\na,2,F,2\n");
        assert!(read_cohort(&p).unwrap_err().to_string().contains("duplicate scan_id"));
    }

    #[test]
    fn rejects_invalid_sex() {
        let (_d, p) = cohort_file("scan_id,subject_id,sex,g\na,1,X,1\n");
        assert!(read_cohort(&p).unwrap_err().to_string().contains("invalid sex"));
    }

    #[test]
    fn write_then_read() {
        let (_d, p) = cohort_file("scan_id,subject_id,sex,g,h\na,1,F,0.1,\nb,2,M,,-3.25\n");
        let t = read_cohort(&p).unwrap();
        let q = p.with_file_name("copy.csv");
        write_cohort(&t, &q).unwrap();
        assert_eq!(read_cohort(&q).unwrap(), t);
    }
}
