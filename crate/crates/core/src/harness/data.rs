//! Tabular datasets for the static classification environment.

use std::path::Path;

use crate::config::SyntheticData;
use crate::env::Sample;
use crate::error::{Error, Result};
use crate::rng::{stream, StreamLabel, SERVER};

/// Feature rows with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                got: labels.len(),
                context: "dataset labels",
            });
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::config(format!(
                "dataset row {bad} has {} features, expected {}",
                rows[bad].len(),
                columns.len()
            )));
        }
        if labels.iter().any(|l| *l > 1) {
            return Err(Error::config("dataset labels must be 0 or 1"));
        }
        Ok(Dataset {
            columns,
            rows,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn features(&self, row: usize) -> &[f64] {
        &self.rows[row]
    }

    pub fn label(&self, row: usize) -> u8 {
        self.labels[row]
    }

    /// The row as a sample `[x…, y]`.
    pub fn sample(&self, row: usize) -> Sample {
        let mut z = self.rows[row].clone();
        z.push(f64::from(self.labels[row]));
        Sample::new(z)
    }

    /// Contiguous row ranges for `n` clients; sizes differ by at most one.
    pub fn shards(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        if n == 0 || n > self.len() {
            return Err(Error::config(format!(
                "cannot split {} rows into {n} shards",
                self.len()
            )));
        }
        let (base, extra) = (self.len() / n, self.len() % n);
        let mut start = 0;
        Ok((0..n)
            .map(|i| {
                let size = base + usize::from(i < extra);
                let shard = (start..start + size).collect();
                start += size;
                shard
            })
            .collect())
    }

    /// Centers every feature and scales it to unit variance. Constant
    /// columns are only centered.
    pub fn standardize(&mut self) {
        let n = self.len() as f64;
        if n == 0.0 {
            return;
        }
        for j in 0..self.num_features() {
            let mean = self.rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = self.rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for r in &mut self.rows {
                r[j] -= mean;
                if sd > 0.0 {
                    r[j] /= sd;
                }
            }
        }
    }
}

/// Reads a numeric CSV with a header. The label is the column named
/// `label`, or the last column when none is. Features are standardized.
pub fn ingest_csv(path: &Path) -> Result<Dataset> {
    let data_err = |message: String| Error::Data {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => data_err(format!("cannot open: {e}")),
            _ => Error::Csv(e),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 2 {
        return Err(data_err("need at least one feature column and a label column".into()));
    }
    let label_col = header
        .iter()
        .position(|h| h.eq_ignore_ascii_case("label"))
        .unwrap_or(header.len() - 1);
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row_no = k + 1;
        let record = record.map_err(|e| data_err(format!("data row {row_no}: {e}")))?;
        if record.len() != header.len() {
            return Err(data_err(format!(
                "data row {row_no} has {} fields, expected {}",
                record.len(),
                header.len()
            )));
        }
        let mut x = Vec::with_capacity(columns.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                data_err(format!("data row {row_no}, column `{}`: `{field}` is not a number", header[j]))
            })?;
            if !v.is_finite() {
                return Err(data_err(format!(
                    "data row {row_no}, column `{}`: non-finite value",
                    header[j]
                )));
            }
            if j == label_col {
                if v != 0.0 && v != 1.0 {
                    return Err(data_err(format!(
                        "data row {row_no}: label {v} is not binary (expected 0 or 1)"
                    )));
                }
                labels.push(v as u8);
            } else {
                x.push(v);
            }
        }
        rows.push(x);
    }
    if rows.is_empty() {
        return Err(data_err("no data rows".into()));
    }
    let mut data = Dataset::new(columns, rows, labels)?;
    data.standardize();
    Ok(data)
}

/// Balanced two-class Gaussian data: even rows are class 1 around
/// `class1_mean`, odd rows class 0 around `class0_mean`.
pub fn synthetic_dataset(spec: &SyntheticData, seed: u64) -> Result<Dataset> {
    if spec.rows < 2 || spec.dim == 0 || !(spec.sigma >= 0.0) {
        return Err(Error::config("synthetic data needs rows >= 2, dim >= 1 and sigma >= 0"));
    }
    let mut rng = stream(seed, SERVER, StreamLabel::Setup, 0);
    let mut rows = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    for i in 0..spec.rows {
        let y = u8::from(i % 2 == 0);
        let mean = if y == 1 { spec.class1_mean } else { spec.class0_mean };
        rows.push(
            (0..spec.dim)
                .map(|_| mean + spec.sigma * crate::env::normal(&mut rng))
                .collect(),
        );
        labels.push(y);
    }
    let columns = (0..spec.dim).map(|j| format!("x{j}")).collect();
    Dataset::new(columns, rows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_a_toy_file() {
        let f = write("a,b,label\n1,2,0\n2,4,1\n3,6,0\n4,8,1\n");
        let d = ingest_csv(f.path()).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.num_features(), 2);
        assert_eq!((0..4).map(|r| d.label(r)).collect::<Vec<_>>(), vec![0, 1, 0, 1]);
        let mean: f64 = (0..4).map(|r| d.features(r)[0]).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn nan_row_is_named() {
        let f = write("a,b,label\n1,2,0\n2,4,1\n3,NaN,0\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn non_binary_label_is_rejected() {
        let f = write("a,label\n1,0\n2,2\n");
        let err = ingest_csv(f.path()).unwrap_err().to_string();
        assert!(err.contains("not binary"), "{err}");
    }

    #[test]
    fn shards_are_even() {
        let d = Dataset::new(vec!["x".into()], vec![vec![0.0]; 2368], vec![0; 2368]).unwrap();
        let shards = d.shards(10).unwrap();
        assert_eq!(shards.len(), 10);
        assert!(shards.iter().all(|s| s.len() == 236 || s.len() == 237));
        assert_eq!(shards.iter().map(Vec::len).sum::<usize>(), 2368);
        assert!(d.shards(3000).is_err());
    }

    #[test]
    fn synthetic_is_balanced_and_seeded() {
        let spec = SyntheticData {
            rows: 100,
            dim: 2,
            class1_mean: -1.0,
            class0_mean: 1.0,
            sigma: 0.5,
        };
        let a = synthetic_dataset(&spec, 4).unwrap();
        assert_eq!(a, synthetic_dataset(&spec, 4).unwrap());
        assert_eq!((0..100).filter(|&r| a.label(r) == 1).count(), 50);
    }
}
