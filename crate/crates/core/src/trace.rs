//! Per-iteration run records and their CSV form.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::model::ModelVector;

/// State after `t` iterations: θ̄^t, L(θ̄^t) and the counts of the
/// iteration that produced it (zero for t = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub loss: f64,
    pub theta: ModelVector,
    pub enrolled: usize,
    pub removed_total: usize,
    /// Samples drawn by each client in that iteration (0 when idle).
    pub n_per_client: Vec<usize>,
}

impl TraceRow {
    pub fn n_total(&self) -> usize {
        self.n_per_client.iter().sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Elapsed wall time at each row; not part of trace equality.
    pub wall_time: Vec<Duration>,
}

impl PartialEq for RunTrace {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
    }
}

impl RunTrace {
    pub fn push(&mut self, row: TraceRow, elapsed: Duration) -> Result<()> {
        if !row.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at t = {}", row.t)));
        }
        self.rows.push(row);
        self.wall_time.push(elapsed);
        Ok(())
    }

    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_theta(&self) -> Option<&ModelVector> {
        self.rows.last().map(|r| &r.theta)
    }

    pub fn total_samples(&self) -> usize {
        self.rows.iter().map(TraceRow::n_total).sum()
    }

    pub fn total_removed(&self) -> usize {
        self.rows.iter().map(|r| r.removed_total).sum()
    }

    /// First t whose loss is within `tol` (relative) of the final loss and
    /// stays there.
    pub fn convergence_iteration(&self, tol: f64) -> usize {
        let fin = self.final_loss();
        let band = tol * fin.abs().max(1e-12);
        let mut first = self.rows.last().map_or(0, |r| r.t);
        for r in self.rows.iter().rev() {
            if (r.loss - fin).abs() <= band {
                first = r.t;
            } else {
                break;
            }
        }
        first
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.theta.dim())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dim();
        let k = self.rows.first().map_or(0, |r| r.n_per_client.len());
        let mut header = vec!["t".to_string(), "loss".to_string()];
        header.extend((0..d).map(|j| format!("theta_{j}")));
        header.extend(["enrolled", "removed_total", "n_total"].map(String::from));
        header.extend((0..k).map(|i| format!("n_{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.t.to_string(), r.loss.to_string()];
            rec.extend(r.theta.coords().iter().map(f64::to_string));
            rec.push(r.enrolled.to_string());
            rec.push(r.removed_total.to_string());
            rec.push(r.n_total().to_string());
            rec.extend(r.n_per_client.iter().map(usize::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a trace CSV written by [`RunTrace::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.clone();
        let d = header.iter().filter(|h| h.starts_with("theta_")).count();
        let k = header
            .iter()
            .filter(|h| h.strip_prefix("n_").is_some_and(|i| i.parse::<usize>().is_ok()))
            .count();
        if header.len() != d + k + 5 {
            return Err(Error::config("trace header does not match the expected layout"));
        }
        let mut trace = RunTrace::default();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| {
                    Error::config(format!("trace row {}: bad number `{}`", line + 1, &rec[i]))
                })
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].parse::<usize>().map_err(|_| {
                    Error::config(format!("trace row {}: bad integer `{}`", line + 1, &rec[i]))
                })
            };
            let theta = (0..d).map(|j| num(2 + j)).collect::<Result<Vec<_>>>()?;
            let n_per_client = (0..k).map(|i| int(5 + d + i)).collect::<Result<Vec<_>>>()?;
            if n_per_client.iter().sum::<usize>() != int(4 + d)? {
                return Err(Error::config(format!(
                    "trace row {}: n_total disagrees with the per-client sizes",
                    line + 1
                )));
            }
            trace.rows.push(TraceRow {
                t: int(0)?,
                loss: num(1)?,
                theta: ModelVector::from(theta),
                enrolled: int(2 + d)?,
                removed_total: int(3 + d)?,
                n_per_client,
            });
            trace.wall_time.push(Duration::ZERO);
        }
        Ok(trace)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: usize, loss: f64) -> TraceRow {
        TraceRow {
            t,
            loss,
            theta: ModelVector::from(vec![0.1 * t as f64, 1.0 / 3.0]),
            enrolled: 2,
            removed_total: t,
            n_per_client: vec![10, 20],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut tr = RunTrace::default();
        for t in 0..5 {
            tr.push(row(t, -4.0 + 1.0 / (t as f64 + 3.0)), Duration::ZERO)
                .unwrap();
        }
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,loss,theta_0,theta_1,enrolled,removed_total,n_total,n_0,n_1\n"));
        let back = RunTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, tr);
        for (a, b) in tr.rows.iter().zip(&back.rows) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
    }

    #[test]
    fn rejects_inconsistent_totals() {
        let text = "t,loss,theta_0,enrolled,removed_total,n_total,n_0,n_1\n0,1.5,0.2,2,0,31,10,20\n";
        let err = RunTrace::read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("n_total"), "{err}");
    }

    #[test]
    fn rejects_non_finite_loss() {
        let mut tr = RunTrace::default();
        assert!(tr.push(row(0, f64::NAN), Duration::ZERO).is_err());
    }

    #[test]
    fn convergence_iteration_finds_the_tail() {
        let mut tr = RunTrace::default();
        for (t, l) in [10.0, 5.0, 2.0, 1.005, 1.0].into_iter().enumerate() {
            tr.push(row(t, l), Duration::ZERO).unwrap();
        }
        assert_eq!(tr.convergence_iteration(0.01), 3);
    }
}
