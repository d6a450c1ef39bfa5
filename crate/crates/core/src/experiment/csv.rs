use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "wall_time_s,learner_steps,actor_steps,eval_return_mean,eval_return_std,critic_loss_mean,actor_objective_mean,snapshot_version";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub wall_time_s: f64,
    pub learner_steps: u64,
    pub actor_steps: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub critic_loss_mean: f64,
    pub actor_objective_mean: f64,
    pub snapshot_version: u64,
}

impl EvalRecord {
    pub fn to_row(&self) -> String {
        format!(
            "{:.3},{},{},{},{},{},{},{}",
            self.wall_time_s,
            self.learner_steps,
            self.actor_steps,
            self.eval_return_mean,
            self.eval_return_std,
            self.critic_loss_mean,
            self.actor_objective_mean,
            self.snapshot_version
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(Error::Load(format!("expected 8 columns, found {}", f.len())));
        }
        let real = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Load(format!("column {i}: `{}` is not a finite number", f[i])))
        };
        let int = |i: usize| -> Result<u64> {
            f[i].parse()
                .map_err(|_| Error::Load(format!("column {i}: `{}` is not an integer", f[i])))
        };
        Ok(Self {
            wall_time_s: real(0)?,
            learner_steps: int(1)?,
            actor_steps: int(2)?,
            eval_return_mean: real(3)?,
            eval_return_std: real(4)?,
            critic_loss_mean: real(5)?,
            actor_objective_mean: real(6)?,
            snapshot_version: int(7)?,
        })
    }
}

/// Append-only metrics log with a fixed header.
pub struct CsvLog {
    file: File,
}

impl CsvLog {
    /// Create a fresh log, truncating any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{CSV_HEADER}")?;
        file.flush()?;
        Ok(Self { file })
    }

    /// Continue an existing log after a resume, dropping rows past `learner_steps`.
    pub fn resume(path: &Path, learner_steps: u64) -> Result<Self> {
        let mut kept = Vec::new();
        if path.exists() {
            read_rows(path)?;
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines().skip(1) {
                let line = line?;
                if EvalRecord::parse_row(&line)?.learner_steps <= learner_steps {
                    kept.push(line);
                }
            }
        }
        let mut log = Self::create(path)?;
        for line in kept {
            writeln!(log.file, "{line}")?;
        }
        log.file.flush()?;
        Ok(log)
    }

    pub fn append(&mut self, record: &EvalRecord) -> Result<()> {
        writeln!(self.file, "{}", record.to_row())?;
        self.file.flush()?;
        Ok(())
    }
}

/// Read and validate a metrics log.
pub fn read_rows(path: &Path) -> Result<Vec<EvalRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(h)) if h == CSV_HEADER => {}
        _ => return Err(Error::Load(format!("{}: missing or wrong CSV header", path.display()))),
    }
    lines
        .map(|l| EvalRecord::parse_row(&l?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64) -> EvalRecord {
        EvalRecord {
            wall_time_s: 1.25,
            learner_steps: step,
            actor_steps: 4 * step,
            eval_return_mean: 812.5,
            eval_return_std: 3.0,
            critic_loss_mean: 0.1,
            actor_objective_mean: 55.5,
            snapshot_version: step / 10,
        }
    }

    #[test]
    fn rows_round_trip() {
        let r = record(500);
        assert_eq!(EvalRecord::parse_row(&r.to_row()).unwrap(), r);
        assert!(EvalRecord::parse_row("1,2,3").is_err());
        assert!(EvalRecord::parse_row("NaN,1,1,1,1,1,1,1").is_err());
    }

    #[test]
    fn resume_truncates_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut log = CsvLog::create(&path).unwrap();
        for s in [100, 200, 300] {
            log.append(&record(s)).unwrap();
        }
        drop(log);
        let mut log = CsvLog::resume(&path, 200).unwrap();
        log.append(&record(250)).unwrap();
        let rows = read_rows(&path).unwrap();
        let steps: Vec<u64> = rows.iter().map(|r| r.learner_steps).collect();
        assert_eq!(steps, vec![100, 200, 250]);
    }
}
