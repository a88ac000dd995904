//! Metric records: `logs.csv` holds `env_step,update_step,metric,value` and
//! stays byte-identical across repeated seeded runs; wall-clock stamps go
//! to a separate `walltime.csv`.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter};
use std::path::Path;
use std::time::Instant;

pub const LOG_HEADER: [&str; 4] = ["env_step", "update_step", "metric", "value"];

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub env_step: u64,
    pub update_step: u64,
    pub metric: String,
    pub value: f64,
}

pub trait MetricSink {
    fn record(&mut self, env_step: u64, update_step: u64, metric: &str, value: f64) -> io::Result<()>;

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps records in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<LogRecord>,
}

impl MetricSink for MemorySink {
    fn record(&mut self, env_step: u64, update_step: u64, metric: &str, value: f64) -> io::Result<()> {
        self.records.push(LogRecord {
            env_step,
            update_step,
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }
}

pub struct CsvLogger {
    logs: csv::Writer<BufWriter<File>>,
    wall: csv::Writer<BufWriter<File>>,
    start: Instant,
}

fn open(path: &Path, header: &[&str]) -> io::Result<csv::Writer<BufWriter<File>>> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    if fresh {
        w.write_record(header)?;
    }
    Ok(w)
}

impl CsvLogger {
    /// Open (or append to) `logs.csv` and `walltime.csv` in `dir`.
    pub fn open(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            logs: open(&dir.join("logs.csv"), &LOG_HEADER)?,
            wall: open(&dir.join("walltime.csv"), &["wall_clock", "env_step", "update_step", "metric"])?,
            start: Instant::now(),
        })
    }
}

impl MetricSink for CsvLogger {
    fn record(&mut self, env_step: u64, update_step: u64, metric: &str, value: f64) -> io::Result<()> {
        let (e, u) = (env_step.to_string(), update_step.to_string());
        self.logs.write_record([e.as_str(), u.as_str(), metric, &value.to_string()])?;
        let t = format!("{:.6}", self.start.elapsed().as_secs_f64());
        self.wall.write_record([t.as_str(), e.as_str(), u.as_str(), metric])?;
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.logs.flush()?;
        self.wall.flush()
    }
}

impl Drop for CsvLogger {
    fn drop(&mut self) {
        let _ = MetricSink::flush(self);
    }
}

/// Read `logs.csv` back.
pub fn read_logs(path: &Path) -> Result<Vec<LogRecord>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| row.get(i).unwrap_or("").to_string();
        let bad = |i: usize| csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, format!("bad field {i}")));
        out.push(LogRecord {
            env_step: num(0).parse().map_err(|_| bad(0))?,
            update_step: num(1).parse().map_err(|_| bad(1))?,
            metric: num(2),
            value: num(3).parse().map_err(|_| bad(3))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_without_repeating_header() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut l = CsvLogger::open(dir.path()).unwrap();
            l.record(0, 0, "eval/mean", 0.5).unwrap();
        }
        {
            let mut l = CsvLogger::open(dir.path()).unwrap();
            l.record(10, 2, "train/loss", 1e-3).unwrap();
        }
        let text = std::fs::read_to_string(dir.path().join("logs.csv")).unwrap();
        assert_eq!(text, "env_step,update_step,metric,value\n0,0,eval/mean,0.5\n10,2,train/loss,0.001\n");
        let recs = read_logs(&dir.path().join("logs.csv")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].value, 1e-3);
    }
}
