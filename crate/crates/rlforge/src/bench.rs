//! Throughput of lock-step against asynchronous collection.

use std::time::Duration;

use serde::Serialize;

use crate::collector::{CollectError, CollectStats, CollectTarget, Collector};
use crate::config::{ConfigError, RunConfig};
use crate::vector_env::EnvMode;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeThroughput {
    pub mode: EnvMode,
    pub steps: u64,
    pub secs: f64,
    pub steps_per_sec: f64,
    pub per_env_step_counts: Vec<u64>,
}

impl ModeThroughput {
    fn from_stats(mode: EnvMode, s: &CollectStats) -> Self {
        let secs = s.wall_time.as_secs_f64();
        Self {
            mode,
            steps: s.n_collected_steps,
            secs,
            steps_per_sec: s.n_collected_steps as f64 / secs.max(1e-9),
            per_env_step_counts: s.per_env_step_counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub sync: ModeThroughput,
    #[serde(rename = "async")]
    pub asynchronous: ModeThroughput,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Collect(#[from] CollectError),
}

/// Collect for `duration` with pooled lock-step stepping, then again with
/// async stepping (`vector.async_min_ready` results per wait). Nothing is
/// stored; the policy is the config's freshly initialised one.
pub fn bench(cfg: &RunConfig, duration: Duration) -> Result<BenchReport, BenchError> {
    let spec = cfg.env_spec()?;
    let run = |mode: EnvMode| -> Result<ModeThroughput, BenchError> {
        let mut c = cfg.clone();
        c.vector.mode = mode;
        let mut policy = c.build_policy(&spec)?;
        let mut col = Collector::new(c.build_venv()?, c.collector_seed()).with_min_ready(c.vector.async_min_ready);
        let stats = col.collect_any(&mut *policy, None, CollectTarget::WallTime(duration), true)?;
        Ok(ModeThroughput::from_stats(mode, &stats))
    };
    Ok(BenchReport {
        sync: run(EnvMode::Pooled)?,
        asynchronous: run(EnvMode::Async)?,
    })
}
