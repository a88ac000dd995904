//! Latency injection and environment construction from string ids.
//!
//! Id grammar: a base env followed by `+`-separated wrappers.
//!
//! ```text
//! chain:6+timelimit:20
//! cartpole+timelimit:200+latency:2
//! chain:4+latency:1,5
//! ```

use std::thread;
use std::time::Duration;

use rlforge_core::env::{Action, CartPole, ChainMdp, Env, EnvError, EnvSpec, StepResult, TimeLimit};
use rlforge_core::rng::derive_seed;
use rlforge_core::SplitMix64;

pub type BoxEnv = Box<dyn Env + Send>;

/// Per-step delay in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delay {
    Constant(f64),
    Uniform(f64, f64),
}

impl Delay {
    pub fn parse(s: &str) -> Result<Self, String> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| format!("bad delay `{t}`"))
        };
        match s.split_once(',') {
            None => Ok(Delay::Constant(num(s)?)),
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("delay range {a},{b} is reversed"));
                }
                Ok(Delay::Uniform(a, b))
            }
        }
    }

    fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match *self {
            Delay::Constant(c) => c,
            Delay::Uniform(a, b) => rng.uniform(a, b),
        }
    }
}

/// Blocks for a sampled duration on every step. Delays are drawn from a
/// generator seeded at each reset, so a seed fixes the whole delay sequence.
pub struct LatencyEnv<E> {
    inner: E,
    delay: Delay,
    rng: SplitMix64,
}

impl<E: Env> LatencyEnv<E> {
    pub fn new(inner: E, delay: Delay) -> Self {
        Self {
            inner,
            delay,
            rng: SplitMix64::new(0),
        }
    }

    pub fn delay(&self) -> Delay {
        self.delay
    }

    /// The next `n` delays without sleeping, for inspection.
    pub fn peek_delays(&self, n: usize) -> Vec<f64> {
        let mut r = self.rng;
        (0..n).map(|_| self.delay.sample(&mut r)).collect()
    }
}

impl<E: Env> Env for LatencyEnv<E> {
    fn spec(&self) -> EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = SplitMix64::new(derive_seed(seed, 0x1a7e));
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let ms = self.delay.sample(&mut self.rng);
        if ms > 0.0 {
            thread::sleep(Duration::from_secs_f64(ms / 1000.0));
        }
        self.inner.step(action)
    }

    fn snapshot(&self) -> Vec<u64> {
        let mut s = vec![self.rng.seed(), self.rng.counter()];
        s.extend(self.inner.snapshot());
        s
    }

    fn restore(&mut self, state: &[u64]) -> Result<(), EnvError> {
        if state.len() < 2 {
            return Err(EnvError::InvalidSnapshot("latency state too short".into()));
        }
        self.inner.restore(&state[2..])?;
        self.rng = SplitMix64::from_parts(state[0], state[1]);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Base {
    Chain(usize),
    CartPole,
}

#[derive(Debug, Clone, PartialEq)]
enum Wrapper {
    TimeLimit(usize),
    Latency(Delay),
}

/// A parsed environment id.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvId {
    base: Base,
    wrappers: Vec<Wrapper>,
}

impl EnvId {
    pub fn parse(id: &str) -> Result<Self, String> {
        let mut parts = id.split('+');
        let head = parts.next().unwrap_or("").trim();
        let base = match head.split_once(':') {
            Some(("chain", l)) => {
                let l: usize = l.parse().map_err(|_| format!("bad chain length `{l}`"))?;
                if l < 2 {
                    return Err("chain length must be >= 2".into());
                }
                Base::Chain(l)
            }
            None if head == "cartpole" => Base::CartPole,
            _ => return Err(format!("unknown environment `{head}`")),
        };
        let mut wrappers = Vec::new();
        for w in parts {
            let w = w.trim();
            wrappers.push(match w.split_once(':') {
                Some(("timelimit", n)) => {
                    let n: usize = n.parse().map_err(|_| format!("bad time limit `{n}`"))?;
                    if n == 0 {
                        return Err("time limit must be >= 1".into());
                    }
                    Wrapper::TimeLimit(n)
                }
                Some(("latency", d)) => Wrapper::Latency(Delay::parse(d)?),
                _ => return Err(format!("unknown wrapper `{w}`")),
            });
        }
        Ok(Self { base, wrappers })
    }

    /// Replace (or add) the latency wrapper.
    pub fn with_latency(mut self, delay: Delay) -> Self {
        self.wrappers.retain(|w| !matches!(w, Wrapper::Latency(_)));
        self.wrappers.push(Wrapper::Latency(delay));
        self
    }

    pub fn build(&self) -> BoxEnv {
        let mut env: BoxEnv = match self.base {
            Base::Chain(l) => Box::new(ChainMdp::new(l).expect("validated")),
            Base::CartPole => Box::new(CartPole::new()),
        };
        for w in &self.wrappers {
            env = match *w {
                Wrapper::TimeLimit(n) => Box::new(TimeLimit::new(env, n).expect("validated")),
                Wrapper::Latency(d) => Box::new(LatencyEnv::new(env, d)),
            };
        }
        env
    }
}
