mod common;

use std::path::Path;

use common::{venv, FixedPolicy};
use rlforge::checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_VERSION};
use rlforge::collector::{evaluate, CollectTarget, Collector};
use rlforge::config::{Algo, PolicyKind, RunConfig};
use rlforge::logger::MemorySink;
use rlforge::trainer::{encode_policy_state, load_policy_state, CollectUnit, Paradigm, TrainError, Trainer};
use rlforge::vector_env::EnvMode;
use rlforge_core::replay::{encode_buffer, Layout, ReplayView, VectorReplayBuffer};
use rlforge_core::wire::{WireError, Writer};

fn q_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.vector.num_envs = 2;
    c.vector.mode = EnvMode::Pooled;
    c.trainer.max_epoch = 2;
    c.trainer.steps_per_epoch = 400;
    c.trainer.eval_interval = 10;
    c.trainer.eval_episodes = 3;
    c.policy.eps_decay_steps = 400;
    c
}

fn reinforce_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.env = "cartpole+timelimit:50".into();
    c.vector.num_envs = 2;
    c.policy.kind = PolicyKind::LinearSoftmax;
    c.policy.learning_rate = 0.01;
    c.policy.gamma = 0.99;
    c.trainer.paradigm = Paradigm::OnPolicy;
    c.trainer.collect_unit = CollectUnit::Episodes;
    c.trainer.collect_per_iter = 2;
    c.trainer.max_epoch = 2;
    c.trainer.steps_per_epoch = 300;
    c.trainer.eval_interval = 3;
    c.trainer.eval_episodes = 2;
    c
}

/// Always-advance rollouts on the default chain, stored as a TSBF file.
fn expert_dataset(path: &Path) -> Vec<u8> {
    let mut c = Collector::new(venv("chain:6+timelimit:20", 2, EnvMode::Dummy), 0);
    let mut buf = VectorReplayBuffer::new(400, 2, Layout::discrete(6)).unwrap();
    c.collect(&mut FixedPolicy::advance(6), Some(&mut buf), CollectTarget::Steps(200), true).unwrap();
    let bytes = encode_buffer(&buf);
    std::fs::write(path, &bytes).unwrap();
    bytes
}

#[test]
fn on_policy_buffer_is_cleared_after_each_update() {
    let mut t = reinforce_config().build_trainer(None).unwrap();
    let mut last = 0;
    while !t.is_finished() {
        t.iterate().unwrap();
        assert_eq!(t.buffer().len(), 0);
        assert!(t.env_steps() > last);
        last = t.env_steps();
    }
    // One step per minibatch, at least one per update.
    assert!(t.update_steps() >= t.iteration());
}

#[test]
fn off_policy_buffer_grows_and_updates_follow_warmup() {
    let cfg = q_config();
    let mut t = cfg.build_trainer(None).unwrap();
    let warmup = 4 * cfg.trainer.batch_size;
    let mut prev = 0;
    let mut expected_updates = 0;
    for _ in 0..40 {
        t.iterate().unwrap();
        let len = t.buffer().len();
        assert!(len >= prev);
        assert_eq!(len as u64, t.env_steps());
        if len >= warmup {
            expected_updates += cfg.trainer.update_per_collect;
        }
        assert_eq!(t.update_steps(), expected_updates);
        prev = len;
    }
}

#[test]
fn unreachable_low_stop_score_stops_after_first_eval() {
    let mut cfg = q_config();
    cfg.trainer.stop_score = Some(f64::NEG_INFINITY);
    let r = cfg.build_trainer(None).unwrap().run().unwrap();
    assert!(r.stopped_early);
    assert_eq!(r.evals.len(), 1);
    assert_eq!(r.iterations, cfg.trainer.eval_interval);
}

#[test]
fn evaluation_schedule_and_epochs() {
    let cfg = q_config();
    let r = cfg.build_trainer(None).unwrap().run().unwrap();
    assert!(!r.stopped_early);
    assert_eq!(r.env_steps, 800);
    assert_eq!(r.iterations, 100);
    let its: Vec<u64> = r.evals.iter().map(|e| e.iteration).collect();
    assert_eq!(its, (1..=10).map(|k| 10 * k).collect::<Vec<_>>());
    assert!(r.evals.iter().all(|e| e.returns.len() == 3));
    assert_eq!(r.epochs.len(), 2);
    assert_eq!(r.epochs[0].env_steps, 400);
    let best = r.evals.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.best_score, Some(best));
}

#[test]
fn time_breakdown_sums_to_hundred() {
    for cfg in [q_config(), reinforce_config()] {
        let b = cfg.build_trainer(None).unwrap().run().unwrap().time_breakdown;
        let parts = [b.collecting, b.updating, b.evaluating, b.others];
        assert!(parts.iter().all(|p| (0.0..=100.0).contains(p)), "{b:?}");
        assert!((parts.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }
}

#[test]
fn offline_behavior_cloning_never_collects() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("expert.tsbf");
    let bytes = expert_dataset(&data);
    let mut cfg = RunConfig::default();
    cfg.policy.kind = PolicyKind::LinearSoftmax;
    cfg.policy.algo = Algo::Bc;
    cfg.policy.learning_rate = 0.5;
    cfg.trainer.paradigm = Paradigm::Offline;
    cfg.trainer.max_epoch = 1;
    cfg.trainer.steps_per_epoch = 200;
    cfg.trainer.eval_interval = 50;
    cfg.buffer.dataset = data.display().to_string();
    let mut t = cfg.build_trainer(None).unwrap();
    let r = t.run().unwrap();
    assert_eq!(r.env_steps, 0);
    assert_eq!(r.update_steps, 200);
    assert_eq!(r.time_breakdown.collecting, 0.0);
    assert_eq!(encode_buffer(t.buffer()), bytes);
    assert_eq!(std::fs::read(&data).unwrap(), bytes);
    assert_eq!(r.evals.last().unwrap().mean, 1.0);
}

#[test]
fn offline_needs_a_dataset() {
    let mut cfg = q_config();
    cfg.trainer.paradigm = Paradigm::Offline;
    cfg.buffer.dataset = "/nonexistent/data.tsbf".into();
    assert!(cfg.build_trainer(None).is_err());
}

fn assert_same_run(a: &mut Trainer, b: &mut Trainer) {
    let ra = a.report();
    let rb = b.report();
    assert_eq!(ra.evals, rb.evals);
    assert_eq!(ra.epochs, rb.epochs);
    assert_eq!((ra.env_steps, ra.update_steps, ra.iterations), (rb.env_steps, rb.update_steps, rb.iterations));
    assert_eq!(encode_policy_state(a.policy()), encode_policy_state(b.policy()));
    assert_eq!(encode_buffer(a.buffer()), encode_buffer(b.buffer()));
}

#[test]
fn resume_mid_run_matches_uninterrupted_run() {
    for (cfg, k) in [(q_config(), 23), (reinforce_config(), 5)] {
        let dir = tempfile::tempdir().unwrap();
        let mut full = cfg.build_trainer(None).unwrap();
        full.run().unwrap();

        let mut first = cfg.build_trainer(None).unwrap();
        first.run_until(k).unwrap();
        let ck = dir.path().join("mid.tsck");
        first.save_checkpoint(&ck).unwrap();
        drop(first);

        let mut resumed = cfg.build_trainer(None).unwrap();
        resumed.resume(&ck).unwrap();
        assert_eq!(resumed.iteration(), k);
        assert!(!resumed.is_finished());
        resumed.run().unwrap();
        assert_same_run(&mut full, &mut resumed);
        assert_eq!(full.best_policy(), resumed.best_policy());
    }
}

#[test]
fn resume_from_epoch_zero_matches_fresh_run() {
    let cfg = q_config();
    let mut fresh = cfg.build_trainer(None).unwrap();
    fresh.run().unwrap();
    let mut t = cfg.build_trainer(None).unwrap();
    let c = t.checkpoint().unwrap();
    let mut resumed = cfg.build_trainer(None).unwrap();
    resumed.restore(&c).unwrap();
    resumed.run().unwrap();
    assert_same_run(&mut fresh, &mut resumed);
}

#[test]
fn checkpoint_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = q_config();
    cfg.trainer.checkpoint_interval = 30;
    let mut t = cfg.build_trainer(Some(dir.path().to_path_buf())).unwrap();
    let r = t.run().unwrap();
    for f in ["best.tsck", "latest.tsck", "final.tsck"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(r.best_checkpoint.as_deref(), Some(dir.path().join("best.tsck").to_str().unwrap()));
    let fin = Checkpoint::load(&dir.path().join("final.tsck")).unwrap();
    let names: Vec<&str> = fin.names().collect();
    for s in ["manifest", "policy", "trainer", "collector", "buffer", "buffer.episodes", "best_policy"] {
        assert!(names.contains(&s), "{s} missing from {names:?}");
    }
    let best = Checkpoint::load(&dir.path().join("best.tsck")).unwrap();
    assert_eq!(best.get("policy"), t.best_policy());
}

#[test]
fn version_mismatch_is_rejected() {
    let mut t = q_config().build_trainer(None).unwrap();
    let mut w = Writer::with_header(b"TSCK", CHECKPOINT_VERSION + 1);
    w.u32(0);
    assert!(matches!(
        Checkpoint::decode(&w.finish()),
        Err(CheckpointError::Format(WireError::VersionMismatch { .. }))
    ));
    let mut bytes = t.checkpoint().unwrap().encode();
    let n = bytes.len();
    bytes[n / 2] ^= 0x40;
    assert!(matches!(
        Checkpoint::decode(&bytes),
        Err(CheckpointError::Format(WireError::ChecksumMismatch { .. }))
    ));
}

#[test]
fn failed_restore_leaves_trainer_untouched() {
    let cfg = q_config();
    let mut src = cfg.build_trainer(None).unwrap();
    src.run_until(15).unwrap();
    let mut c = src.checkpoint().unwrap();
    c.insert("buffer", vec![1, 2, 3]);
    let mut t = cfg.build_trainer(None).unwrap();
    t.run_until(5).unwrap();
    let before = encode_policy_state(t.policy());
    assert!(t.restore(&c).is_err());
    assert_eq!(t.iteration(), 5);
    assert_eq!(encode_policy_state(t.policy()), before);

    let other = reinforce_config().build_trainer(None).unwrap().checkpoint().unwrap();
    assert!(matches!(t.restore(&other), Err(TrainError::State(_))));
}

#[test]
fn metrics_reach_the_sink_in_step_order() {
    use std::sync::{Arc, Mutex};
    struct Shared(Arc<Mutex<MemorySink>>);
    impl rlforge::logger::MetricSink for Shared {
        fn record(&mut self, e: u64, u: u64, m: &str, v: f64) -> std::io::Result<()> {
            self.0.lock().unwrap().record(e, u, m, v)
        }
    }
    let sink = Arc::new(Mutex::new(MemorySink::default()));
    let mut t = q_config().build_trainer(None).unwrap().with_sink(Box::new(Shared(sink.clone())));
    let r = t.run().unwrap();
    let recs = &sink.lock().unwrap().records;
    assert!(recs.windows(2).all(|w| w[0].env_step <= w[1].env_step && w[0].update_step <= w[1].update_step));
    let evals: Vec<f64> = recs.iter().filter(|r| r.metric == "eval/mean").map(|r| r.value).collect();
    assert_eq!(evals, r.evals.iter().map(|e| e.mean).collect::<Vec<_>>());
}

#[test]
fn policy_must_fit_paradigm() {
    let mut cfg = reinforce_config();
    cfg.trainer.paradigm = Paradigm::OffPolicy;
    assert!(cfg.validate().is_err());
}

#[test]
fn best_checkpoint_reproduces_best_score() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = q_config();
    let r = cfg.build_trainer(Some(dir.path().to_path_buf())).unwrap().run().unwrap();
    let best = Checkpoint::load(&dir.path().join("best.tsck")).unwrap();
    let spec = cfg.env_spec().unwrap();
    let mut p = cfg.build_policy(&spec).unwrap();
    load_policy_state(&mut *p, best.require("policy").unwrap()).unwrap();
    let mut ev = cfg.build_eval_venv().unwrap();
    let tc = cfg.trainer_config(None);
    let s = evaluate(&*p, &mut ev, tc.eval_episodes, tc.eval_seed, tc.eval_explore).unwrap();
    assert_eq!(Some(s.mean_return()), r.best_score);
}
