mod oracle;

use oracle::{build, chi_square_p, random_log, transition, EpisodeLog, Step};
use proptest::prelude::*;
use rlforge_core::replay::{
    decode_buffer, encode_buffer, Layout, PrioritizedSampler, Reduction, ReplayError, ReplayView, SegmentTree,
    StepKind, VectorReplayBuffer,
};
use rlforge_core::wire::WireError;
use rlforge_core::SplitMix64;

fn check_against_oracle(buf: &VectorReplayBuffer, o: &EpisodeLog) -> Result<(), TestCaseError> {
    prop_assert_eq!(buf.ordered_indices(), o.order());
    prop_assert_eq!(buf.tail_index(), o.tails());
    for (idx, p, n) in o.neighbours() {
        prop_assert_eq!(buf.prev(idx).unwrap(), p, "prev({})", idx);
        prop_assert_eq!(buf.next(idx).unwrap(), n, "next({})", idx);
    }
    let rows: Vec<f64> = o.segments().iter().flatten().map(|r| r.rew).collect();
    if !rows.is_empty() {
        let (b, _) = buf.sample(0, &mut SplitMix64::new(0)).unwrap();
        prop_assert_eq!(b.array("rew").unwrap().as_f64().unwrap(), &rows[..]);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn log_replay_equivalence(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let n_envs = 1 + rng.below(4) as usize;
        let cap = 1 + rng.below(24) as usize;
        let log = random_log(&mut rng, n_envs, 200 / n_envs);
        let (buf, o) = build(&log, n_envs, cap);
        check_against_oracle(&buf, &o)?;
    }

    #[test]
    fn random_walks_stay_in_segment(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let n_envs = 1 + rng.below(4) as usize;
        let cap = 2 + rng.below(20) as usize;
        let log = random_log(&mut rng, n_envs, 60);
        let (buf, o) = build(&log, n_envs, cap);
        prop_assume!(!buf.is_empty());
        let segs = o.segments();
        let seg_of = |idx: usize| segs.iter().position(|s| s.iter().any(|r| r.idx == idx)).unwrap();
        let order = buf.ordered_indices();
        let mut cur = order[rng.below(order.len() as u64) as usize];
        let home = seg_of(cur);
        for _ in 0..50 {
            cur = if rng.next_f64() < 0.5 { buf.prev(cur).unwrap() } else { buf.next(cur).unwrap() };
            prop_assert_eq!(seg_of(cur), home);
        }
    }

    #[test]
    fn tsbf_round_trip(seed in any::<u64>(), prioritized in any::<bool>()) {
        let mut rng = SplitMix64::new(seed);
        let n_envs = 1 + rng.below(3) as usize;
        let cap = 1 + rng.below(10) as usize;
        let mut buf = VectorReplayBuffer::new(n_envs * cap, n_envs, Layout::discrete(1)).unwrap();
        if prioritized {
            buf = buf.with_prioritized(0.6, 0.4).unwrap();
        }
        for s in random_log(&mut rng, n_envs, 30) {
            let out = buf.add(&[transition(s, 1)]).unwrap();
            if prioritized && rng.next_f64() < 0.5 {
                buf.update_priority(&out.indices, &[0.01 + rng.next_f64() * 5.0]).unwrap();
            }
        }
        let bytes = encode_buffer(&buf);
        let mut back = decode_buffer(&bytes).unwrap();
        // Running-episode accumulators are rebuilt from stored rows, which
        // cannot see rows already overwritten; checkpoints carry them exactly.
        back.set_episode_accumulators(&buf.episode_accumulators()).unwrap();
        prop_assert_eq!(&back, &buf);
        prop_assert_eq!(encode_buffer(&back), bytes.clone());
        prop_assert_eq!(back.tail_index(), buf.tail_index());
        let i = rng.below(bytes.len() as u64) as usize;
        let mut bad = bytes;
        bad[i] ^= 1 << rng.below(8);
        let is_checksum_error = matches!(
            decode_buffer(&bad),
            Err(ReplayError::Format(WireError::ChecksumMismatch { .. }))
        );
        prop_assert!(is_checksum_error);
    }

    #[test]
    fn segment_tree_root_and_prefix_match_linear_scan(
        leaves in prop::collection::vec(0u32..100, 1..64),
        updates in prop::collection::vec((0usize..64, 0u32..100), 0..40),
        x_frac in 0.0f64..1.0,
    ) {
        let n = leaves.len();
        let mut vals: Vec<f64> = leaves.iter().map(|&v| v as f64).collect();
        let mut sum = SegmentTree::new(n, Reduction::Sum);
        let mut min = SegmentTree::new(n, Reduction::Min);
        for (i, &v) in vals.iter().enumerate() {
            sum.set(i, v);
            min.set(i, v);
        }
        for (i, v) in updates {
            let i = i % n;
            vals[i] = v as f64;
            sum.set(i, v as f64);
            min.set(i, v as f64);
        }
        prop_assert_eq!(sum.root(), vals.iter().sum::<f64>());
        prop_assert_eq!(min.root(), vals.iter().copied().fold(f64::INFINITY, f64::min));
        let total = sum.root();
        prop_assume!(total > 0.0);
        let x = x_frac * total;
        let mut acc = 0.0;
        let want = vals.iter().position(|v| { acc += v; acc > x }).unwrap();
        prop_assert_eq!(sum.find_prefix(x), want);
    }
}

#[test]
fn circular_overwrite_and_episode_stats() {
    let mut buf = VectorReplayBuffer::new(4, 1, Layout::discrete(1)).unwrap();
    let mut episodes = Vec::new();
    for k in 0..5 {
        let s = Step {
            env: 0,
            rew: 1.0,
            done: k == 2,
            truncated: false,
        };
        episodes.extend(buf.add(&[transition(s, 1)]).unwrap().episodes);
    }
    assert_eq!(buf.len(), 4);
    assert_eq!(episodes.len(), 1);
    assert_eq!((episodes[0].episode_return, episodes[0].episode_length), (3.0, 3));
    // Row 0 was overwritten; row 1 is now an orphan head.
    assert_eq!(buf.prev(1).unwrap(), 1);
    assert_eq!(buf.step_kind(2).unwrap(), StepKind::LastNatural);
    assert_eq!(buf.step_kind(0).unwrap(), StepKind::LastEdge);
}

#[test]
fn uniform_sampling_chi_square() {
    let log = random_log(&mut SplitMix64::new(5), 3, 20);
    let (buf, _) = build(&log, 3, 20);
    let n = buf.index_bound();
    let mut counts = vec![0u64; n];
    let mut rng = SplitMix64::new(77);
    for i in buf.sample_indices(100_000, &mut rng).unwrap() {
        counts[i] += 1;
    }
    let probs: Vec<f64> = (0..n)
        .map(|i| if buf.contains(i) { 1.0 / buf.len() as f64 } else { 0.0 })
        .collect();
    let p = chi_square_p(&counts, &probs);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn prioritized_frequencies_chi_square() {
    for (seed, alpha) in [(1u64, 0.6), (2, 1.0), (3, 0.0)] {
        let mut rng = SplitMix64::new(seed);
        let n = 17;
        let mut s = PrioritizedSampler::new(n, alpha, 0.4).unwrap();
        let pri: Vec<f64> = (0..n).map(|_| 0.1 + rng.next_f64() * 4.0).collect();
        for (i, &p) in pri.iter().enumerate() {
            s.insert(i);
            s.update(i, p).unwrap();
        }
        let z: f64 = pri.iter().map(|p| p.powf(alpha)).sum();
        let probs: Vec<f64> = pri.iter().map(|p| p.powf(alpha) / z).collect();
        for i in 0..n {
            assert!((s.probability(i) - probs[i]).abs() < 1e-12);
        }
        let mut counts = vec![0u64; n];
        for i in s.sample(100_000, &mut rng).unwrap() {
            counts[i] += 1;
        }
        let p = chi_square_p(&counts, &probs);
        assert!(p > 0.01, "alpha {alpha}: p = {p}");
        let w = s.weights(&(0..n).collect::<Vec<_>>());
        let wmax = w.iter().copied().fold(0.0, f64::max);
        assert!((wmax - 1.0).abs() < 1e-12);
    }
}

#[test]
fn prefix_search_on_random_float_trees() {
    let mut rng = SplitMix64::new(9);
    for _ in 0..1000 {
        let n = 1 + rng.below(50) as usize;
        let leaves: Vec<f64> = (0..n).map(|_| if rng.next_f64() < 0.2 { 0.0 } else { rng.next_f64() }).collect();
        let t = SegmentTree::from_leaves(&leaves, n, Reduction::Sum);
        let total: f64 = leaves.iter().sum();
        assert!((t.root() - total).abs() <= 1e-9 * total.max(1.0));
        if total == 0.0 {
            continue;
        }
        let x = rng.next_f64() * t.root();
        let mut acc = 0.0;
        let want = leaves.iter().position(|v| {
            acc += v;
            acc > x
        });
        assert_eq!(Some(t.find_prefix(x)), want, "leaves {leaves:?}, x {x}");
    }
}
