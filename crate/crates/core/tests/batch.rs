use proptest::prelude::*;
use rlforge_core::{Array, Batch, Entry};

/// A random nested structure: field paths with a trailing width each.
fn layout() -> impl Strategy<Value = Vec<(String, usize)>> {
    prop::collection::btree_map("[a-c](\\.[x-z]){0,2}", 1usize..4, 1..5).prop_map(|m| {
        // Drop paths that are a prefix of another path, which would make a
        // field both a leaf and a sub-batch.
        let keys: Vec<(String, usize)> = m.into_iter().collect();
        keys.iter()
            .filter(|(k, _)| !keys.iter().any(|(o, _)| o != k && o.starts_with(&format!("{k}."))))
            .cloned()
            .collect()
    })
}

fn build(layout: &[(String, usize)], rows: usize, offset: f64) -> Batch {
    let mut b = Batch::new();
    for (k, (path, w)) in layout.iter().enumerate() {
        let data: Vec<f64> = (0..rows * w).map(|i| offset + (k * 1000 + i) as f64).collect();
        insert(&mut b, path, Array::from_f64_rows(rows, *w, data).unwrap());
    }
    b
}

fn insert(b: &mut Batch, path: &str, a: Array) {
    match path.split_once('.') {
        None => {
            b.insert(path, a);
        }
        Some((head, rest)) => {
            let mut child = match b.remove(head) {
                Some(Entry::Batch(c)) => c,
                _ => Batch::new(),
            };
            insert(&mut child, rest, a);
            b.insert(head, child);
        }
    }
}

fn flat(b: &Batch) -> Vec<(String, Vec<f64>)> {
    b.leaves()
        .into_iter()
        .map(|(k, a)| (k, a.as_f64().unwrap().to_vec()))
        .collect()
}

proptest! {
    #[test]
    fn concat_matches_flatten_then_append(l in layout(), rows in prop::collection::vec(0usize..6, 1..5)) {
        let parts: Vec<Batch> = rows.iter().enumerate().map(|(i, &r)| build(&l, r, i as f64 * 1e6)).collect();
        let got = Batch::concat(&parts).unwrap();
        prop_assert_eq!(got.rows(), rows.iter().sum::<usize>());
        let mut want: Vec<(String, Vec<f64>)> = flat(&parts[0]).into_iter().map(|(k, _)| (k, Vec::new())).collect();
        for p in &parts {
            for (slot, (_, v)) in want.iter_mut().zip(flat(p)) {
                slot.1.extend(v);
            }
        }
        prop_assert_eq!(flat(&got), want);
    }

    #[test]
    fn split_then_concat_is_identity(l in layout(), rows in 0usize..20, size in 1usize..8, seed in any::<u64>()) {
        let b = build(&l, rows, 0.0);
        let chunks = b.split(size, false, seed).unwrap();
        prop_assert!(chunks.iter().all(|c| c.rows() <= size));
        if rows == 0 {
            prop_assert!(chunks.is_empty());
        } else {
            prop_assert_eq!(Batch::concat(&chunks).unwrap(), b.clone());
        }
        let s1 = b.split(size, true, seed).unwrap();
        let s2 = b.split(size, true, seed).unwrap();
        prop_assert_eq!(&s1, &s2);
        prop_assert_eq!(s1.iter().map(Batch::rows).sum::<usize>(), rows);
    }

    #[test]
    fn select_picks_rows(l in layout(), rows in 1usize..10, picks in prop::collection::vec(0usize..100, 0..12)) {
        let b = build(&l, rows, 0.0);
        let idx: Vec<usize> = picks.iter().map(|p| p % rows).collect();
        let s = b.select(&idx).unwrap();
        for ((_, src), (_, dst)) in b.leaves().iter().zip(s.leaves()) {
            let w = src.row_len();
            for (i, &r) in idx.iter().enumerate() {
                prop_assert_eq!(&dst.as_f64().unwrap()[i * w..(i + 1) * w], &src.as_f64().unwrap()[r * w..(r + 1) * w]);
            }
            prop_assert_eq!(dst.rows(), idx.len());
        }
    }

    #[test]
    fn concat_is_associative(l in layout(), r in (0usize..5, 0usize..5, 0usize..5)) {
        let (x, y, z) = (build(&l, r.0, 0.0), build(&l, r.1, 1e5), build(&l, r.2, 2e5));
        let left = Batch::concat(&[Batch::concat(&[x.clone(), y.clone()]).unwrap(), z.clone()]).unwrap();
        let right = Batch::concat(&[x, Batch::concat(&[y, z]).unwrap()]).unwrap();
        prop_assert_eq!(left.validate().unwrap(), Some(r.0 + r.1 + r.2));
        prop_assert_eq!(left, right);
    }

    #[test]
    fn select_composes(
        l in layout(),
        rows in 1usize..10,
        i in prop::collection::vec(0usize..100, 1..12),
        j in prop::collection::vec(0usize..100, 0..12),
    ) {
        let b = build(&l, rows, 0.0);
        let i: Vec<usize> = i.iter().map(|p| p % rows).collect();
        let j: Vec<usize> = j.iter().map(|p| p % i.len()).collect();
        let ij: Vec<usize> = j.iter().map(|&k| i[k]).collect();
        let twice = b.select(&i).unwrap().select(&j).unwrap();
        prop_assert_eq!(twice.validate().unwrap(), Some(j.len()));
        prop_assert_eq!(twice, b.select(&ij).unwrap());
    }
}

#[test]
fn concat_rejects_structure_mismatch() {
    let a = Batch::new().with("r", Array::from_f64(vec![1.0]));
    let b = Batch::new().with("q", Array::from_f64(vec![1.0]));
    assert!(Batch::concat(&[a, b]).is_err());
}
