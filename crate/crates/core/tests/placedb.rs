use proptest::prelude::*;
use radplace_core::encoder::Descriptor;
use radplace_core::io::{load_db, save_db};
use radplace_core::placedb::{max_f1, recall_at_n, PlaceDb, PlaceRecord, QueryResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coarsely quantised components so distance ties actually happen.
fn random_descriptor(dim: usize, rng: &mut impl Rng) -> Descriptor {
    Descriptor::new((0..dim).map(|_| rng.random_range(0..4) as f32 * 0.25).collect())
}

fn random_db(n: usize, dim: usize, rng: &mut impl Rng) -> PlaceDb {
    let mut db = PlaceDb::new();
    // Shuffled ids so insertion order and id order differ.
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    for id in ids {
        let pos = [rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)];
        db.add(PlaceRecord::new(id, random_descriptor(dim, rng), pos)).unwrap();
    }
    db
}

fn brute_force(db: &PlaceDb, q: &Descriptor, k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = db.records().iter().map(|r| (r.id, q.distance(&r.descriptor))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn retrieval_matches_oracle(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db = random_db(1000, 6, &mut rng);
    for _ in 0..50 {
        let q = random_descriptor(6, &mut rng);
        let k = rng.random_range(1..=40);
        let got = db.query(&q, k).unwrap();
        let want = brute_force(&db, &q, k);
        assert_eq!(got.ids, want.iter().map(|w| w.0).collect::<Vec<_>>(), "seed {seed}");
        assert_eq!(got.distances, want.iter().map(|w| w.1).collect::<Vec<_>>(), "seed {seed}");
    }
}

#[test]
fn retrieval_equals_full_sort() {
    for seed in 0..4 {
        retrieval_matches_oracle(seed);
    }
}

#[test]
fn hundred_records_retrievable() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let db = random_db(100, 4, &mut rng);
    assert_eq!(db.len(), 100);
    for i in 0..100u64 {
        assert_eq!(db.get(i * 7 + 3).unwrap().id, i * 7 + 3);
    }
}

/// Threshold sweep by direct counting at every observed top-1 distance.
fn f1_oracle(results: &[QueryResult]) -> f64 {
    let positives = results
        .iter()
        .filter(|r| r.has_match.unwrap_or(false) || r.correct.as_ref().unwrap().iter().any(|c| *c))
        .count();
    let top: Vec<(f64, bool)> = results.iter().map(|r| (r.distances[0], r.correct.as_ref().unwrap()[0])).collect();
    let mut best = 0.0f64;
    for (tau, _) in &top {
        let recognized = top.iter().filter(|t| t.0 <= *tau).count();
        let tp = top.iter().filter(|t| t.0 <= *tau && t.1).count();
        if tp == 0 {
            continue;
        }
        let p = tp as f64 / recognized as f64;
        let r = tp as f64 / positives as f64;
        best = best.max(2.0 * p * r / (p + r));
    }
    best
}

fn crafted(top1: &[(f64, bool, bool)]) -> Vec<QueryResult> {
    top1.iter()
        .map(|(d, correct, matchable)| QueryResult {
            ids: vec![0, 1],
            distances: vec![*d, d + 1.0],
            correct: Some(vec![*correct, !*correct && *matchable]),
            has_match: Some(*correct || *matchable),
        })
        .collect()
}

#[test]
fn interleaved_f1_matches_sweep() {
    let set = crafted(&[
        (0.10, true, true),
        (0.15, false, true),
        (0.20, true, true),
        (0.30, false, false),
        (0.35, true, true),
        (0.50, false, true),
        (0.55, true, true),
        (0.90, false, false),
    ]);
    let (f1, tau) = max_f1(&set).unwrap();
    assert!((f1 - f1_oracle(&set)).abs() < 1e-12);
    // Six matchable queries; at tau = 0.55 four of seven recognised are right.
    assert!((f1 - 2.0 * (4.0 / 7.0) * (4.0 / 6.0) / (4.0 / 7.0 + 4.0 / 6.0)).abs() < 1e-12);
    assert_eq!(tau, 0.55);
}

#[test]
fn persistence_roundtrip_preserves_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let db = random_db(300, 8, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("places.mpdb");
    save_db(&path, &db).unwrap();
    let back = load_db(&path).unwrap();
    for _ in 0..20 {
        let q = random_descriptor(8, &mut rng);
        assert_eq!(db.query(&q, 10).unwrap(), back.query(&q, 10).unwrap());
    }
}

fn random_results(rng: &mut impl Rng, n: usize) -> Vec<QueryResult> {
    (0..n)
        .map(|_| {
            let mut d: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..2.0)).collect();
            d.sort_by(f64::total_cmp);
            let correct: Vec<bool> = (0..10).map(|_| rng.random_bool(0.2)).collect();
            let has_match = correct.iter().any(|c| *c) || rng.random_bool(0.3);
            QueryResult {
                ids: (0..10).collect(),
                distances: d,
                correct: Some(correct),
                has_match: Some(has_match),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn small_db_retrieval_matches_oracle(seed in any::<u64>(), n in 1usize..60, k in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let db = random_db(n, 3, &mut rng);
        let q = random_descriptor(3, &mut rng);
        let got = db.query(&q, k).unwrap();
        let want = brute_force(&db, &q, k);
        prop_assert_eq!(got.ids.len(), k.min(n));
        prop_assert_eq!(got.ids, want.iter().map(|w| w.0).collect::<Vec<_>>());
        prop_assert!(got.distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn recall_is_monotone_in_n(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let results = random_results(&mut rng, 30);
        if let Ok(first) = recall_at_n(&results, 1) {
            let mut prev = first;
            for n in 2..=10 {
                let r = recall_at_n(&results, n).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
        }
    }

    #[test]
    fn f1_ignores_monotone_transforms(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let results = random_results(&mut rng, 25);
        let f = |x: f64| (scale * x).exp() + x.powi(3);
        let mapped: Vec<QueryResult> = results
            .iter()
            .map(|r| QueryResult { distances: r.distances.iter().map(|d| f(*d)).collect(), ..r.clone() })
            .collect();
        match (max_f1(&results), max_f1(&mapped)) {
            (Ok((a, ta)), Ok((b, tb))) => {
                prop_assert_eq!(a, b);
                prop_assert_eq!(f(ta), tb);
                prop_assert!((a - f1_oracle(&results)).abs() < 1e-12);
            }
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "disagreement {:?}", other),
        }
    }
}
