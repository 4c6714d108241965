//! Exact search versus a full-scan, stable-sort oracle.

use docqa_core::encoder::{Embedding, EncoderSpec};
use docqa_core::vectorstore::{IndexError, VectorIndex};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn spec(dim: usize) -> EncoderSpec {
    EncoderSpec { name: "test".into(), dim, version: "0".into() }
}

fn random_unit(rng: &mut StdRng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(e) = Embedding::normalized(&v) {
            return e;
        }
    }
}

/// Full scan in insertion order, f64 dot products, stable sort on
/// (score desc, id asc).
fn oracle(entries: &[(String, Embedding)], q: &Embedding, k: usize) -> Vec<String> {
    let mut scored: Vec<(String, f64)> = entries
        .iter()
        .map(|(id, e)| {
            let s: f64 = e.values().iter().zip(q.values()).map(|(a, b)| *a as f64 * *b as f64).sum();
            (id.clone(), s.clamp(-1.0, 1.0) as f32 as f64)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(id, _)| id).collect()
}

fn build(rng: &mut StdRng, n: usize, dim: usize) -> (VectorIndex, Vec<(String, Embedding)>) {
    let mut index = VectorIndex::new(spec(dim), "t");
    let mut entries = Vec::new();
    for i in 0..n {
        let id = format!("doc/p{}.b{}/{}", i % 7, i % 13, i);
        let e = random_unit(rng, dim);
        index.add(id.clone(), e.clone()).unwrap();
        entries.push((id, e));
    }
    (index, entries)
}

#[test]
fn matches_oracle_on_random_instances() {
    let mut rng = StdRng::seed_from_u64(7);
    let (index, entries) = build(&mut rng, 200, 32);
    for _ in 0..20 {
        let q = random_unit(&mut rng, 32);
        for k in [1, 5, 20] {
            let got: Vec<String> = index.search(&q, k).unwrap().into_iter().map(|h| h.passage_id).collect();
            assert_eq!(got, oracle(&entries, &q, k));
        }
    }
}

#[test]
fn thousand_entries_stay_exact() {
    let mut rng = StdRng::seed_from_u64(11);
    let (index, entries) = build(&mut rng, 1000, 16);
    assert_eq!(index.len(), 1000);
    for _ in 0..10 {
        let q = random_unit(&mut rng, 16);
        let got: Vec<String> = index.search(&q, 1000).unwrap().into_iter().map(|h| h.passage_id).collect();
        assert_eq!(got, oracle(&entries, &q, 1000));
    }
}

#[test]
fn duplicate_vectors_tie_break_by_id() {
    let mut rng = StdRng::seed_from_u64(3);
    let e = random_unit(&mut rng, 8);
    let mut index = VectorIndex::new(spec(8), "t");
    let mut entries = Vec::new();
    for id in ["z", "m", "a", "q"] {
        index.add(id, e.clone()).unwrap();
        entries.push((id.to_string(), e.clone()));
    }
    let got: Vec<String> = index.search(&e, 3).unwrap().into_iter().map(|h| h.passage_id).collect();
    assert_eq!(got, vec!["a", "m", "q"]);
    assert_eq!(got, oracle(&entries, &e, 3));
}

#[test]
fn query_dimension_is_checked() {
    let index = VectorIndex::new(spec(4), "t");
    assert!(matches!(
        index.search(&Embedding::from_values(vec![1.0, 0.0]), 1),
        Err(IndexError::DimMismatch { expected: 4, actual: 2 })
    ));
}

#[test]
fn file_roundtrip_preserves_bits_and_results() {
    let mut rng = StdRng::seed_from_u64(5);
    let (index, _) = build(&mut rng, 3, 24);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("doc.dsvx");
    index.save(&path).unwrap();
    let loaded = VectorIndex::load(&path).unwrap();
    assert_eq!(loaded.encoder_spec(), index.encoder_spec());
    assert_eq!(loaded.scope(), "doc");
    for ((a_id, a), (b_id, b)) in index.entries().zip(loaded.entries()) {
        assert_eq!(a_id, b_id);
        let bits = |e: &Embedding| e.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    let q = random_unit(&mut rng, 24);
    assert_eq!(index.search(&q, 3).unwrap(), loaded.search(&q, 3).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(VectorIndex::load(&path), Err(IndexError::Format(_))));
    assert!(matches!(VectorIndex::load(&dir.path().join("missing.dsvx")), Err(IndexError::Io(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shorter_k_is_a_prefix(seed in any::<u64>(), n in 1usize..60, k1 in 1usize..30, extra in 0usize..30) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (index, entries) = build(&mut rng, n, 6);
        let q = random_unit(&mut rng, 6);
        let short = index.search(&q, k1).unwrap();
        let long = index.search(&q, k1 + extra).unwrap();
        prop_assert_eq!(short.len(), k1.min(n));
        prop_assert_eq!(&long[..short.len()], &short[..]);
        let ids: Vec<String> = long.into_iter().map(|h| h.passage_id).collect();
        prop_assert_eq!(ids, oracle(&entries, &q, k1 + extra));
    }

    #[test]
    fn bytes_roundtrip_is_lossless(values in prop::collection::vec(prop::collection::vec(any::<f32>(), 5), 0..20)) {
        let mut index = VectorIndex::new(spec(5), "t");
        for (i, v) in values.iter().enumerate() {
            index.add(format!("id{i}"), Embedding::from_values(v.clone())).unwrap();
        }
        let bytes = index.to_bytes().unwrap();
        let back = VectorIndex::from_bytes(&bytes, "t").unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
