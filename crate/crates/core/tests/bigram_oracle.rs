// SPDX-License-Identifier: MIT OR Apache-2.0

//! Engine output against closed-form values for a bigram model.
//!
//! Under a bigram model the prediction at position j depends only on the
//! token at j-1, so masking word i changes column j only when i = j-1, and
//! then the prediction falls back to uniform.

use std::collections::BTreeMap;

use cxaffinity::backend::{BigramBackend, CountingBackend};
use cxaffinity::engine::{self, EngineOptions};
use cxaffinity::tokenization::{align, WordVocab};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];

struct Case {
    vocab: WordVocab,
    table: BTreeMap<String, BTreeMap<String, f64>>,
    sentence: Vec<&'static str>,
}

fn case(seed: u64, len: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = WordVocab::new(WORDS);
    let mut table = BTreeMap::new();
    for w in WORDS {
        // Some words have no row and predict uniformly.
        if rng.gen_bool(0.2) {
            continue;
        }
        let weights: Vec<f64> = WORDS.iter().map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() }).collect();
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            continue;
        }
        let row = WORDS.iter().zip(&weights).filter(|(_, &x)| x > 0.0).map(|(n, x)| (n.to_string(), x / total)).collect();
        table.insert(w.to_string(), row);
    }
    let sentence = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    Case { vocab, table, sentence }
}

// Dense next-word distribution for `prev` over the full vocabulary.
fn row(c: &Case, prev: Option<&str>) -> Vec<f64> {
    let n = c.vocab.tokens().len();
    match prev.and_then(|p| c.table.get(p)) {
        Some(r) => {
            let mut v = vec![0.0; n];
            for (w, p) in r {
                let id = c.vocab.tokens().iter().position(|t| t == w).unwrap();
                v[id] = *p;
            }
            v
        }
        None => vec![1.0 / n as f64; n],
    }
}

fn jsd2(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            let t = |x: f64| if x > 0.0 { 0.5 * x * (x / m).log2() } else { 0.0 };
            t(a) + t(b)
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matrix_and_global_match_closed_form(seed in any::<u64>(), len in 1usize..12) {
        let c = case(seed, len);
        let backend = BigramBackend::from_word_table(&c.vocab, &c.table, "bigram").unwrap();
        let ts = align(&c.sentence.join(" "), &c.vocab).unwrap();
        let n = c.sentence.len();
        let uniform = row(&c, None);

        let m = engine::affinity_matrix(&ts, &backend).unwrap();
        prop_assert_eq!(m.dim(), n);
        for i in 0..n {
            for j in 0..n {
                let want = if j > 0 && i == j - 1 {
                    jsd2(&row(&c, Some(c.sentence[j - 1])), &uniform)
                } else {
                    0.0
                };
                prop_assert!((m.get(i, j) - want).abs() < 1e-9, "a[{}][{}] = {} want {}", i, j, m.get(i, j), want);
            }
        }

        let g = engine::global_affinity(&ts, &backend).unwrap();
        for j in 0..n {
            let prev = (j > 0).then(|| c.sentence[j - 1]);
            let id = c.vocab.tokens().iter().position(|t| t == c.sentence[j]).unwrap();
            let want = row(&c, prev)[id];
            prop_assert!((g.values[j].unwrap() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn batching_and_parallelism_do_not_change_results(seed in any::<u64>(), len in 2usize..9, batch in 1usize..7) {
        let c = case(seed, len);
        let backend = BigramBackend::from_word_table(&c.vocab, &c.table, "bigram").unwrap();
        let ts = align(&c.sentence.join(" "), &c.vocab).unwrap();
        let base = engine::affinity_matrix(&ts, &backend).unwrap();
        let opts = EngineOptions { batch_size: batch, parallel: false };
        let other = engine::affinity_matrix_with(&ts, &backend, &Default::default(), &opts).unwrap();
        prop_assert_eq!(base.values, other.values);
    }
}

#[test]
fn query_count_is_quadratic() {
    let c = case(7, 6);
    let backend = CountingBackend::new(BigramBackend::from_word_table(&c.vocab, &c.table, "bigram").unwrap());
    let ts = align(&c.sentence.join(" "), &c.vocab).unwrap();
    engine::affinity_matrix(&ts, &backend).unwrap();
    let n = 6;
    assert_eq!(backend.forward_passes(), n + n * (n - 1) / 2);
    let q = backend.position_queries();
    assert_eq!(q.get(&1), Some(&n));
    assert_eq!(q.get(&2), Some(&(n * (n - 1))));
}
