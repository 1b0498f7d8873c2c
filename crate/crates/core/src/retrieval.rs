//! Exact top-k retrieval by cosine similarity over an [`EmbeddingIndex`].

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingIndex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    #[serde(rename = "id")]
    pub sample_id: String,
    #[serde(rename = "sim")]
    pub similarity: f64,
    pub rank: usize,
}

/// Dot product of two unit vectors, accumulated in `f64` and clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b))
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum::<f64>()
        .clamp(-1.0, 1.0)
        // folds -0.0 into +0.0 so exact ties stay ties under total_cmp
        + 0.0
}

// Descending similarity, then ascending corpus position.
fn hit_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn check_query(query: &[f32], index: &EmbeddingIndex) -> Result<()> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if query.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: query.len(),
        });
    }
    Ok(())
}

fn to_hits(index: &EmbeddingIndex, scored: &[(f64, usize)]) -> Vec<RetrievalHit> {
    scored
        .iter()
        .enumerate()
        .map(|(rank, &(similarity, pos))| RetrievalHit {
            sample_id: index.ids()[pos].clone(),
            similarity,
            rank,
        })
        .collect()
}

/// The `min(k, |index|)` most similar rows, most similar first. Exact ties
/// keep corpus order.
pub fn retrieve_top_k(
    query: &[f32],
    index: &EmbeddingIndex,
    k: usize,
) -> Result<Vec<RetrievalHit>> {
    check_query(query, index)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut scored: Vec<(f64, usize)> = index
        .rows()
        .enumerate()
        .map(|(i, row)| (dot(query, row), i))
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, hit_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(hit_order);
    Ok(to_hits(index, &scored))
}

/// `k` distinct rows drawn uniformly without replacement. The similarity
/// field carries the true cosine to `query`; hits are ordered like
/// [`retrieve_top_k`] output.
pub fn random_retrieve(
    query: &[f32],
    index: &EmbeddingIndex,
    k: usize,
    seed: u64,
) -> Result<Vec<RetrievalHit>> {
    check_query(query, index)?;
    if k == 0 || k > index.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            index.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scored: Vec<(f64, usize)> = sample(&mut rng, index.len(), k)
        .into_iter()
        .map(|i| (dot(query, index.row(i)), i))
        .collect();
    scored.sort_unstable_by(hit_order);
    Ok(to_hits(index, &scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f32::consts::FRAC_1_SQRT_2;

    fn abc() -> EmbeddingIndex {
        EmbeddingIndex::build(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![1.0f32, 0.0], vec![0.0, 1.0], vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2]],
        )
        .unwrap()
    }

    fn oracle(query: &[f32], index: &EmbeddingIndex, k: usize) -> Vec<String> {
        let mut all: Vec<(f64, usize)> = (0..index.len())
            .map(|i| {
                let s: f64 = query
                    .iter()
                    .zip(index.row(i))
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                (s.clamp(-1.0, 1.0), i)
            })
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter()
            .take(k)
            .map(|(_, i)| index.ids()[i].clone())
            .collect()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_is_clamped() {
        assert_eq!(cosine(&[1.0000001, 0.0], &[1.0000001, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn self_match_ranks_first() {
        let idx = abc();
        let hits = retrieve_top_k(idx.row(2), &idx, 1).unwrap();
        assert_eq!(hits[0].sample_id, "c");
        assert_eq!(hits[0].rank, 0);
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn three_row_example() {
        let idx = abc();
        let hits = retrieve_top_k(&[1.0, 0.0], &idx, 2).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.sample_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
        assert!((hits[1].similarity - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn k_is_clamped() {
        let idx = abc();
        let hits = retrieve_top_k(&[1.0, 0.0], &idx, idx.len() + 5).unwrap();
        assert_eq!(hits.len(), 3);
        assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn ties_follow_corpus_order() {
        let idx = EmbeddingIndex::build(
            vec!["p".into(), "q".into(), "r".into(), "s".into()],
            vec![
                vec![0.0f32, 1.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 2.0],
            ],
        )
        .unwrap();
        let hits = retrieve_top_k(&[0.0, 1.0], &idx, 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.sample_id.as_str()).collect();
        assert_eq!(ids, ["p", "r", "s"]);
    }

    #[test]
    fn errors() {
        let empty = EmbeddingIndex::build(Vec::new(), Vec::<Vec<f32>>::new()).unwrap();
        assert!(matches!(
            retrieve_top_k(&[1.0], &empty, 1),
            Err(Error::EmptyIndex)
        ));
        assert!(matches!(
            retrieve_top_k(&[1.0, 0.0, 0.0], &abc(), 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(random_retrieve(&[1.0, 0.0], &abc(), 4, 0).is_err());
    }

    #[test]
    fn random_is_seeded() {
        let idx = abc();
        let a = random_retrieve(&[1.0, 0.0], &idx, 2, 42).unwrap();
        let b = random_retrieve(&[1.0, 0.0], &idx, 2, 42).unwrap();
        assert_eq!(a, b);
        let all = random_retrieve(&[1.0, 0.0], &idx, 3, 7).unwrap();
        let mut ids: Vec<_> = all.iter().map(|h| h.sample_id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["a", "b", "c"]);
        for h in &all {
            let expected = cosine(&[1.0, 0.0], idx.vector(&h.sample_id).unwrap()).unwrap();
            assert_eq!(h.similarity, expected);
        }
    }

    #[test]
    fn random_is_uniform() {
        let idx = EmbeddingIndex::build(
            (0..4).map(|i| i.to_string()).collect(),
            vec![
                vec![1.0f32, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 1.0],
                vec![-1.0, 0.5],
            ],
        )
        .unwrap();
        let draws = 10_000u64;
        let mut counts = [0u64; 4];
        for seed in 0..draws {
            let hit = &random_retrieve(&[1.0, 0.0], &idx, 1, seed).unwrap()[0];
            counts[hit.sample_id.parse::<usize>().unwrap()] += 1;
        }
        // binomial(10000, 0.25): sigma = sqrt(n p (1-p)) = 43.30
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            rows in prop::collection::vec(prop::collection::vec(-3i8..3, 4), 1..60),
            q in prop::collection::vec(-3i8..3, 4),
            k in 1usize..70,
        ) {
            // small integer grid: plenty of exact ties
            let rows: Vec<Vec<f32>> = rows.into_iter().map(|r| r.into_iter().map(f32::from).collect()).collect();
            prop_assume!(rows.iter().all(|r| r.iter().any(|&x| x != 0.0)));
            let q: Vec<f32> = q.into_iter().map(f32::from).collect();
            prop_assume!(q.iter().any(|&x| x != 0.0));
            let q = crate::embedding::normalize(&q).unwrap();
            let idx = EmbeddingIndex::build((0..rows.len()).map(|i| format!("r{i}")).collect(), &rows).unwrap();
            let got: Vec<String> = retrieve_top_k(&q, &idx, k).unwrap().into_iter().map(|h| h.sample_id).collect();
            prop_assert_eq!(got, oracle(&q, &idx, k));
        }

        #[test]
        fn shorter_k_is_prefix(
            rows in prop::collection::vec(prop::collection::vec(-1f32..1.0, 3), 2..40),
            k in 1usize..39,
        ) {
            prop_assume!(rows.iter().all(|r| r.iter().any(|&x| x.abs() > 1e-3)));
            let idx = EmbeddingIndex::build((0..rows.len()).map(|i| format!("r{i}")).collect(), &rows).unwrap();
            let q = idx.row(0).to_vec();
            let short = retrieve_top_k(&q, &idx, k).unwrap();
            let long = retrieve_top_k(&q, &idx, k + 1).unwrap();
            prop_assert_eq!(&long[..short.len()], &short[..]);
        }

        #[test]
        fn shuffling_rows_only_reorders_ties(
            rows in prop::collection::vec(prop::collection::vec(-2i8..2, 3), 2..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let rows: Vec<Vec<f32>> = rows.into_iter().map(|r| r.into_iter().map(f32::from).collect()).collect();
            prop_assume!(rows.iter().all(|r| r.iter().any(|&x| x != 0.0)));
            let ids: Vec<String> = (0..rows.len()).map(|i| format!("r{i}")).collect();
            let idx = EmbeddingIndex::build(ids.clone(), &rows).unwrap();
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled = EmbeddingIndex::build(
                perm.iter().map(|&i| ids[i].clone()).collect(),
                perm.iter().map(|&i| rows[i].clone()),
            ).unwrap();
            let q = idx.row(0).to_vec();
            let a = retrieve_top_k(&q, &idx, rows.len()).unwrap();
            let b = retrieve_top_k(&q, &shuffled, rows.len()).unwrap();
            let sims_a: Vec<u64> = a.iter().map(|h| h.similarity.to_bits()).collect();
            let sims_b: Vec<u64> = b.iter().map(|h| h.similarity.to_bits()).collect();
            prop_assert_eq!(sims_a, sims_b);
            // same multiset of ids inside each run of equal similarity
            let mut i = 0;
            while i < a.len() {
                let mut j = i;
                while j < a.len() && a[j].similarity == a[i].similarity { j += 1; }
                let mut x: Vec<_> = a[i..j].iter().map(|h| &h.sample_id).collect();
                let mut y: Vec<_> = b[i..j].iter().map(|h| &h.sample_id).collect();
                x.sort(); y.sort();
                prop_assert_eq!(x, y);
                i = j;
            }
        }
    }
}
