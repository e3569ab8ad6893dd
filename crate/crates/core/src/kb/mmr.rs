//! Cosine similarity and greedy Maximal Marginal Relevance selection.

use num_traits::Float;

/// Cosine of two vectors; zero when either has zero norm.
pub fn cosine<F: Float>(a: &[F], b: &[F]) -> F {
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    if na == F::zero() || nb == F::zero() {
        return F::zero();
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Greedy MMR over candidates `0..relevance.len()`.
///
/// The first pick is the most relevant candidate. Each later pick maximizes
/// `lambda * relevance[d] - (1 - lambda) * max_{s in selected} similarity(d, s)`.
/// Ties go to the lower index, so callers order candidates by their tie key.
/// Returns `(candidate, objective)` pairs in selection order.
pub fn select<F, S>(relevance: &[F], similarity: S, k: usize, lambda: F) -> Vec<(usize, F)>
where
    F: Float,
    S: Fn(usize, usize) -> F,
{
    let n = relevance.len();
    let mut chosen: Vec<(usize, F)> = Vec::with_capacity(k.min(n));
    let mut taken = vec![false; n];
    // running max similarity of each candidate to the selected set
    let mut redundancy = vec![F::neg_infinity(); n];
    while chosen.len() < k.min(n) {
        let mut best: Option<(usize, F)> = None;
        for d in (0..n).filter(|d| !taken[*d]) {
            let score = if chosen.is_empty() { relevance[d] } else { lambda * relevance[d] - (F::one() - lambda) * redundancy[d] };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((d, score));
            }
        }
        let (pick, score) = best.expect("a candidate remains");
        taken[pick] = true;
        chosen.push((pick, score));
        for d in (0..n).filter(|d| !taken[*d]) {
            let s = similarity(d, pick);
            if s > redundancy[d] {
                redundancy[d] = s;
            }
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0f64, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0f32, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn lambda_one_is_pure_relevance() {
        let rel = [0.2f64, 0.9, 0.5, 0.7];
        let picks: Vec<usize> = select(&rel, |_, _| 1.0, 4, 1.0).into_iter().map(|p| p.0).collect();
        assert_eq!(picks, [1, 3, 2, 0]);
    }

    #[test]
    fn diversity_penalizes_duplicates() {
        // 0 and 1 are identical; 2 is orthogonal but less relevant.
        let rel = [0.9f64, 0.9, 0.6];
        let sim = |a: usize, b: usize| if a.min(b) == 0 && a.max(b) == 1 { 1.0 } else { 0.0 };
        let picks: Vec<usize> = select(&rel, sim, 2, 0.5).into_iter().map(|p| p.0).collect();
        assert_eq!(picks, [0, 2]);
    }

    #[test]
    fn works_in_f32() {
        let picks = select(&[0.1f32, 0.3], |_, _| 0.0, 5, 0.5);
        assert_eq!(picks.len(), 2);
        assert_eq!(picks[0].0, 1);
    }
}
