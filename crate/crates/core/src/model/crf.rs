//! Linear-chain CRF with explicit start (BOS) and stop (EOS) states.
//!
//! Transition matrices are `(K + 2) x (K + 2)` row-major with `BOS = K` and
//! `EOS = K + 1`; entry `[i][j]` scores moving from `i` to `j`. Only
//! `BOS -> tag`, `tag -> tag` and `tag -> EOS` entries are ever read, so the
//! stored matrix stays finite and the masked entries simply never contribute
//! (their gradient is exactly zero). [`masked_transitions`] shows the
//! effective matrix with `-inf` in the unreachable cells.

use crate::numerics::log_sum_exp;

use super::ModelError;

/// Row-major `len x tags` emission scores plus the augmented transitions.
#[derive(Clone, Copy, Debug)]
pub struct CrfScores<'a> {
    pub emissions: &'a [f64],
    pub transitions: &'a [f64],
    pub tags: usize,
}

impl<'a> CrfScores<'a> {
    pub fn new(emissions: &'a [f64], transitions: &'a [f64], tags: usize) -> Result<Self, ModelError> {
        if tags == 0 || emissions.is_empty() || emissions.len() % tags != 0 {
            return Err(ModelError::Contract(format!(
                "emissions of length {} do not tile {tags} tags",
                emissions.len()
            )));
        }
        if transitions.len() != (tags + 2) * (tags + 2) {
            return Err(ModelError::Contract(format!(
                "transition matrix has {} entries, expected {}",
                transitions.len(),
                (tags + 2) * (tags + 2)
            )));
        }
        Ok(Self {
            emissions,
            transitions,
            tags,
        })
    }

    pub fn len(&self) -> usize {
        self.emissions.len() / self.tags
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    fn bos(&self) -> usize {
        self.tags
    }

    fn eos(&self) -> usize {
        self.tags + 1
    }

    #[inline]
    fn e(&self, t: usize, k: usize) -> f64 {
        self.emissions[t * self.tags + k]
    }

    #[inline]
    fn tr(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * (self.tags + 2) + to]
    }

    fn check_path(&self, path: &[usize]) -> Result<(), ModelError> {
        if path.len() != self.len() {
            return Err(ModelError::Contract(format!(
                "{} tags for a sequence of length {}",
                path.len(),
                self.len()
            )));
        }
        if let Some(&bad) = path.iter().find(|&&k| k >= self.tags) {
            return Err(ModelError::LabelOutOfRange {
                label: bad,
                count: self.tags,
            });
        }
        Ok(())
    }

    /// Unnormalised score of one tag path.
    pub fn path_score(&self, path: &[usize]) -> Result<f64, ModelError> {
        self.check_path(path)?;
        let mut s = self.tr(self.bos(), path[0]) + self.e(0, path[0]);
        for t in 1..path.len() {
            s = s + self.tr(path[t - 1], path[t]) + self.e(t, path[t]);
        }
        Ok(s + self.tr(path[path.len() - 1], self.eos()))
    }

    fn alphas(&self) -> Vec<f64> {
        let (l, k) = (self.len(), self.tags);
        let mut alpha = vec![0.0; l * k];
        for j in 0..k {
            alpha[j] = self.tr(self.bos(), j) + self.e(0, j);
        }
        let mut buf = vec![0.0; k];
        for t in 1..l {
            for j in 0..k {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = alpha[(t - 1) * k + i] + self.tr(i, j);
                }
                alpha[t * k + j] = lse(&buf) + self.e(t, j);
            }
        }
        alpha
    }

    fn betas(&self) -> Vec<f64> {
        let (l, k) = (self.len(), self.tags);
        let mut beta = vec![0.0; l * k];
        for i in 0..k {
            beta[(l - 1) * k + i] = self.tr(i, self.eos());
        }
        let mut buf = vec![0.0; k];
        for t in (0..l - 1).rev() {
            for i in 0..k {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = self.tr(i, j) + self.e(t + 1, j) + beta[(t + 1) * k + j];
                }
                beta[t * k + i] = lse(&buf);
            }
        }
        beta
    }

    fn log_partition_from(&self, alpha: &[f64]) -> f64 {
        let (l, k) = (self.len(), self.tags);
        let last: Vec<f64> = (0..k)
            .map(|j| alpha[(l - 1) * k + j] + self.tr(j, self.eos()))
            .collect();
        lse(&last)
    }

    /// `log Z`: log-sum-exp of all path scores, by the forward recursion.
    pub fn log_partition(&self) -> f64 {
        self.log_partition_from(&self.alphas())
    }

    /// Negative log-likelihood of `gold`.
    pub fn nll(&self, gold: &[usize]) -> Result<f64, ModelError> {
        let score = self.path_score(gold)?;
        Ok(self.log_partition() - score)
    }

    /// NLL together with its gradient w.r.t. emissions and transitions.
    pub fn nll_with_grad(&self, gold: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>), ModelError> {
        let score = self.path_score(gold)?;
        let (l, k) = (self.len(), self.tags);
        let w = k + 2;
        let alpha = self.alphas();
        let beta = self.betas();
        let log_z = self.log_partition_from(&alpha);

        let mut d_emit = vec![0.0; l * k];
        let mut d_trans = vec![0.0; w * w];
        for t in 0..l {
            for j in 0..k {
                d_emit[t * k + j] = (alpha[t * k + j] + beta[t * k + j] - log_z).exp();
            }
        }
        for j in 0..k {
            d_trans[self.bos() * w + j] = d_emit[j];
            d_trans[j * w + self.eos()] = d_emit[(l - 1) * k + j];
        }
        for t in 0..l - 1 {
            for i in 0..k {
                for j in 0..k {
                    let lp = alpha[t * k + i] + self.tr(i, j) + self.e(t + 1, j)
                        + beta[(t + 1) * k + j]
                        - log_z;
                    d_trans[i * w + j] += lp.exp();
                }
            }
        }
        // subtract the gold path's feature counts
        d_trans[self.bos() * w + gold[0]] -= 1.0;
        for t in 0..l {
            d_emit[t * k + gold[t]] -= 1.0;
            if t > 0 {
                d_trans[gold[t - 1] * w + gold[t]] -= 1.0;
            }
        }
        d_trans[gold[l - 1] * w + self.eos()] -= 1.0;
        Ok((log_z - score, d_emit, d_trans))
    }

    /// Highest-scoring path and its score. Ties go to the lowest tag index.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let (l, k) = (self.len(), self.tags);
        let mut delta: Vec<f64> = (0..k).map(|j| self.tr(self.bos(), j) + self.e(0, j)).collect();
        let mut back = vec![0usize; l * k];
        for t in 1..l {
            let mut next = vec![0.0; k];
            for j in 0..k {
                let mut best = 0;
                let mut best_score = delta[0] + self.tr(0, j);
                for (i, &d) in delta.iter().enumerate().skip(1) {
                    let s = d + self.tr(i, j);
                    if s > best_score {
                        best = i;
                        best_score = s;
                    }
                }
                back[t * k + j] = best;
                next[j] = best_score + self.e(t, j);
            }
            delta = next;
        }
        let mut last = 0;
        let mut best_score = delta[0] + self.tr(0, self.eos());
        for (j, &d) in delta.iter().enumerate().skip(1) {
            let s = d + self.tr(j, self.eos());
            if s > best_score {
                last = j;
                best_score = s;
            }
        }
        let mut path = vec![0; l];
        path[l - 1] = last;
        for t in (1..l).rev() {
            path[t - 1] = back[t * k + path[t]];
        }
        (path, best_score)
    }
}

fn lse(values: &[f64]) -> f64 {
    log_sum_exp(values).expect("non-empty")
}

/// Effective transition matrix with unreachable moves (into BOS, out of EOS,
/// BOS straight to EOS) set to `-inf`.
pub fn masked_transitions(transitions: &[f64], tags: usize) -> Vec<f64> {
    let w = tags + 2;
    let (bos, eos) = (tags, tags + 1);
    let mut out = transitions.to_vec();
    for i in 0..w {
        out[i * w + bos] = f64::NEG_INFINITY;
        out[eos * w + i] = f64::NEG_INFINITY;
    }
    out[bos * w + eos] = f64::NEG_INFINITY;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Every tag path of length `len` over `tags` tags.
    fn all_paths(len: usize, tags: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..tags).map(move |k| {
                        let mut q = p.clone();
                        q.push(k);
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// Brute-force log Z and best path by enumeration, in plain loops.
    fn enumerate(em: &[f64], tr: &[f64], len: usize, tags: usize) -> (f64, Vec<usize>, f64) {
        let w = tags + 2;
        let score = |p: &[usize]| {
            let mut s = tr[tags * w + p[0]];
            for t in 0..len {
                s += em[t * tags + p[t]];
                if t > 0 {
                    s += tr[p[t - 1] * w + p[t]];
                }
            }
            s + tr[p[len - 1] * w + tags + 1]
        };
        let paths = all_paths(len, tags);
        let scores: Vec<f64> = paths.iter().map(|p| score(p)).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let best = scores.iter().position(|&s| s == max).unwrap();
        (log_z, paths[best].clone(), max)
    }

    #[test]
    fn single_tag_has_zero_nll() {
        let em = [0.3, -1.7, 2.2];
        let tr = [0.5, 0.1, -0.2, 0.9, 0.4, 1.1, 0.7, -0.3, 0.2];
        let crf = CrfScores::new(&em, &tr, 1).unwrap();
        assert_eq!(crf.nll(&[0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_two_by_two_is_log_four() {
        let em = [0.0; 4];
        let tr = [0.0; 16];
        let crf = CrfScores::new(&em, &tr, 2).unwrap();
        assert!((crf.nll(&[1, 0]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((4f64.ln() - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn three_by_three_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let em: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tr: Vec<f64> = (0..25).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let crf = CrfScores::new(&em, &tr, 3).unwrap();
        let (log_z, best, best_score) = enumerate(&em, &tr, 3, 3);
        let gold = [2, 0, 1];
        let mut gold_score = tr[3 * 5 + 2] + tr[2 * 5 + 0] + tr[0 * 5 + 1] + tr[1 * 5 + 4];
        gold_score += em[2] + em[3] + em[7];
        assert!((crf.nll(&gold).unwrap() - (log_z - gold_score)).abs() < 1e-10);
        let (path, score) = crf.viterbi();
        assert_eq!(path, best);
        assert!((score - best_score).abs() < 1e-12);
    }

    #[test]
    fn peaked_emissions_decode_per_position() {
        let em = [5.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 5.0, 0.0];
        let tr = [0.0; 25];
        let crf = CrfScores::new(&em, &tr, 3).unwrap();
        assert_eq!(crf.viterbi().0, vec![0, 2, 1]);
    }

    #[test]
    fn length_one_uses_bos_and_eos() {
        let em = [1.0, 1.5];
        let mut tr = [0.0; 16];
        tr[2 * 4] = 1.0; // BOS -> 0
        tr[3] = -0.2; // 0 -> EOS
        tr[4 + 3] = 0.1; // 1 -> EOS
        let crf = CrfScores::new(&em, &tr, 2).unwrap();
        let (path, score) = crf.viterbi();
        assert_eq!(path, vec![0]);
        assert!((score - 1.8).abs() < 1e-12);
    }

    #[test]
    fn ties_take_lowest_index() {
        let crf = CrfScores::new(&[0.0; 6], &[0.0; 25], 3).unwrap();
        assert_eq!(crf.viterbi().0, vec![0, 0]);
    }

    #[test]
    fn bad_labels_are_rejected() {
        let crf = CrfScores::new(&[0.0; 4], &[0.0; 16], 2).unwrap();
        assert!(matches!(crf.nll(&[0, 2]), Err(ModelError::LabelOutOfRange { .. })));
        assert!(crf.nll(&[0]).is_err());
        assert!(CrfScores::new(&[0.0; 4], &[0.0; 9], 2).is_err());
    }

    #[test]
    fn masked_cells() {
        let m = masked_transitions(&[0.0; 16], 2);
        assert_eq!(m[2], f64::NEG_INFINITY); // 0 -> BOS
        assert_eq!(m[3 * 4], f64::NEG_INFINITY); // EOS -> 0
        assert_eq!(m[2 * 4 + 3], f64::NEG_INFINITY); // BOS -> EOS
        assert_eq!(m[2 * 4], 0.0); // BOS -> 0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (l, k) = (4, 3);
        let em: Vec<f64> = (0..l * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tr: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gold = [1, 1, 0, 2];
        let (_, de, dt) = CrfScores::new(&em, &tr, k).unwrap().nll_with_grad(&gold).unwrap();
        let h = 1e-6;
        let f = |em: &[f64], tr: &[f64]| CrfScores::new(em, tr, k).unwrap().nll(&gold).unwrap();
        for i in 0..em.len() {
            let (mut a, mut b) = (em.clone(), em.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a, &tr) - f(&b, &tr)) / (2.0 * h);
            assert!((fd - de[i]).abs() < 1e-7, "emission {i}: {fd} vs {}", de[i]);
        }
        for i in 0..tr.len() {
            let (mut a, mut b) = (tr.clone(), tr.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&em, &a) - f(&em, &b)) / (2.0 * h);
            assert!((fd - dt[i]).abs() < 1e-7, "transition {i}: {fd} vs {}", dt[i]);
        }
    }

    proptest! {
        #[test]
        fn forward_matches_enumeration(
            len in 1usize..=4,
            tags in 1usize..=4,
            seed in any::<u64>(),
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let em: Vec<f64> = (0..len * tags).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let tr: Vec<f64> = (0..(tags + 2) * (tags + 2)).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let gold: Vec<usize> = (0..len).map(|_| rng.gen_range(0..tags)).collect();
            let crf = CrfScores::new(&em, &tr, tags).unwrap();
            let (log_z, best, _) = enumerate(&em, &tr, len, tags);
            prop_assert!((crf.log_partition() - log_z).abs() < 1e-10);
            let gold_score = crf.path_score(&gold).unwrap();
            prop_assert!((crf.nll(&gold).unwrap() - (log_z - gold_score)).abs() < 1e-10);
            let (path, score) = crf.viterbi();
            prop_assert_eq!(path, best);
            prop_assert!(score <= crf.log_partition() + 1e-12);
        }
    }
}
