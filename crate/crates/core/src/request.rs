//! First-order, time-homogeneous Markov request process.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const POWER_ITERATION_LIMIT: usize = 1_000_000;

/// Row-stochastic transition matrix of the request chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    /// `probs[i][j]` is the probability of requesting `j` after `i`.
    pub probs: Vec<Vec<f64>>,
    /// Favored successor of every row (the entry holding the maximum
    /// transition probability when built by [`build_chain`]).
    pub favored: Vec<usize>,
}

impl TransitionMatrix {
    /// Wraps an explicit matrix after checking it. `favored` is taken as the
    /// row argmax (lowest index on ties).
    pub fn from_rows(probs: Vec<Vec<f64>>) -> Result<Self> {
        let favored = probs
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (j, &p)| if p > best.1 { (j, p) } else { best },
                    )
                    .0
            })
            .collect();
        let m = Self { probs, favored };
        m.validate()?;
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.probs.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i]
    }

    /// Checks shape, entry range, row sums and irreducibility.
    pub fn validate(&self) -> Result<()> {
        let f = self.probs.len();
        if f == 0 {
            return Err(Error::Config("empty transition matrix".into()));
        }
        if self.favored.len() != f {
            return Err(Error::Config("favored list length mismatch".into()));
        }
        for (i, row) in self.probs.iter().enumerate() {
            if row.len() != f {
                return Err(Error::Config(format!(
                    "row {i} has {} entries, expected {f}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(format!("row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Config(format!("row {i} sums to {sum}")));
            }
            if self.favored[i] >= f {
                return Err(Error::Config(format!("row {i}: favored index out of range")));
            }
        }
        if !self.is_irreducible() {
            return Err(Error::Config("transition matrix is not irreducible".into()));
        }
        Ok(())
    }

    /// Every state reaches every other state (transitive closure of the
    /// positive-probability graph).
    pub fn is_irreducible(&self) -> bool {
        let f = self.probs.len();
        let mut reach: Vec<Vec<bool>> = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(j, &p)| p > 0.0 || i == j).collect())
            .collect();
        for k in 0..f {
            for i in 0..f {
                if reach[i][k] {
                    let via = reach[k].clone();
                    for (r, v) in reach[i].iter_mut().zip(via) {
                        *r |= v;
                    }
                }
            }
        }
        reach.iter().all(|row| row.iter().all(|&r| r))
    }

    /// Draws the successor of `current`.
    pub fn sample_next<R: Rng + ?Sized>(&self, current: usize, rng: &mut R) -> usize {
        sample_index(&self.probs[current], rng)
    }

    /// Draws a request from the limiting distribution.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        Ok(sample_index(&self.limiting_distribution()?, rng))
    }

    /// Stationary distribution `p = pQ` by power iteration on the lazy chain
    /// `(I + Q) / 2`, which has the same fixed point and converges for
    /// periodic chains too.
    pub fn limiting_distribution(&self) -> Result<Vec<f64>> {
        let f = self.probs.len();
        let mut p = vec![1.0 / f as f64; f];
        for _ in 0..POWER_ITERATION_LIMIT {
            let next = self.lazy_step(&p);
            let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if delta < 1e-15 && self.stationarity_residual(&p) < 1e-12 {
                return Ok(p);
            }
        }
        let residual = self.stationarity_residual(&p);
        if residual < 1e-12 {
            Ok(p)
        } else {
            Err(Error::Numerical(format!(
                "power iteration did not converge (residual {residual:e})"
            )))
        }
    }

    /// `|pQ - p|_1`.
    pub fn stationarity_residual(&self, p: &[f64]) -> f64 {
        self.apply(p).iter().zip(p).map(|(a, b)| (a - b).abs()).sum()
    }

    fn apply(&self, p: &[f64]) -> Vec<f64> {
        let f = self.probs.len();
        let mut out = vec![0.0; f];
        for (i, row) in self.probs.iter().enumerate() {
            for (j, q) in row.iter().enumerate() {
                out[j] += p[i] * q;
            }
        }
        out
    }

    fn lazy_step(&self, p: &[f64]) -> Vec<f64> {
        let mut next: Vec<f64> = self.apply(p).iter().zip(p).map(|(a, b)| 0.5 * (a + b)).collect();
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= sum);
        next
    }
}

/// Inverse-CDF draw; the last index absorbs rounding slack.
fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Random chain where every task moves to one uniformly chosen other task
/// with probability `p_max` and spreads the remaining mass over all other
/// successors in proportion to the magnitudes of uniform draws.
pub fn build_chain<R: Rng + ?Sized>(num_tasks: usize, p_max: f64, rng: &mut R) -> Result<TransitionMatrix> {
    if num_tasks < 2 {
        return Err(Error::Config(format!(
            "request chain needs at least 2 tasks, got {num_tasks}"
        )));
    }
    if !(p_max > 0.0 && p_max < 1.0) {
        return Err(Error::Config(format!("p_max must lie in (0, 1), got {p_max}")));
    }
    let uniform = Uniform::new(-1.0f64, 1.0).expect("valid range");
    let mut probs = Vec::with_capacity(num_tasks);
    let mut favored = Vec::with_capacity(num_tasks);
    for i in 0..num_tasks {
        let mut j = rng.random_range(0..num_tasks - 1);
        if j >= i {
            j += 1;
        }
        let weights = loop {
            let w: Vec<f64> = (0..num_tasks)
                .map(|k| if k == j { 0.0 } else { uniform.sample(rng).abs() })
                .collect();
            // a zero total has probability zero; redraw rather than divide by it
            if w.iter().sum::<f64>() > 0.0 {
                break w;
            }
        };
        let total: f64 = weights.iter().sum();
        let mut row: Vec<f64> = weights.iter().map(|w| (1.0 - p_max) * w / total).collect();
        row[j] = p_max;
        // push rounding error into the favored entry so the row sums to 1
        let sum: f64 = row.iter().sum();
        row[j] += 1.0 - sum;
        probs.push(row);
        favored.push(j);
    }
    let chain = TransitionMatrix { probs, favored };
    if !chain.is_irreducible() {
        // Only possible when some uniform draw is exactly zero.
        return build_chain(num_tasks, p_max, rng);
    }
    chain.validate()?;
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_task_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chain = build_chain(2, 0.7, &mut rng).unwrap();
        assert_eq!(chain.favored, vec![1, 0]);
        for i in 0..2 {
            assert!((chain.probs[i][1 - i] - 0.7).abs() < 1e-15);
            assert!((chain.probs[i][i] - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one_over_many_seeds() {
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = 2 + (seed as usize % 7);
            let chain = build_chain(f, 0.7, &mut rng).unwrap();
            chain.validate().unwrap();
            for (i, row) in chain.probs.iter().enumerate() {
                assert!((row[chain.favored[i]] - 0.7).abs() < 1e-12);
                assert_ne!(chain.favored[i], i);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = build_chain(4, 0.7, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = build_chain(4, 0.7, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_single_task() {
        assert!(matches!(
            build_chain(1, 0.7, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn degenerate_row_always_same_successor() {
        // sampling does not require irreducibility
        let chain = TransitionMatrix {
            probs: vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.5, 0.5, 0.0]],
            favored: vec![0, 2, 0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..1000).all(|_| chain.sample_next(0, &mut rng) == 0));
    }

    #[test]
    fn successor_sequence_is_deterministic() {
        let chain = build_chain(4, 0.7, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cur = 0;
            (0..100)
                .map(|_| {
                    cur = chain.sample_next(cur, &mut rng);
                    cur
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn row_frequencies_match() {
        let chain = build_chain(4, 0.7, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[chain.sample_next(1, &mut rng)] += 1;
        }
        let tv: f64 = 0.5
            * counts
                .iter()
                .zip(chain.row(1))
                .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
                .sum::<f64>();
        assert!(tv < 0.005, "total variation {tv}");
    }

    #[test]
    fn limiting_distribution_examples() {
        // doubly stochastic → uniform
        let ds =
            TransitionMatrix::from_rows(vec![vec![0.2, 0.5, 0.3], vec![0.3, 0.2, 0.5], vec![0.5, 0.3, 0.2]]).unwrap();
        for p in ds.limiting_distribution().unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        // Two states swapping with 0.7; balance p1 * 0.7 = p2 * 0.7.
        let two = TransitionMatrix::from_rows(vec![vec![0.3, 0.7], vec![0.7, 0.3]]).unwrap();
        let p = two.limiting_distribution().unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        // Periodic chain still converges.
        let flip = TransitionMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = flip.limiting_distribution().unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn limiting_distribution_is_fixed_point() {
        for seed in 0..50 {
            let chain = build_chain(5, 0.7, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let p = chain.limiting_distribution().unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for f in 0..5 {
                let rhs: f64 = (0..5).map(|i| p[i] * chain.probs[i][f]).sum();
                assert!((p[f] - rhs).abs() < 1e-12);
            }
            assert!(chain.stationarity_residual(&p) < 1e-10);
        }
    }

    #[test]
    fn reducible_matrix_rejected() {
        let r = TransitionMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
