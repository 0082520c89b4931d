use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::HarnessError;
use crate::matrix::Mat;
use crate::rls::{ols_fit, RmdnState};

/// Feature columns regressed in the convergence experiment.
pub const CONVERGE_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCurve {
    pub epsilon: f64,
    /// `gaps[t]`: ‖β_RLS − β_OLS‖₂ after `t + 1` samples.
    pub gaps: Vec<f64>,
}

/// Noiseless linear data: design rows `[x̃…, y, 1]` with `x̃ ~ U(1, 6)`,
/// `y ∈ {0, 1}` alternating, and `z = X·β*` with `β* ~ N(0, 1)`.
pub fn convergence_data(n: usize, p: usize, seed: u64) -> Result<(Mat, Mat), HarnessError> {
    if p < 2 {
        return Err(HarnessError::Config(format!("design width p must be >= 2, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = CONVERGE_FEATURES;
    let beta_star: Vec<f64> = (0..p * h).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = Vec::with_capacity(n * p);
    for i in 0..n {
        for _ in 0..p - 2 {
            x.push(rng.random_range(1.0..6.0));
        }
        x.push((i % 2) as f64);
        x.push(1.0);
    }
    let x = Mat::new(n, p, x)?;
    let mut z = Mat::zeros(n, h);
    for i in 0..n {
        for c in 0..h {
            z[(i, c)] = (0..p).map(|r| x[(i, r)] * beta_star[r * h + c]).sum();
        }
    }
    Ok((x, z))
}

fn l2_gap(a: &Mat, b: &Mat) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// Streams `n` samples one at a time through an unregularized state for each
/// `ε` and records the distance to the full-data least-squares solution.
pub fn estimator_convergence(
    n: usize,
    p: usize,
    eps_grid: &[f64],
    seed: u64,
) -> Result<Vec<ConvergenceCurve>, HarnessError> {
    if n < p {
        return Err(HarnessError::Config(format!("need n >= p, got n={n}, p={p}")));
    }
    let (x, z) = convergence_data(n, p, seed)?;
    let ols = ols_fit(&x, &z)?;
    eps_grid
        .iter()
        .map(|&epsilon| {
            let mut st = RmdnState::new(p, z.cols(), epsilon, 0.0)?;
            let mut gaps = Vec::with_capacity(n);
            for t in 0..n {
                st.update_sample(x.row(t), z.row(t))?;
                gaps.push(l2_gap(st.beta(), &ols));
            }
            Ok(ConvergenceCurve { epsilon, gaps })
        })
        .collect()
}
