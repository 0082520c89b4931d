//! Recursive least-squares regression state for confounder residualization.
//!
//! Features `z` (one column per unit) are regressed on a design row
//! `[confounders…, label, 1]`. The state keeps the coefficient matrix `β`
//! (p×h) and `P`, the running estimate of `(Σ xxᵀ)⁻¹`, initialised to `εI`.
//! Residualization removes only the confounder part, `r = z − x̃·β_x`, so the
//! label-explained component of the features is kept and no labels are needed
//! at evaluation time.
//!
//! `β` is recursive state and is not differentiated through: features keep
//! drifting while the network trains, and the accumulated cross-moments are
//! never recomputed. A stale `Q(N)` is accepted as an estimate.

use thiserror::Error;

use crate::matrix::{self, gram, matmul, matvec, solve_spd, Mat, MatrixError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// One design row: raw confounder values, a binary label and a bias of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfounderDesign {
    pub confounders: Vec<f64>,
    pub label: f64,
}

impl ConfounderDesign {
    pub fn new(confounders: Vec<f64>, label: f64) -> Self {
        ConfounderDesign { confounders, label }
    }

    /// Design width `p = k + 2`.
    pub fn width(&self) -> usize {
        self.confounders.len() + 2
    }

    pub fn row(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.width());
        r.extend_from_slice(&self.confounders);
        r.push(self.label);
        r.push(1.0);
        r
    }
}

/// Stacks `[confounders | labels | 1]` into a B×(k+2) design matrix.
pub fn design_matrix(confounders: &Mat, labels: &[f64]) -> Result<Mat, RlsError> {
    if confounders.rows() != labels.len() {
        return Err(RlsError::Shape(format!(
            "{} confounder rows vs {} labels",
            confounders.rows(),
            labels.len()
        )));
    }
    let k = confounders.cols();
    let mut out = Mat::zeros(labels.len(), k + 2);
    for (i, &y) in labels.iter().enumerate() {
        let row = out.row_mut(i);
        row[..k].copy_from_slice(confounders.row(i));
        row[k] = y;
        row[k + 1] = 1.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmdnState {
    beta: Mat,
    p_inv: Mat,
    epsilon: f64,
    lambda: f64,
    n_seen: u64,
}

impl RmdnState {
    /// Fresh state: `β = 0`, `P = εI`.
    pub fn new(p: usize, h: usize, epsilon: f64, lambda: f64) -> Result<Self, RlsError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(RlsError::Parameter(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(RlsError::Parameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if p == 0 {
            return Err(RlsError::Parameter("design width must be positive".into()));
        }
        Ok(RmdnState {
            beta: Mat::zeros(p, h),
            p_inv: Mat::scaled_identity(p, epsilon),
            epsilon,
            lambda,
            n_seen: 0,
        })
    }

    /// Reassembles a state from stored parts (checkpoints).
    pub fn from_parts(
        beta: Mat,
        p_inv: Mat,
        epsilon: f64,
        lambda: f64,
        n_seen: u64,
    ) -> Result<Self, RlsError> {
        let mut s = Self::new(beta.rows(), beta.cols(), epsilon, lambda)?;
        if p_inv.shape() != (beta.rows(), beta.rows()) {
            return Err(RlsError::Shape(format!(
                "p_inv {:?} does not match beta {:?}",
                p_inv.shape(),
                beta.shape()
            )));
        }
        if !beta.is_finite() || !p_inv.is_finite() {
            return Err(RlsError::NonFinite("from_parts"));
        }
        if p_inv.asymmetry() > 1e-10 * p_inv.max_abs().max(1.0) {
            return Err(RlsError::Parameter("p_inv is not symmetric".into()));
        }
        s.beta = beta;
        s.p_inv = p_inv;
        s.n_seen = n_seen;
        Ok(s)
    }

    pub fn beta(&self) -> &Mat {
        &self.beta
    }

    /// Test hook and FFI setter; bypasses the recursion.
    pub fn set_beta(&mut self, beta: Mat) -> Result<(), RlsError> {
        if beta.shape() != self.beta.shape() {
            return Err(RlsError::Shape(format!(
                "beta {:?} vs {:?}",
                beta.shape(),
                self.beta.shape()
            )));
        }
        self.beta = beta;
        Ok(())
    }

    pub fn p_inv(&self) -> &Mat {
        &self.p_inv
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    /// Design width `p`.
    pub fn design_width(&self) -> usize {
        self.beta.rows()
    }

    /// Number of residualized feature units `h`.
    pub fn features(&self) -> usize {
        self.beta.cols()
    }

    /// `k = p − 2`; zero for designs without label and bias columns.
    pub fn num_confounders(&self) -> usize {
        self.beta.rows().saturating_sub(2)
    }

    /// Absorbs one example: Kalman gain `K = Px/(1+xᵀPx)`, a-priori error
    /// `e = z − βᵀx`, `β += K·eᵀ`, rank-1 downdate of `P`, then `P += λI`.
    pub fn update_sample(&mut self, x: &[f64], z: &[f64]) -> Result<(), RlsError> {
        let (p, h) = self.beta.shape();
        if x.len() != p || z.len() != h {
            return Err(RlsError::Shape(format!(
                "sample ({}, {}) vs state ({p}, {h})",
                x.len(),
                z.len()
            )));
        }
        let px = matvec(&self.p_inv, x)?;
        let denom = 1.0 + x.iter().zip(&px).map(|(a, b)| a * b).sum::<f64>();
        if !(denom > matrix::PIVOT_TOL) {
            return Err(MatrixError::Unstable { denominator: denom }.into());
        }
        let gain: Vec<f64> = px.iter().map(|v| v / denom).collect();

        let mut err = z.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (e, b) in err.iter_mut().zip(self.beta.row(i)) {
                    *e -= xi * b;
                }
            }
        }

        let mut beta = self.beta.clone();
        for (i, &k) in gain.iter().enumerate() {
            for (b, e) in beta.row_mut(i).iter_mut().zip(&err) {
                *b += k * e;
            }
        }
        let mut p_inv = matrix::sm_rank1_inverse_update(&self.p_inv, x)?;
        p_inv.add_diagonal(self.lambda);
        self.commit(beta, p_inv, 1, "update_sample")
    }

    /// Absorbs a mini-batch: `G = I + X·P·Xᵀ`, `K = P·Xᵀ·G⁻¹`,
    /// `E = Z − X·β`, `β += K·E`, Woodbury downdate of `P`, then `P += λI`.
    pub fn update_batch(&mut self, xb: &Mat, zb: &Mat) -> Result<(), RlsError> {
        let (p, h) = self.beta.shape();
        if xb.rows() == 0 {
            return Err(RlsError::Parameter("empty batch".into()));
        }
        if xb.cols() != p || zb.cols() != h || zb.rows() != xb.rows() {
            return Err(RlsError::Shape(format!(
                "batch x {:?}, z {:?} vs state ({p}, {h})",
                xb.shape(),
                zb.shape()
            )));
        }
        // y = G⁻¹·X·P, so K = yᵀ.
        let (px_t, y) = matrix::woodbury_parts(&self.p_inv, xb)?;
        let gain = y.transpose();
        let mut err = zb.clone();
        err.sub_assign(&matmul(xb, &self.beta)?)?;
        let mut beta = self.beta.clone();
        beta.add_assign(&matmul(&gain, &err)?)?;

        let mut p_inv = self.p_inv.clone();
        p_inv.sub_assign(&matmul(&px_t, &y)?)?;
        p_inv.symmetrize();
        p_inv.add_diagonal(self.lambda);
        self.commit(beta, p_inv, xb.rows() as u64, "update_batch")
    }

    fn commit(
        &mut self,
        beta: Mat,
        p_inv: Mat,
        n: u64,
        op: &'static str,
    ) -> Result<(), RlsError> {
        if !beta.is_finite() || !p_inv.is_finite() {
            return Err(RlsError::NonFinite(op));
        }
        self.beta = beta;
        self.p_inv = p_inv;
        self.n_seen += n;
        Ok(())
    }

    /// `r = z − x̃·β_x`, using only the first `k` rows of `β`. Pure.
    pub fn residualize(&self, confounders: &Mat, z: &Mat) -> Result<Mat, RlsError> {
        let mut r = z.clone();
        self.residualize_in_place(confounders, r.data_mut(), z.rows())?;
        Ok(r)
    }

    /// In-place variant over a row-major B×h buffer.
    pub fn residualize_in_place(
        &self,
        confounders: &Mat,
        z: &mut [f64],
        rows: usize,
    ) -> Result<(), RlsError> {
        let k = self.num_confounders();
        let h = self.features();
        if confounders.cols() != k || confounders.rows() != rows || z.len() != rows * h {
            return Err(RlsError::Shape(format!(
                "confounders {:?}, features {}x{} vs state k={k}, h={h}",
                confounders.shape(),
                rows,
                if rows == 0 { 0 } else { z.len() / rows }
            )));
        }
        for (b, zrow) in z.chunks_exact_mut(h.max(1)).enumerate().take(rows) {
            for (c, &xv) in confounders.row(b).iter().enumerate() {
                if xv != 0.0 {
                    for (zv, bv) in zrow.iter_mut().zip(self.beta.row(c)) {
                        *zv -= xv * bv;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Closed-form least squares `β = (XᵀX)⁻¹Xᵀz`.
pub fn ols_fit(x_all: &Mat, z_all: &Mat) -> Result<Mat, RlsError> {
    if x_all.rows() != z_all.rows() {
        return Err(RlsError::Shape(format!(
            "x {:?} vs z {:?}",
            x_all.shape(),
            z_all.shape()
        )));
    }
    if x_all.rows() < x_all.cols() {
        return Err(MatrixError::Singular {
            row: x_all.rows(),
            pivot: 0.0,
        }
        .into());
    }
    let xtx = gram(x_all);
    let xtz = matmul(&x_all.transpose(), z_all)?;
    Ok(solve_spd(&xtx, &xtz)?)
}

/// Batch estimator of metadata normalization: `β = N·Σ⁻¹·mean_b(x·zᵀ)` with
/// `Σ⁻¹ = (XᵀX)⁻¹` precomputed over the whole training set.
pub fn mdn_batch_beta(
    sigma_inv: &Mat,
    xb: &Mat,
    zb: &Mat,
    n_total: usize,
) -> Result<Mat, RlsError> {
    let p = sigma_inv.rows();
    if sigma_inv.cols() != p || xb.cols() != p || xb.rows() != zb.rows() || xb.rows() == 0 {
        return Err(RlsError::Shape(format!(
            "sigma_inv {:?}, x {:?}, z {:?}",
            sigma_inv.shape(),
            xb.shape(),
            zb.shape()
        )));
    }
    let mut moment = matmul(&xb.transpose(), zb)?;
    moment.scale(n_total as f64 / xb.rows() as f64);
    Ok(matmul(sigma_inv, &moment)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_data(rng: &mut ChaCha8Rng, n: usize, noise: f64) -> (Mat, Mat) {
        let mut x = Mat::zeros(n, 3);
        let mut z = Mat::zeros(n, 2);
        for i in 0..n {
            let c = rng.random_range(1.0..6.0);
            let y = (i % 2) as f64;
            x.row_mut(i).copy_from_slice(&[c, y, 1.0]);
            z[(i, 0)] = 3.0 * c + y + 0.5 + noise * rng.random_range(-1.0..1.0);
            z[(i, 1)] = -1.0 * c + 2.0 * y - 0.25 + noise * rng.random_range(-1.0..1.0);
        }
        (x, z)
    }

    fn l2(a: &Mat, b: &Mat) -> f64 {
        a.sub(b).unwrap().frobenius()
    }

    #[test]
    fn init_state_cases() {
        let s = RmdnState::new(3, 2, 100.0, 0.0).unwrap();
        assert_eq!(s.p_inv(), &Mat::scaled_identity(3, 100.0));
        assert_eq!(s.beta(), &Mat::zeros(3, 2));
        assert_eq!(s.n_seen(), 0);
        let s = RmdnState::new(3, 2, 1.0, 0.0).unwrap();
        assert_eq!(s.p_inv(), &Mat::identity(3));
        assert!(matches!(RmdnState::new(3, 2, 0.0, 0.0), Err(RlsError::Parameter(_))));
        assert!(matches!(RmdnState::new(3, 2, 1.0, -1.0), Err(RlsError::Parameter(_))));
    }

    #[test]
    fn scalar_sample_update() {
        let mut s = RmdnState::new(1, 1, 1.0, 0.0).unwrap();
        s.update_sample(&[1.0], &[2.0]).unwrap();
        assert_eq!(s.beta().data(), &[1.0]);
        assert_eq!(s.p_inv().data(), &[0.5]);
        assert_eq!(s.n_seen(), 1);
    }

    #[test]
    fn zero_error_leaves_beta() {
        let mut s = RmdnState::new(3, 2, 10.0, 0.0).unwrap();
        s.set_beta(Mat::from_rows(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]))
            .unwrap();
        let before = s.beta().clone();
        let x = [2.0, 1.0, 1.0];
        let z = matvec(&before.transpose(), &x).unwrap();
        let p_before = s.p_inv().clone();
        s.update_sample(&x, &z).unwrap();
        assert_eq!(s.beta(), &before);
        assert!(s.p_inv().frobenius() < p_before.frobenius());

        let xb = Mat::from_rows(&[[1.0, 0.0, 1.0], [4.0, 1.0, 1.0]]);
        let zb = matmul(&xb, &before).unwrap();
        s.update_batch(&xb, &zb).unwrap();
        assert_eq!(s.beta(), &before);
    }

    #[test]
    fn batch_of_one_is_sample_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, z) = linear_data(&mut rng, 20, 0.3);
        let mut a = RmdnState::new(3, 2, 10.0, 1e-3).unwrap();
        let mut b = a.clone();
        for i in 0..20 {
            a.update_sample(x.row(i), z.row(i)).unwrap();
            b.update_batch(&x.row_range(i, i + 1), &z.row_range(i, i + 1))
                .unwrap();
        }
        let rel = a.beta().sub(b.beta()).unwrap().max_abs() / a.beta().max_abs();
        assert!(rel < 1e-12, "{rel}");
        let rel = a.p_inv().sub(b.p_inv()).unwrap().max_abs() / a.p_inv().max_abs();
        assert!(rel < 1e-12, "{rel}");
    }

    #[test]
    fn half_batches_match_full_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, z) = linear_data(&mut rng, 32, 0.5);
        let mut full = RmdnState::new(3, 2, 100.0, 0.0).unwrap();
        full.update_batch(&x, &z).unwrap();
        let mut halves = RmdnState::new(3, 2, 100.0, 0.0).unwrap();
        halves
            .update_batch(&x.row_range(0, 16), &z.row_range(0, 16))
            .unwrap();
        halves
            .update_batch(&x.row_range(16, 32), &z.row_range(16, 32))
            .unwrap();
        let rel = l2(full.beta(), halves.beta()) / full.beta().frobenius();
        assert!(rel < 1e-6, "{rel}");
        assert_eq!(halves.n_seen(), 32);
    }

    #[test]
    fn streaming_converges_to_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, z) = linear_data(&mut rng, 2048, 0.5);
        let ols = ols_fit(&x, &z).unwrap();
        let mut s = RmdnState::new(3, 2, 1000.0, 0.0).unwrap();
        for i in 0..2048 {
            s.update_sample(x.row(i), z.row(i)).unwrap();
        }
        assert!(l2(s.beta(), &ols) < 1e-2);
    }

    #[test]
    fn residualize_cases() {
        let s = RmdnState::new(3, 2, 1.0, 0.0).unwrap();
        let z = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(s.residualize(&Mat::column(&[5.0, 6.0]), &z).unwrap(), z);

        let mut s = RmdnState::new(3, 1, 1.0, 0.0).unwrap();
        s.set_beta(Mat::column(&[2.0, 7.0, 11.0])).unwrap();
        let r = s
            .residualize(&Mat::column(&[1.0]), &Mat::column(&[5.0]))
            .unwrap();
        assert_eq!(r.data(), &[3.0]);

        assert!(matches!(
            s.residualize(&Mat::zeros(1, 2), &Mat::column(&[5.0])),
            Err(RlsError::Shape(_))
        ));
    }

    #[test]
    fn ols_residual_orthogonal_to_confounder() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, z) = linear_data(&mut rng, 500, 0.2);
        let z = z.col_range(0, 1);
        let beta = ols_fit(&x, &z).unwrap();
        let mut s = RmdnState::new(3, 1, 1.0, 0.0).unwrap();
        s.set_beta(beta).unwrap();
        let conf = x.col_range(0, 1);
        // Full OLS residual (all design columns) is orthogonal to x̃.
        let full = z.sub(&matmul(&x, s.beta()).unwrap()).unwrap();
        let dot: f64 = (0..500).map(|i| conf[(i, 0)] * full[(i, 0)]).sum();
        assert!(dot.abs() < 1e-6 * z.frobenius());
        // Confounder-only residual keeps the label component.
        let r = s.residualize(&conf, &z).unwrap();
        assert!(r.sub(&full).unwrap().max_abs() > 0.1);
    }

    #[test]
    fn ols_cases() {
        let b = ols_fit(&Mat::column(&[2.0]), &Mat::column(&[6.0])).unwrap();
        assert_eq!(b.data(), &[3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, _) = linear_data(&mut rng, 50, 0.0);
        let truth = Mat::from_rows(&[[1.5, -2.0], [0.25, 4.0], [-3.0, 0.5]]);
        let z = matmul(&x, &truth).unwrap();
        let b = ols_fit(&x, &z).unwrap();
        assert!(b.sub(&truth).unwrap().max_abs() / truth.max_abs() < 1e-10);
        let collinear = Mat::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        assert!(ols_fit(&collinear, &Mat::column(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn mdn_full_batch_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, z) = linear_data(&mut rng, 200, 0.5);
        let sigma_inv = solve_spd(&gram(&x), &Mat::identity(3)).unwrap();
        let mdn = mdn_batch_beta(&sigma_inv, &x, &z, 200).unwrap();
        let ols = ols_fit(&x, &z).unwrap();
        assert!(mdn.sub(&ols).unwrap().max_abs() / ols.max_abs() < 1e-10);
        let zero = mdn_batch_beta(&sigma_inv, &x, &Mat::zeros(200, 2), 200).unwrap();
        assert_eq!(zero, Mat::zeros(3, 2));
        let small = mdn_batch_beta(&sigma_inv, &x.row_range(0, 2), &z.row_range(0, 2), 200)
            .unwrap();
        assert!(small.sub(&ols).unwrap().max_abs() > 1e-3);
    }

    #[test]
    fn failed_update_leaves_state_untouched() {
        let mut s = RmdnState::new(3, 1, 1.0, 0.0).unwrap();
        let before = s.clone();
        assert!(s.update_sample(&[1.0, 2.0], &[1.0]).is_err());
        assert!(s
            .update_batch(&Mat::from_rows(&[[f64::NAN, 0.0, 1.0]]), &Mat::column(&[1.0]))
            .is_err());
        assert_eq!(s, before);
    }
}
