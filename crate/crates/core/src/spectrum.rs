//! From trained networks to eigenvalues, eigenfunctions and density ratios.
//!
//! Two normalisations are applied to raw outputs: whitening by `R^{-1/2}`
//! (so the functions are orthonormal under the data measure) and rotation
//! by the eigenvectors of `P′P′ᵀ`, where `P′` is the cross-correlation of the
//! whitened outputs. The eigenvalues of `P′P′ᵀ` estimate the leading
//! cross-density eigenvalues, and `ρ(x, x′) = Σᵢ σᵢ φᵢ(x) φᵢ(x′)`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{FmcaError, Result};
use crate::fmca::{batch_acf, batch_ccf, CorrStats};
use crate::linalg::{inv_half_power, sym_eig, SymMatrix, DEFAULT_EIG_FLOOR};
use crate::netfn::MlpParams;

/// Default evaluation batch size for the normalisation statistics.
pub const DEFAULT_EVAL_BATCH: usize = 4096;
/// Whitening ridge for evaluation. Trained outputs often have variance on the
/// order of the training ε, so reusing ε here would shrink the small eigenvalues.
pub const DEFAULT_EVAL_RIDGE: f64 = 1e-10;
/// Largest eigenvalue fed to `log(1 − σ)` in [`total_power`].
pub const TOTAL_POWER_CLAMP: f64 = 1.0 - 1e-6;

/// Rows of `outputs` mapped through `R^{-1/2}`.
pub fn whiten(outputs: ArrayView2<f64>, r: &SymMatrix) -> Result<Array2<f64>> {
    if outputs.ncols() != r.dim() {
        return Err(FmcaError::DimensionMismatch(format!(
            "outputs have {} columns, ACF is {}x{}",
            outputs.ncols(),
            r.dim(),
            r.dim()
        )));
    }
    let w = inv_half_power(r, DEFAULT_EIG_FLOOR)?;
    Ok(outputs.dot(w.as_array()))
}

/// Eigenstructure of the whitened cross-correlation.
#[derive(Clone, Debug)]
pub struct CrossSpectrum {
    /// Leading `min(K, L)` eigenvalues of `P′P′ᵀ`.
    pub sigma: Vec<f64>,
    /// All `L` eigenvalues of `P′ᵀP′`.
    pub sigma_g: Vec<f64>,
    pub q_f: Array2<f64>,
    pub q_g: Array2<f64>,
    pub p_whitened: Array2<f64>,
}

/// `P′ = F̄ᵀḠ/n`, then eigendecompositions of `P′P′ᵀ` and `P′ᵀP′`.
pub fn cross_spectrum(f_bar: ArrayView2<f64>, g_bar: ArrayView2<f64>) -> Result<CrossSpectrum> {
    cross_spectrum_of(batch_ccf(f_bar, g_bar)?)
}

pub fn cross_spectrum_of(p: Array2<f64>) -> Result<CrossSpectrum> {
    let (k, l) = p.dim();
    let ef = sym_eig(&SymMatrix::from_upper(p.dot(&p.t()))?)?;
    let eg = sym_eig(&SymMatrix::from_upper(p.t().dot(&p))?)?;
    Ok(CrossSpectrum {
        sigma: ef.values.iter().take(k.min(l)).copied().collect(),
        sigma_g: eg.values.to_vec(),
        q_f: ef.vectors,
        q_g: eg.vectors,
        p_whitened: p,
    })
}

/// Eigenvalue estimates straight from (bias-corrected) statistics:
/// eigenvalues of `P′P′ᵀ` with `P′ = R_F^{-1/2} P R_G^{-1/2}`.
pub fn stats_spectrum(stats: &CorrStats) -> Result<Vec<f64>> {
    let wf = inv_half_power(&stats.r_f, DEFAULT_EIG_FLOOR)?;
    let wg = inv_half_power(&stats.r_g, DEFAULT_EIG_FLOOR)?;
    let p = wf.as_array().dot(&stats.p_fg).dot(wg.as_array());
    Ok(cross_spectrum_of(p)?.sigma)
}

/// Normalisation transforms and eigenvalues of a trained pair of networks.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    pub sigma: Vec<f64>,
    pub w_f: SymMatrix,
    pub w_g: SymMatrix,
    pub q_f: Array2<f64>,
    pub q_g: Array2<f64>,
}

impl SpectrumResult {
    /// Normalisation from raw outputs on an evaluation batch with ridge `eps`.
    pub fn from_outputs(f_out: ArrayView2<f64>, g_out: ArrayView2<f64>, eps: f64) -> Result<Self> {
        let w_f = inv_half_power(&batch_acf(f_out, eps)?, DEFAULT_EIG_FLOOR)?;
        let w_g = inv_half_power(&batch_acf(g_out, eps)?, DEFAULT_EIG_FLOOR)?;
        let f_bar = f_out.dot(w_f.as_array());
        let g_bar = g_out.dot(w_g.as_array());
        let cs = cross_spectrum(f_bar.view(), g_bar.view())?;
        Ok(SpectrumResult {
            sigma: cs.sigma,
            w_f,
            w_g,
            q_f: cs.q_f,
            q_g: cs.q_g,
        })
    }

    /// Evaluates both networks on `(x, u)` and normalises.
    pub fn fit(f: &MlpParams, g: &MlpParams, x: ArrayView2<f64>, u: ArrayView2<f64>, eps: f64) -> Result<Self> {
        let fo = f.forward(x)?;
        let go = g.forward(u)?;
        SpectrumResult::from_outputs(fo.view(), go.view(), eps)
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `Q_Fᵀ W_F f(x)` for each row of raw outputs.
    pub fn f_eigenfunctions(&self, f_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        if f_out.ncols() != self.w_f.dim() {
            return Err(FmcaError::DimensionMismatch(format!(
                "outputs have {} columns, expected {}",
                f_out.ncols(),
                self.w_f.dim()
            )));
        }
        Ok(f_out.dot(self.w_f.as_array()).dot(&self.q_f))
    }

    pub fn g_eigenfunctions(&self, g_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        if g_out.ncols() != self.w_g.dim() {
            return Err(FmcaError::DimensionMismatch(format!(
                "outputs have {} columns, expected {}",
                g_out.ncols(),
                self.w_g.dim()
            )));
        }
        Ok(g_out.dot(self.w_g.as_array()).dot(&self.q_g))
    }
}

/// Estimated eigenfunctions `φ̂₁..φ̂_K` at each row of `batch`.
pub fn eigenfunctions(f: &MlpParams, res: &SpectrumResult, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    res.f_eigenfunctions(f.forward(batch)?.view())
}

/// `Σᵢ σᵢ aᵢ bᵢ` over the leading `sigma.len()` coordinates.
pub fn cdr_from_features(a: ArrayView1<f64>, b: ArrayView1<f64>, sigma: &[f64]) -> f64 {
    sigma.iter().enumerate().map(|(i, s)| s * (a[i] * b[i])).sum()
}

/// Cross-density ratio estimate between two inputs.
pub fn cdr(f: &MlpParams, res: &SpectrumResult, x: ArrayView1<f64>, x2: ArrayView1<f64>) -> Result<f64> {
    let phi_a = eigenfunctions(f, res, x.insert_axis(ndarray::Axis(0)))?;
    let phi_b = eigenfunctions(f, res, x2.insert_axis(ndarray::Axis(0)))?;
    Ok(cdr_from_features(phi_a.row(0), phi_b.row(0), &res.sigma))
}

/// Pairwise ratio matrix over the rows of `phi`; exactly symmetric.
pub fn cdr_matrix(phi: ArrayView2<f64>, sigma: &[f64]) -> Array2<f64> {
    let n = phi.nrows();
    let mut m = Array2::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let v = cdr_from_features(phi.row(a), phi.row(b), sigma);
            m[[a, b]] = v;
            m[[b, a]] = v;
        }
    }
    m
}

/// Mean diagonal and off-diagonal entries of a square matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagonalReport {
    pub mean_diag: f64,
    pub mean_off: f64,
    /// `mean_off / mean_diag`.
    pub ratio: f64,
}

pub fn diagonal_report(m: ArrayView2<f64>) -> DiagonalReport {
    let n = m.nrows();
    let diag: f64 = m.diag().sum();
    let off = m.sum() - diag;
    let mean_diag = diag / n as f64;
    let mean_off = if n > 1 { off / (n * (n - 1)) as f64 } else { 0.0 };
    DiagonalReport {
        mean_diag,
        mean_off,
        ratio: mean_off / mean_diag,
    }
}

/// `−(1/divisor)·Σ_{i≥2} log(1 − min(σᵢ, 1 − 10⁻⁶))`; the constant eigenvalue
/// `σ₁ = 1` is skipped.
pub fn total_power(sigma: &[f64], divisor: f64) -> f64 {
    -sigma
        .iter()
        .skip(1)
        .map(|&s| (1.0 - s.min(TOTAL_POWER_CLAMP)).ln())
        .sum::<f64>()
        / divisor
}

/// Per-class means of the eigenfunction coordinates, for CDR-based
/// classification: the mean ratio between `x` and the training samples of
/// class `c` is `Σᵢ σᵢ φᵢ(x)·mean_c(φᵢ)`.
#[derive(Clone, Debug)]
pub struct ClassPrototypes {
    pub means: Array2<f64>,
    pub sigma: Vec<f64>,
}

impl ClassPrototypes {
    pub fn fit(phi_train: ArrayView2<f64>, labels: &[usize], n_classes: usize, sigma: &[f64]) -> Result<Self> {
        if labels.len() != phi_train.nrows() {
            return Err(FmcaError::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                phi_train.nrows()
            )));
        }
        let r = sigma.len();
        let mut means = Array2::zeros((n_classes, r));
        let mut counts = vec![0usize; n_classes];
        for (row, &c) in phi_train.rows().into_iter().zip(labels) {
            if c >= n_classes {
                return Err(FmcaError::InvalidArgument(format!("label {c} >= {n_classes} classes")));
            }
            counts[c] += 1;
            let mut m = means.row_mut(c);
            m += &row.slice(s![..r]);
        }
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                means.row_mut(c).mapv_inplace(|v| v / n as f64);
            }
        }
        Ok(ClassPrototypes {
            means,
            sigma: sigma.to_vec(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.means.nrows()
    }

    /// Mean CDR of `phi` against each class.
    pub fn mean_cdr(&self, phi: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(
            self.means
                .rows()
                .into_iter()
                .map(|m| cdr_from_features(phi, m, &self.sigma)),
        )
    }

    /// Class with the highest mean CDR; ties go to the lowest index.
    pub fn predict(&self, phi: ArrayView1<f64>) -> usize {
        let scores = self.mean_cdr(phi);
        let mut best = 0;
        for c in 1..scores.len() {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn whiten_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = rand_mat(10, 3, &mut rng);
        assert_eq!(whiten(f.view(), &SymMatrix::identity(3)).unwrap(), f);
        let halved = whiten(array![[2.0], [-4.0]].view(), &SymMatrix::from_diag(&[4.0])).unwrap();
        assert_eq!(halved, array![[1.0], [-2.0]]);

        let f = rand_mat(500, 5, &mut rng) + 0.3;
        let r = batch_acf(f.view(), 1e-12).unwrap();
        let fb = whiten(f.view(), &r).unwrap();
        let acf = batch_acf(fb.view(), 0.0).unwrap();
        let dev = acf.as_array() - Array2::<f64>::eye(5);
        assert!(dev.iter().all(|d| d.abs() <= 1e-6));
    }

    #[test]
    fn cross_spectrum_diagonal() {
        let cs = cross_spectrum_of(array![[1.0, 0.0], [0.0, 0.5]]).unwrap();
        assert_eq!(cs.sigma, vec![1.0, 0.25]);
        assert_eq!(cs.q_f, Array2::<f64>::eye(2));
        assert_eq!(cs.q_g, Array2::<f64>::eye(2));
    }

    #[test]
    fn matched_outputs_give_unit_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = rand_mat(400, 4, &mut rng);
        let r = batch_acf(f.view(), 1e-12).unwrap();
        let fb = whiten(f.view(), &r).unwrap();
        let cs = cross_spectrum(fb.view(), fb.view()).unwrap();
        assert!(cs.sigma.iter().all(|s| (s - 1.0).abs() < 1e-6));
    }

    #[test]
    fn sides_share_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = rand_mat(300, 5, &mut rng);
        let g = &f.slice(s![.., ..3]) * 0.8 + rand_mat(300, 3, &mut rng);
        let res = SpectrumResult::from_outputs(f.view(), g.view(), 1e-9).unwrap();
        let fb = f.dot(res.w_f.as_array());
        let gb = g.dot(res.w_g.as_array());
        let cs = cross_spectrum(fb.view(), gb.view()).unwrap();
        for i in 0..3 {
            assert!((cs.sigma[i] - cs.sigma_g[i]).abs() <= 1e-9);
        }
        for q in [&res.q_f, &res.q_g] {
            let dev = q.dot(&q.t()) - Array2::<f64>::eye(q.nrows());
            assert!(dev.iter().all(|d| d.abs() <= 1e-8));
        }
    }

    #[test]
    fn cdr_matrix_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = rand_mat(12, 4, &mut rng);
        let m = cdr_matrix(phi.view(), &[1.0, 0.5, 0.2]);
        assert_eq!(m, m.t());
        let direct = cdr_from_features(phi.row(2), phi.row(7), &[1.0, 0.5, 0.2]);
        assert_eq!(m[[2, 7]], direct);
    }

    #[test]
    fn total_power_values() {
        assert_eq!(total_power(&[1.0, 0.0, 0.0, 0.0], 20.0), 0.0);
        let t = total_power(&[1.0, 0.245, 0.057, 0.011, 0.002], 20.0);
        assert!((t - 0.0176).abs() < 1e-4, "{t}");
        assert!((total_power(&[1.0, 0.9], 20.0) - 0.1151).abs() < 1e-4);
        assert!(total_power(&[1.0, 1.0], 20.0).is_finite());
    }

    #[test]
    fn prototypes_break_ties_low() {
        let p = ClassPrototypes {
            means: array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            sigma: vec![1.0, 1.0],
        };
        assert_eq!(p.predict(array![2.0, 0.0].view()), 0);
        assert_eq!(p.predict(array![0.0, 2.0].view()), 2);
    }
}
