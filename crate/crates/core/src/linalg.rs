//! Dense symmetric linear algebra.
//!
//! Everything downstream works with small (K ≤ a few hundred) symmetric
//! matrices: autocorrelation blocks, their joint matrix, whitening transforms
//! and Nyström kernels. The kernels here are cyclic Jacobi for the
//! eigendecomposition and Cholesky for determinants and inverses.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{FmcaError, Result};

/// Off-diagonal Frobenius norm, relative to the full norm, at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-12;
/// Maximum number of cyclic Jacobi sweeps.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Default eigenvalue floor for [`inv_half_power`].
pub const DEFAULT_EIG_FLOOR: f64 = 1e-12;

/// A dense symmetric matrix. Symmetry is exact: `a[i][j] == a[j][i]` bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Array2<f64>);

impl SymMatrix {
    /// Wraps `a`, rejecting non-square, empty or non-symmetric input.
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c || r == 0 {
            return Err(FmcaError::DimensionMismatch(format!(
                "symmetric matrix must be square and non-empty, got {r}x{c}"
            )));
        }
        for i in 0..r {
            for j in (i + 1)..r {
                if a[[i, j]] != a[[j, i]] {
                    return Err(FmcaError::InvalidArgument(format!(
                        "matrix is not symmetric at ({i},{j}): {} vs {}",
                        a[[i, j]],
                        a[[j, i]]
                    )));
                }
            }
        }
        Ok(SymMatrix(a))
    }

    /// Builds a symmetric matrix from the upper triangle of `a`, mirroring it
    /// into the lower triangle. Used for products like `Fᵀ F` whose two
    /// triangles may differ in the last bit.
    pub fn from_upper(mut a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c || r == 0 {
            return Err(FmcaError::DimensionMismatch(format!(
                "symmetric matrix must be square and non-empty, got {r}x{c}"
            )));
        }
        for i in 0..r {
            for j in (i + 1)..r {
                a[[j, i]] = a[[i, j]];
            }
        }
        Ok(SymMatrix(a))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Array2::eye(n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Array2::zeros((n, n)))
    }

    pub fn from_diag(d: &[f64]) -> Self {
        SymMatrix(Array2::from_diag(&Array1::from(d.to_vec())))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// `self * s + other * t`, elementwise; symmetric by construction.
    pub fn scaled_add(&self, s: f64, other: &SymMatrix, t: f64) -> SymMatrix {
        SymMatrix(&self.0 * s + &other.0 * t)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add_ridge(&self, eps: f64) -> SymMatrix {
        let mut a = self.0.clone();
        for i in 0..a.nrows() {
            a[[i, i]] += eps;
        }
        SymMatrix(a)
    }
}

/// Eigenvalues sorted non-increasing with orthonormal eigenvectors in the
/// matching columns. Each column's largest-magnitude entry (lowest index on
/// ties) is non-negative.
#[derive(Clone, Debug)]
pub struct EigPair {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

fn off_diag_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eig(s: &SymMatrix) -> Result<EigPair> {
    let n = s.dim();
    let mut a = s.as_array().clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut converged = false;
    let mut residual = off_diag_norm(&a);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if residual <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sn * akq;
                    a[[k, q]] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - sn * aqk;
                    a[[q, k]] = sn * apk + c * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
        residual = off_diag_norm(&a);
    }
    if !converged && residual > JACOBI_TOL * scale {
        return Err(FmcaError::NoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
            residual,
        });
    }

    let diag: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep their original relative order
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));

    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        values[col] = diag[src];
        let mut best = 0;
        for r in 1..n {
            if v[[r, src]].abs() > v[[best, src]].abs() {
                best = r;
            }
        }
        let sign = if v[[best, src]] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[[r, col]] = sign * v[[r, src]];
        }
    }
    Ok(EigPair { values, vectors })
}

/// Lower Cholesky factor `L` with `S = L Lᵀ`.
pub fn cholesky(s: &SymMatrix) -> Result<Array2<f64>> {
    let a = s.as_array();
    let n = s.dim();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return Err(FmcaError::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut x = a[[i, j]];
            for k in 0..j {
                x -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = x / djj;
        }
    }
    Ok(l)
}

/// `log det S` through the Cholesky factor.
pub fn chol_logdet(s: &SymMatrix) -> Result<f64> {
    let l = cholesky(s)?;
    Ok(2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>())
}

/// Inverse of a lower-triangular matrix with non-zero diagonal.
pub fn lower_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        inv[[j, j]] = 1.0 / l[[j, j]];
        for i in (j + 1)..n {
            let mut x = 0.0;
            for k in j..i {
                x -= l[[i, k]] * inv[[k, j]];
            }
            inv[[i, j]] = x / l[[i, i]];
        }
    }
    inv
}

/// Inverse of an SPD matrix via Cholesky: `S⁻¹ = L⁻ᵀ L⁻¹`.
pub fn inverse(s: &SymMatrix) -> Result<SymMatrix> {
    let l = cholesky(s)?;
    let li = lower_inverse(&l);
    SymMatrix::from_upper(li.t().dot(&li))
}

/// `V diag(max(λ, floor)^{-1/2}) Vᵀ`, exactly symmetric.
pub fn inv_half_power(s: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    if !(floor > 0.0) {
        return Err(FmcaError::InvalidArgument(format!(
            "eigenvalue floor must be positive, got {floor}"
        )));
    }
    let eig = sym_eig(s)?;
    let scale = eig.values.mapv(|l| l.max(floor).powf(-0.5));
    let scaled = &eig.vectors * &scale.insert_axis(Axis(0));
    SymMatrix::from_upper(scaled.dot(&eig.vectors.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        SymMatrix::from_upper(&a + &a.t()).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        SymMatrix::from_upper(a.dot(&a.t()) + Array2::<f64>::eye(n) * 0.1).unwrap()
    }

    fn frob(a: &Array2<f64>) -> f64 {
        a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn rejects_asymmetric() {
        assert!(SymMatrix::new(array![[1.0, 2.0], [2.0000001, 1.0]]).is_err());
        assert!(SymMatrix::new(Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn eig_of_diagonal_is_permutation() {
        let e = sym_eig(&SymMatrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values.to_vec(), vec![3.0, 2.0, 1.0]);
        let expect = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        assert_eq!(e.vectors, expect);
    }

    #[test]
    fn eig_of_2x2() {
        let e = sym_eig(&SymMatrix::new(array![[2.0, 1.0], [1.0, 2.0]]).unwrap()).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[[0, 0]] - h).abs() < 1e-14);
        assert!((e.vectors[[1, 0]] - h).abs() < 1e-14);
        // second column: largest magnitude tie -> index 0 is non-negative
        assert!((e.vectors[[0, 1]] - h).abs() < 1e-14);
        assert!((e.vectors[[1, 1]] + h).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstructs_random() {
        for seed in 0..5 {
            let s = random_sym(8, seed);
            let e = sym_eig(&s).unwrap();
            let rec = (&e.vectors * &e.values.view().insert_axis(Axis(0))).dot(&e.vectors.t());
            let rel = frob(&(&rec - s.as_array())) / frob(s.as_array());
            assert!(rel <= 1e-9, "residual {rel}");
            let orth = e.vectors.dot(&e.vectors.t()) - Array2::<f64>::eye(8);
            assert!(frob(&orth) <= 1e-10);
            for w in e.values.windows(2) {
                assert!(w[0] >= w[1]);
            }
            for c in 0..8 {
                let col = e.vectors.column(c);
                let mut best = 0;
                for r in 1..8 {
                    if col[r].abs() > col[best].abs() {
                        best = r;
                    }
                }
                assert!(col[best] >= 0.0);
            }
        }
    }

    #[test]
    fn logdet_basic() {
        assert_eq!(chol_logdet(&SymMatrix::identity(5)).unwrap(), 0.0);
        let ld = chol_logdet(&SymMatrix::from_diag(&[2.0, 3.0])).unwrap();
        assert!((ld - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logdet_matches_eigen_sum() {
        for seed in 10..15 {
            let s = random_spd(6, seed);
            let e = sym_eig(&s).unwrap();
            let via_eig: f64 = e.values.iter().map(|l| l.ln()).sum();
            assert!((chol_logdet(&s).unwrap() - via_eig).abs() <= 1e-9);
        }
    }

    #[test]
    fn logdet_reports_pivot() {
        let s = SymMatrix::from_diag(&[1.0, -1.0, 2.0]);
        match chol_logdet(&s) {
            Err(FmcaError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inv_half_power_cases() {
        let m = inv_half_power(&SymMatrix::identity(3), DEFAULT_EIG_FLOOR).unwrap();
        assert_eq!(m, SymMatrix::identity(3));
        let m = inv_half_power(&SymMatrix::from_diag(&[4.0, 1.0]), DEFAULT_EIG_FLOOR).unwrap();
        assert_eq!(m.as_array(), &array![[0.5, 0.0], [0.0, 1.0]]);
        for seed in 20..25 {
            let s = random_spd(7, seed);
            let m = inv_half_power(&s, 1e-12).unwrap();
            let msm = m.as_array().dot(s.as_array()).dot(m.as_array());
            assert!(frob(&(msm - Array2::<f64>::eye(7))) <= 1e-8);
            let a = m.as_array();
            for i in 0..7 {
                for j in 0..7 {
                    assert_eq!(a[[i, j]].to_bits(), a[[j, i]].to_bits());
                }
            }
        }
    }

    #[test]
    fn inv_half_power_floors_degenerate() {
        let m = inv_half_power(&SymMatrix::from_diag(&[1.0, 0.0]), 1e-4).unwrap();
        assert!((m.as_array()[[1, 1]] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(inverse(&SymMatrix::identity(4)).unwrap(), SymMatrix::identity(4));
        let inv = inverse(&SymMatrix::from_diag(&[2.0, 4.0])).unwrap();
        let want = array![[0.5, 0.0], [0.0, 0.25]];
        assert!((inv.as_array() - &want).iter().all(|v| v.abs() < 1e-15));
        for seed in 30..35 {
            let s = random_spd(6, seed);
            let inv = inverse(&s).unwrap();
            let r = s.as_array().dot(inv.as_array()) - Array2::<f64>::eye(6);
            assert!(frob(&r) <= 1e-9);
        }
        assert!(matches!(
            inverse(&SymMatrix::from_diag(&[1.0, 0.0])),
            Err(FmcaError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn fischer_inequality_on_whitened_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let n = 40;
            let z = Array2::from_shape_fn((n, 6), |_| rng.random_range(-1.0..1.0));
            let joint = SymMatrix::from_upper(z.t().dot(&z) / n as f64).unwrap();
            let a = SymMatrix::from_upper(joint.as_array().slice(ndarray::s![..3, ..3]).to_owned()).unwrap();
            let c = SymMatrix::from_upper(joint.as_array().slice(ndarray::s![3.., 3..]).to_owned()).unwrap();
            let lhs = chol_logdet(&joint).unwrap();
            let rhs = chol_logdet(&a).unwrap() + chol_logdet(&c).unwrap();
            assert!(lhs <= rhs + 1e-12);
        }
    }
}
