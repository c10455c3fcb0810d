//! Ground-truth spectra for the synthetic problems.
//!
//! Discrete joints get exact cross-density kernels; the Gaussian has the
//! geometric (Mehler) spectrum; anything with an evaluable 2-D density goes
//! through a Nyström discretisation.

use ndarray::{Array1, Array2};

use crate::datagen::{check_active_cells, moon_point, spiral_point, GaussModel, Gmm, McModel, Shape};
use crate::error::{FmcaError, Result};
use crate::linalg::{sym_eig, EigPair, SymMatrix};

/// Cross density `p(x, x′)` of a discrete pair and its symmetric kernel
/// `K(i, j) = p(i, j) / √(pᵢ pⱼ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCdkf {
    pub n_states: usize,
    pub cross: Array2<f64>,
    pub kernel: SymMatrix,
    pub marginal: Array1<f64>,
}

impl DiscreteCdkf {
    /// Composes `x → u → x′` from a joint table `p(x = i, u = j)`:
    /// `cross[i][j] = Σ_u p(i, u) p(j, u) / p(u)`.
    pub fn from_joint(joint: &Array2<f64>) -> Result<Self> {
        let (nx, nu) = joint.dim();
        if nx == 0 || nu == 0 {
            return Err(FmcaError::InvalidArgument("empty joint table".into()));
        }
        if joint.iter().any(|&p| p < 0.0) || (joint.sum() - 1.0).abs() > 1e-12 {
            return Err(FmcaError::InvalidArgument("joint table is not a distribution".into()));
        }
        let pu = joint.sum_axis(ndarray::Axis(0));
        if let Some(u) = pu.iter().position(|&p| p <= 0.0) {
            return Err(FmcaError::ZeroMarginal(u));
        }
        let mut cross = Array2::zeros((nx, nx));
        for i in 0..nx {
            for j in 0..nx {
                cross[[i, j]] = (0..nu).map(|u| joint[[i, u]] * joint[[j, u]] / pu[u]).sum();
            }
        }
        DiscreteCdkf::from_cross(cross)
    }

    pub fn from_cross(cross: Array2<f64>) -> Result<Self> {
        let n = cross.nrows();
        if cross.dim() != (n, n) || n == 0 {
            return Err(FmcaError::DimensionMismatch(format!(
                "cross density is {:?}",
                cross.dim()
            )));
        }
        if cross.iter().any(|&p| p < 0.0) || (cross.sum() - 1.0).abs() > 1e-12 {
            return Err(FmcaError::InvalidArgument("cross density is not a distribution".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (cross[[i, j]] - cross[[j, i]]).abs() > 1e-12 {
                    return Err(FmcaError::InvalidArgument(format!(
                        "cross density is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let marginal = cross.sum_axis(ndarray::Axis(1));
        if let Some(i) = marginal.iter().position(|&p| p <= 0.0) {
            return Err(FmcaError::ZeroMarginal(i));
        }
        let kernel = SymMatrix::from_upper(Array2::from_shape_fn((n, n), |(i, j)| {
            cross[[i, j]] / (marginal[i] * marginal[j]).sqrt()
        }))?;
        Ok(DiscreteCdkf {
            n_states: n,
            cross,
            kernel,
            marginal,
        })
    }
}

/// Cross density of a Markov chain model through Bayes inversion of its transition.
pub fn mc_cross_density(m: &McModel) -> Result<DiscreteCdkf> {
    DiscreteCdkf::from_joint(&m.joint())
}

/// Eigendecomposition of the kernel matrix.
pub fn discrete_spectrum(d: &DiscreteCdkf) -> Result<EigPair> {
    sym_eig(&d.kernel)
}

/// Spectrum of the `k`-fold composed cross density, built by applying the
/// conditional map `x → x′` `k` times.
pub fn recursion_power_spectrum(d: &DiscreteCdkf, k: u32) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(FmcaError::InvalidArgument("k must be >= 1".into()));
    }
    let n = d.n_states;
    let step = Array2::from_shape_fn((n, n), |(i, j)| d.cross[[i, j]] / d.marginal[i]);
    let mut power = step.clone();
    for _ in 1..k {
        power = power.dot(&step);
    }
    let kernel = Array2::from_shape_fn((n, n), |(i, j)| {
        d.marginal[i] * power[[i, j]] / (d.marginal[i] * d.marginal[j]).sqrt()
    });
    Ok(sym_eig(&SymMatrix::from_upper(kernel)?)?.values.to_vec())
}

/// Maximal correlation of a discrete joint `p(x, u)`: the second singular
/// value of `D_x^{-1/2} P D_u^{-1/2}`.
pub fn brute_maximal_correlation(joint: &Array2<f64>) -> Result<f64> {
    let px = joint.sum_axis(ndarray::Axis(1));
    let pu = joint.sum_axis(ndarray::Axis(0));
    if let Some(i) = px.iter().position(|&p| p <= 0.0) {
        return Err(FmcaError::ZeroMarginal(i));
    }
    if let Some(u) = pu.iter().position(|&p| p <= 0.0) {
        return Err(FmcaError::ZeroMarginal(u));
    }
    let b = Array2::from_shape_fn(joint.dim(), |(i, u)| joint[[i, u]] / (px[i] * pu[u]).sqrt());
    let small = if b.nrows() <= b.ncols() {
        b.dot(&b.t())
    } else {
        b.t().dot(&b)
    };
    let values = sym_eig(&SymMatrix::from_upper(small)?)?.values;
    Ok(values.get(1).copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Geometric spectrum `ρ^{2(i−1)}` of the bivariate Gaussian cross density.
pub fn mehler_spectrum(rho: f64, count: usize) -> Result<Vec<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(FmcaError::InvalidArgument(format!("|rho| must be < 1, got {rho}")));
    }
    Ok((0..count).map(|i| (rho * rho).powi(i as i32)).collect())
}

/// Rectangle `[x0, x1] × [u0, u1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub x: (f64, f64),
    pub u: (f64, f64),
}

/// A joint density `p(x, u)` that can be evaluated pointwise.
pub trait JointDensity {
    fn density(&self, x: f64, u: f64) -> f64;
    /// Region holding essentially all of the mass.
    fn domain(&self) -> Domain;
}

fn normal_pdf2(dx: f64, du: f64, sx: f64, su: f64, rho: f64) -> f64 {
    let zx = dx / sx;
    let zu = du / su;
    let q = (zx * zx - 2.0 * rho * zx * zu + zu * zu) / (1.0 - rho * rho);
    (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * sx * su * (1.0 - rho * rho).sqrt())
}

impl JointDensity for GaussModel {
    fn density(&self, x: f64, u: f64) -> f64 {
        normal_pdf2(x, u, 1.0, 1.0, self.rho)
    }

    fn domain(&self) -> Domain {
        Domain {
            x: (-6.0, 6.0),
            u: (-6.0, 6.0),
        }
    }
}

impl JointDensity for Gmm {
    fn density(&self, x: f64, u: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * normal_pdf2(x - c.mean[0], u - c.mean[1], c.std[0], c.std[1], c.rho))
            .sum()
    }

    fn domain(&self) -> Domain {
        let fold = |axis: usize| {
            self.components
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    (
                        lo.min(c.mean[axis] - 6.0 * c.std[axis]),
                        hi.max(c.mean[axis] + 6.0 * c.std[axis]),
                    )
                })
        };
        Domain { x: fold(0), u: fold(1) }
    }
}

const CURVE_NODES: usize = 1024;

impl JointDensity for Shape {
    fn density(&self, x: f64, u: f64) -> f64 {
        match self {
            Shape::Gmm(g) => g.density(x, u),
            Shape::TwoMoons { noise } => {
                // uniform t on [0, π] for each moon, each moon half the mass
                let mut acc = 0.0;
                for moon in 0..2 {
                    for i in 0..CURVE_NODES {
                        let t = std::f64::consts::PI * (i as f64 + 0.5) / CURVE_NODES as f64;
                        let (cx, cy) = moon_point(moon, t);
                        acc += normal_pdf2(x - cx, u - cy, *noise, *noise, 0.0);
                    }
                }
                0.5 * acc / CURVE_NODES as f64
            }
            Shape::Spiral { turns, noise } => {
                let mut acc = 0.0;
                for arm in 0..2 {
                    for i in 0..CURVE_NODES {
                        let t = (i as f64 + 0.5) / CURVE_NODES as f64;
                        let (cx, cy) = spiral_point(*turns, arm, t);
                        acc += normal_pdf2(x - cx, u - cy, *noise, *noise, 0.0);
                    }
                }
                0.5 * acc / CURVE_NODES as f64
            }
            Shape::Check { cells } => {
                let n = *cells as f64;
                if !(0.0..=n).contains(&x) || !(0.0..=n).contains(&u) {
                    return 0.0;
                }
                // the upper edge belongs to the last cell
                let ci = (x.floor() as usize).min(cells - 1);
                let cj = (u.floor() as usize).min(cells - 1);
                if (ci + cj) % 2 == 0 {
                    1.0 / check_active_cells(*cells).len() as f64
                } else {
                    0.0
                }
            }
        }
    }

    fn domain(&self) -> Domain {
        match self {
            Shape::Gmm(g) => g.domain(),
            Shape::TwoMoons { noise } => Domain {
                x: (-1.0 - 6.0 * noise, 2.0 + 6.0 * noise),
                u: (-0.5 - 6.0 * noise, 1.0 + 6.0 * noise),
            },
            Shape::Spiral { noise, .. } => Domain {
                x: (-1.0 - 6.0 * noise, 1.0 + 6.0 * noise),
                u: (-1.0 - 6.0 * noise, 1.0 + 6.0 * noise),
            },
            Shape::Check { cells } => Domain {
                x: (0.0, *cells as f64),
                u: (0.0, *cells as f64),
            },
        }
    }
}

/// Product of two independent standard normals.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProductGaussian;

impl JointDensity for ProductGaussian {
    fn density(&self, x: f64, u: f64) -> f64 {
        normal_pdf2(x, u, 1.0, 1.0, 0.0)
    }

    fn domain(&self) -> Domain {
        Domain {
            x: (-6.0, 6.0),
            u: (-6.0, 6.0),
        }
    }
}

/// Smallest marginal mass accepted on the truncated domain.
pub const NYSTROM_MIN_MASS: f64 = 1.0 - 1e-3;

fn trapezoid(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (n - 1) as f64;
    let nodes = (0..n).map(|i| lo + h * i as f64).collect();
    let weights = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect();
    (nodes, weights)
}

/// Leading `count` eigenvalues of the cross-density operator of a 2-D
/// density, discretised with trapezoidal weights on a `grid × grid` mesh.
pub fn nystrom_spectrum(density: &dyn JointDensity, grid: usize, count: usize) -> Result<Vec<f64>> {
    if grid < 64 {
        return Err(FmcaError::InvalidArgument(format!(
            "grid must have >= 64 points per axis, got {grid}"
        )));
    }
    let dom = density.domain();
    let (xs, wx) = trapezoid(dom.x.0, dom.x.1, grid);
    let (us, wu) = trapezoid(dom.u.0, dom.u.1, grid);
    let p = Array2::from_shape_fn((grid, grid), |(i, j)| density.density(xs[i], us[j]));
    let px: Vec<f64> = (0..grid).map(|i| (0..grid).map(|j| wu[j] * p[[i, j]]).sum()).collect();
    let pu: Vec<f64> = (0..grid).map(|j| (0..grid).map(|i| wx[i] * p[[i, j]]).sum()).collect();
    let mass: f64 = (0..grid).map(|i| wx[i] * px[i]).sum();
    if mass < NYSTROM_MIN_MASS {
        return Err(FmcaError::DomainTooSmall {
            mass,
            required: NYSTROM_MIN_MASS,
        });
    }
    let a = Array2::from_shape_fn((grid, grid), |(i, j)| {
        if px[i] > 0.0 && pu[j] > 0.0 {
            (wx[i] * wu[j]).sqrt() * p[[i, j]] / (px[i] * pu[j]).sqrt()
        } else {
            0.0
        }
    });
    let values = sym_eig(&SymMatrix::from_upper(a.dot(&a.t()))?)?.values;
    Ok(values.iter().take(count).copied().collect())
}

/// Composes `p(x′|x) = ∫ N(x′; ρu, 1−ρ²) N(u; ρx, 1−ρ²) du` by quadrature
/// and reports its linear mean coefficient and variance.
pub fn gauss_cross_conditional_check(rho: f64) -> Result<(f64, f64)> {
    if !(rho.abs() < 1.0) {
        return Err(FmcaError::InvalidArgument(format!("|rho| must be < 1, got {rho}")));
    }
    let s = (1.0 - rho * rho).sqrt();
    let gauss = |z: f64, mean: f64, sd: f64| {
        let t = (z - mean) / sd;
        (-0.5 * t * t).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let nodes = 1601;
    // std of x′ is at most s + |ρ|·s by the triangle inequality
    let spread = s * (1.0 + rho.abs());
    let moments = |x: f64| {
        let (us, wu) = trapezoid(rho * x - 12.0 * s, rho * x + 12.0 * s, nodes);
        let (xs, wx) = trapezoid(rho * rho * x - 12.0 * spread, rho * rho * x + 12.0 * spread, nodes);
        let inner: Vec<f64> = us.iter().map(|&u| gauss(u, rho * x, s)).collect();
        let q: Vec<f64> = xs
            .iter()
            .map(|&xp| {
                us.iter()
                    .zip(&wu)
                    .zip(&inner)
                    .map(|((&u, &w), &pu)| w * pu * gauss(xp, rho * u, s))
                    .sum()
            })
            .collect();
        let mass: f64 = q.iter().zip(&wx).map(|(q, w)| q * w).sum();
        let mean: f64 = q.iter().zip(&wx).zip(&xs).map(|((q, w), x)| q * w * x).sum::<f64>() / mass;
        let var: f64 = q
            .iter()
            .zip(&wx)
            .zip(&xs)
            .map(|((q, w), x)| q * w * (x - mean) * (x - mean))
            .sum::<f64>()
            / mass;
        (mean, var)
    };
    let (m0, v0) = moments(0.0);
    let (m1, _) = moments(1.0);
    Ok((m1 - m0, v0))
}
