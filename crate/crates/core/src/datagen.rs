//! Synthetic pair generators and coding schemes.
//!
//! A [`PairedDataset`] is either a generative model that streams fresh
//! `(x, u)` pairs (Markov chain, correlated Gaussian, 2-D shapes read as
//! `x = first coordinate`, `u = second coordinate`), or a finite table of
//! inputs whose reference `u` comes from a coding scheme.

use std::io::{self, Write};

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FmcaError, Result};
use crate::linalg::{cholesky, lower_inverse, SymMatrix};
use crate::textio::format_f64;

/// Mixes a base seed with a stream tag (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn one_hot(indices: &[usize], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), width));
    for (r, &i) in indices.iter().enumerate() {
        out[[r, i]] = 1.0;
    }
    out
}

/// Discrete-state Markov chain `x → u` with a prior over `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct McModel {
    pub n_states: usize,
    pub p_alpha: f64,
    pub transition: Array2<f64>,
    pub prior: Array1<f64>,
}

impl McModel {
    /// Random chain: off-diagonal mass `U(0, (1 − p_α)/n)`, diagonal entry `j`
    /// (1-based) boosted by `(1 + j)·p_α`, rows normalised, uniform prior.
    pub fn build(p_alpha: f64, n_states: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_alpha) {
            return Err(FmcaError::InvalidArgument(format!(
                "p_alpha must be in [0,1], got {p_alpha}"
            )));
        }
        if n_states == 0 {
            return Err(FmcaError::InvalidArgument("n_states must be positive".into()));
        }
        let mut rng = rng_from(seed);
        let upper = (1.0 - p_alpha) / n_states as f64;
        let mut t = Array2::from_shape_fn((n_states, n_states), |_| rng.random::<f64>() * upper);
        for j in 0..n_states {
            t[[j, j]] += (2 + j) as f64 * p_alpha;
        }
        for mut row in t.rows_mut() {
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        Ok(McModel {
            n_states,
            p_alpha,
            transition: t,
            prior: Array1::from_elem(n_states, 1.0 / n_states as f64),
        })
    }

    pub fn from_parts(transition: Array2<f64>, prior: Array1<f64>) -> Result<Self> {
        let n = prior.len();
        if transition.dim() != (n, n) || n == 0 {
            return Err(FmcaError::DimensionMismatch(format!(
                "transition {:?} does not match prior of length {n}",
                transition.dim()
            )));
        }
        let bad_row = transition
            .rows()
            .into_iter()
            .position(|r| r.iter().any(|&v| v < 0.0) || (r.sum() - 1.0).abs() > 1e-12);
        if let Some(r) = bad_row {
            return Err(FmcaError::InvalidArgument(format!(
                "transition row {r} is not a distribution"
            )));
        }
        if prior.iter().any(|&v| v < 0.0) || (prior.sum() - 1.0).abs() > 1e-12 {
            return Err(FmcaError::InvalidArgument("prior is not a distribution".into()));
        }
        Ok(McModel {
            n_states: n,
            p_alpha: f64::NAN,
            transition,
            prior,
        })
    }

    /// Every row of the transition equals `row`, so `u` is independent of `x`.
    pub fn independent(row: &[f64]) -> Result<Self> {
        let n = row.len();
        let t = Array2::from_shape_fn((n, n), |(_, j)| row[j]);
        McModel::from_parts(t, Array1::from_elem(n, 1.0 / n as f64))
    }

    /// Joint table `p(x = i, u = j) = prior_i · T_ij`.
    pub fn joint(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.transition.dim(), |(i, j)| self.prior[i] * self.transition[[i, j]])
    }

    pub fn sample_states<R: Rng>(&self, n: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
        let prior = WeightedIndex::new(self.prior.iter().copied()).expect("valid prior");
        let rows: Vec<WeightedIndex<f64>> = self
            .transition
            .rows()
            .into_iter()
            .map(|r| WeightedIndex::new(r.iter().copied()).expect("valid transition row"))
            .collect();
        let mut xs = Vec::with_capacity(n);
        let mut us = Vec::with_capacity(n);
        for _ in 0..n {
            let x = prior.sample(rng);
            xs.push(x);
            us.push(rows[x].sample(rng));
        }
        (xs, us)
    }

    /// One-hot encoded pairs; `x` from the prior, `u` from the transition row.
    pub fn sample(&self, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let (xs, us) = self.sample_states(n, &mut rng_from(seed));
        (one_hot(&xs, self.n_states), one_hot(&us, self.n_states))
    }
}

/// Standard bivariate Gaussian with correlation `rho`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussModel {
    pub rho: f64,
}

impl GaussModel {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(FmcaError::InvalidArgument(format!("|rho| must be < 1, got {rho}")));
        }
        Ok(GaussModel { rho })
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Array2<f64>) {
        let mut x = Array2::zeros((n, 1));
        let mut u = Array2::zeros((n, 1));
        let tail = (1.0 - self.rho * self.rho).sqrt();
        for i in 0..n {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            x[[i, 0]] = z1;
            u[[i, 0]] = self.rho * z1 + tail * z2;
        }
        (x, u)
    }

    /// `x ~ N(0,1)`, `u | x ~ N(ρx, 1 − ρ²)`.
    pub fn sample(&self, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        self.sample_with(n, &mut rng_from(seed))
    }
}

/// One bivariate Gaussian component of a mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    pub components: Vec<GmmComponent>,
}

impl Gmm {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(FmcaError::InvalidArgument(
                "mixture needs at least one component".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &components {
            if !(c.weight > 0.0) || !(c.std[0] > 0.0) || !(c.std[1] > 0.0) || !(c.rho.abs() < 1.0) {
                return Err(FmcaError::InvalidArgument(format!("invalid mixture component {c:?}")));
            }
        }
        let components = components
            .into_iter()
            .map(|c| GmmComponent {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(Gmm { components })
    }

    /// `count` isotropic components with equal weights, means evenly spaced on a circle.
    pub fn ring(count: usize, radius: f64, std: f64) -> Result<Self> {
        Gmm::new(
            (0..count)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                    GmmComponent {
                        weight: 1.0,
                        mean: [radius * a.cos(), radius * a.sin()],
                        std: [std, std],
                        rho: 0.0,
                    }
                })
                .collect(),
        )
    }
}

/// Two-dimensional toy distributions.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Gmm(Gmm),
    /// Two interleaved half circles with isotropic Gaussian noise.
    TwoMoons {
        noise: f64,
    },
    /// Two arms `r = t`, `θ = 2π·turns·t + arm·π`, `t ~ U(0,1)`, plus noise.
    Spiral {
        turns: f64,
        noise: f64,
    },
    /// Uniform over the cells `(i + j)` even of a `cells × cells` unit grid.
    Check {
        cells: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSample {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Shape {
    pub fn parse_kind(kind: &str) -> Option<&'static str> {
        match kind {
            "gmm" => Some("gmm"),
            "two_moons" => Some("two_moons"),
            "spiral" => Some("spiral"),
            "check" => Some("check"),
            _ => None,
        }
    }

    pub fn n_labels(&self) -> usize {
        match self {
            Shape::Gmm(g) => g.components.len(),
            Shape::TwoMoons { .. } | Shape::Spiral { .. } => 2,
            Shape::Check { cells } => check_active_cells(*cells).len(),
        }
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> ShapeSample {
        let mut points = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        match self {
            Shape::Gmm(g) => {
                let pick = WeightedIndex::new(g.components.iter().map(|c| c.weight)).expect("valid weights");
                for i in 0..n {
                    // a single component consumes no selection draw, matching GaussModel
                    let k = if g.components.len() == 1 { 0 } else { pick.sample(rng) };
                    let c = &g.components[k];
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    points[[i, 0]] = c.mean[0] + c.std[0] * z1;
                    points[[i, 1]] = c.mean[1] + c.std[1] * (c.rho * z1 + (1.0 - c.rho * c.rho).sqrt() * z2);
                    labels.push(k);
                }
            }
            Shape::TwoMoons { noise } => {
                for i in 0..n {
                    let moon = i % 2;
                    let t = rng.random::<f64>() * std::f64::consts::PI;
                    let (cx, cy) = moon_point(moon, t);
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    points[[i, 0]] = cx + noise * z1;
                    points[[i, 1]] = cy + noise * z2;
                    labels.push(moon);
                }
            }
            Shape::Spiral { turns, noise } => {
                for i in 0..n {
                    let arm = i % 2;
                    let t = rng.random::<f64>();
                    let (cx, cy) = spiral_point(*turns, arm, t);
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    points[[i, 0]] = cx + noise * z1;
                    points[[i, 1]] = cy + noise * z2;
                    labels.push(arm);
                }
            }
            Shape::Check { cells } => {
                let active = check_active_cells(*cells);
                for i in 0..n {
                    let c = rng.random_range(0..active.len());
                    let (ci, cj) = active[c];
                    points[[i, 0]] = ci as f64 + rng.random::<f64>();
                    points[[i, 1]] = cj as f64 + rng.random::<f64>();
                    labels.push(c);
                }
            }
        }
        ShapeSample { points, labels }
    }

    pub fn sample(&self, n: usize, seed: u64) -> ShapeSample {
        self.sample_with(n, &mut rng_from(seed))
    }
}

pub(crate) fn moon_point(moon: usize, t: f64) -> (f64, f64) {
    if moon == 0 {
        (t.cos(), t.sin())
    } else {
        (1.0 - t.cos(), 0.5 - t.sin())
    }
}

pub(crate) fn spiral_point(turns: f64, arm: usize, t: f64) -> (f64, f64) {
    let theta = 2.0 * std::f64::consts::PI * turns * t + arm as f64 * std::f64::consts::PI;
    (t * theta.cos(), t * theta.sin())
}

pub(crate) fn check_active_cells(cells: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..cells {
        for j in 0..cells {
            if (i + j) % 2 == 0 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Draws `n` points from a shape; deterministic in `seed`.
pub fn shape_sample(shape: &Shape, n: usize, seed: u64) -> ShapeSample {
    shape.sample(n, seed)
}

/// How the reference process `u` is built for a finite table of inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// `u` supplied alongside `x`.
    Raw,
    /// `u` is the one-hot class label.
    Class,
    /// `u` is another sample of the same class, re-drawn each epoch.
    Similarity,
    /// `u == x`.
    MaximalDependence,
    /// `u` is a fixed uniform code per sample, drawn once.
    Factorial { code_len: usize },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Raw => "raw",
            Scheme::Class => "class",
            Scheme::Similarity => "similarity",
            Scheme::MaximalDependence => "maximal_dependence",
            Scheme::Factorial { .. } => "factorial",
        }
    }
}

/// Inputs to [`make_pairs`].
#[derive(Clone, Debug, Default)]
pub struct BaseData {
    pub x: Array2<f64>,
    pub u: Option<Array2<f64>>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
enum TableCoding {
    Fixed(Array2<f64>),
    Similarity {
        by_class: Vec<Vec<usize>>,
        x_of: Vec<usize>,
    },
}

/// A finite set of inputs with their coding.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTable {
    x: Array2<f64>,
    labels: Option<Vec<usize>>,
    scheme: Scheme,
    coding: TableCoding,
    seed: u64,
}

impl PairTable {
    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn u_dim(&self) -> usize {
        match &self.coding {
            TableCoding::Fixed(u) => u.ncols(),
            TableCoding::Similarity { .. } => self.x.ncols(),
        }
    }

    /// Index of the reference partner of every row in `epoch` for similarity
    /// coding; identity otherwise.
    pub fn partners(&self, epoch: u64) -> Vec<usize> {
        match &self.coding {
            TableCoding::Fixed(_) => (0..self.len()).collect(),
            TableCoding::Similarity { by_class, x_of } => {
                let mut rng = rng_from(derive_seed(self.seed, epoch.wrapping_add(1) << 8));
                (0..self.len())
                    .map(|i| {
                        let members = &by_class[x_of[i]];
                        if members.len() == 1 {
                            return i;
                        }
                        let pick = rng.random_range(0..members.len() - 1);
                        let self_pos = members.iter().position(|&m| m == i).expect("member of own class");
                        members[if pick >= self_pos { pick + 1 } else { pick }]
                    })
                    .collect()
            }
        }
    }

    /// All `(x, u)` rows as emitted during `epoch`.
    pub fn epoch_pairs(&self, epoch: u64) -> (Array2<f64>, Array2<f64>) {
        match &self.coding {
            TableCoding::Fixed(u) => (self.x.clone(), u.clone()),
            TableCoding::Similarity { .. } => {
                let p = self.partners(epoch);
                (self.x.clone(), self.x.select(ndarray::Axis(0), &p))
            }
        }
    }
}

/// Source of `(x, u)` training pairs.
#[derive(Clone, Debug, PartialEq)]
pub enum PairedDataset {
    Markov(McModel),
    Gauss(GaussModel),
    /// 2-D shape read as the joint of `x` (first coordinate) and `u` (second).
    Shape(Shape),
    Table(PairTable),
}

impl PairedDataset {
    pub fn x_dim(&self) -> usize {
        match self {
            PairedDataset::Markov(m) => m.n_states,
            PairedDataset::Gauss(_) | PairedDataset::Shape(_) => 1,
            PairedDataset::Table(t) => t.x.ncols(),
        }
    }

    pub fn u_dim(&self) -> usize {
        match self {
            PairedDataset::Markov(m) => m.n_states,
            PairedDataset::Gauss(_) | PairedDataset::Shape(_) => 1,
            PairedDataset::Table(t) => t.u_dim(),
        }
    }

    pub fn as_table(&self) -> Option<&PairTable> {
        match self {
            PairedDataset::Table(t) => Some(t),
            _ => None,
        }
    }

    pub fn sampler(&self, seed: u64) -> PairSampler<'_> {
        PairSampler {
            data: self,
            rng: rng_from(seed),
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            partners: Vec::new(),
        }
    }

    /// `n` pairs drawn from a fresh sampler; for tables, the first epoch order.
    pub fn draw(&self, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        self.sampler(seed).next_batch(n)
    }
}

/// Deterministic minibatch stream over a [`PairedDataset`].
///
/// Tables are traversed epoch by epoch in a shuffled order; a batch may span
/// an epoch boundary.
pub struct PairSampler<'a> {
    data: &'a PairedDataset,
    rng: ChaCha8Rng,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    partners: Vec<usize>,
}

impl PairSampler<'_> {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, m: usize) -> (Array2<f64>, Array2<f64>) {
        match self.data {
            PairedDataset::Markov(model) => {
                let (xs, us) = model.sample_states(m, &mut self.rng);
                (one_hot(&xs, model.n_states), one_hot(&us, model.n_states))
            }
            PairedDataset::Gauss(g) => g.sample_with(m, &mut self.rng),
            PairedDataset::Shape(shape) => {
                let s = shape.sample_with(m, &mut self.rng);
                (
                    s.points.slice(s![.., 0..1]).to_owned(),
                    s.points.slice(s![.., 1..2]).to_owned(),
                )
            }
            PairedDataset::Table(table) => {
                let mut rows = Vec::with_capacity(m);
                let mut partners = Vec::with_capacity(m);
                while rows.len() < m {
                    if self.cursor >= self.order.len() {
                        if !self.order.is_empty() {
                            self.epoch += 1;
                        }
                        self.order = (0..table.len()).collect();
                        self.order.shuffle(&mut self.rng);
                        self.partners = table.partners(self.epoch);
                        self.cursor = 0;
                    }
                    let i = self.order[self.cursor];
                    rows.push(i);
                    partners.push(self.partners[i]);
                    self.cursor += 1;
                }
                let x = table.x.select(ndarray::Axis(0), &rows);
                let u = match &table.coding {
                    TableCoding::Fixed(u) => u.select(ndarray::Axis(0), &rows),
                    TableCoding::Similarity { .. } => table.x.select(ndarray::Axis(0), &partners),
                };
                (x, u)
            }
        }
    }
}

fn check_labels(labels: &[usize], n: usize) -> Result<usize> {
    if labels.len() != n {
        return Err(FmcaError::DimensionMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    Ok(labels.iter().copied().max().map_or(0, |m| m + 1))
}

/// Builds a finite paired dataset from base inputs under a coding scheme.
pub fn make_pairs(scheme: Scheme, base: BaseData, seed: u64) -> Result<PairedDataset> {
    let n = base.x.nrows();
    if n == 0 {
        return Err(FmcaError::InvalidArgument("empty base data".into()));
    }
    let coding = match scheme {
        Scheme::Raw => {
            let u = base
                .u
                .clone()
                .ok_or_else(|| FmcaError::InvalidArgument("raw scheme needs explicit u".into()))?;
            if u.nrows() != n {
                return Err(FmcaError::DimensionMismatch(format!(
                    "{} u rows for {n} x rows",
                    u.nrows()
                )));
            }
            TableCoding::Fixed(u)
        }
        Scheme::Class => {
            let labels = base.labels.as_ref().ok_or(FmcaError::MissingLabels("class"))?;
            let classes = check_labels(labels, n)?;
            TableCoding::Fixed(one_hot(labels, classes))
        }
        Scheme::Similarity => {
            let labels = base.labels.as_ref().ok_or(FmcaError::MissingLabels("similarity"))?;
            let classes = check_labels(labels, n)?;
            let mut by_class = vec![Vec::new(); classes];
            for (i, &c) in labels.iter().enumerate() {
                by_class[c].push(i);
            }
            TableCoding::Similarity {
                by_class,
                x_of: labels.clone(),
            }
        }
        Scheme::MaximalDependence => TableCoding::Fixed(base.x.clone()),
        Scheme::Factorial { code_len } => {
            if code_len == 0 {
                return Err(FmcaError::InvalidArgument(
                    "factorial code length must be positive".into(),
                ));
            }
            let mut rng = rng_from(derive_seed(seed, 0xFAC7));
            TableCoding::Fixed(Array2::from_shape_fn((n, code_len), |_| rng.random::<f64>()))
        }
    };
    Ok(PairedDataset::Table(PairTable {
        x: base.x,
        labels: base.labels,
        scheme,
        coding,
        seed,
    }))
}

/// Sliding windows of `order` past inputs paired with the current target.
pub fn temporal_pairs(series: &[f64], target: &[f64], order: usize) -> Result<PairedDataset> {
    if series.len() != target.len() {
        return Err(FmcaError::DimensionMismatch(format!(
            "series has {} samples, target {}",
            series.len(),
            target.len()
        )));
    }
    if order == 0 || series.len() < order {
        return Err(FmcaError::InvalidArgument(format!(
            "series of length {} is shorter than order {order}",
            series.len()
        )));
    }
    let count = series.len() - order + 1;
    let x = Array2::from_shape_fn((count, order), |(r, c)| series[r + c]);
    let u = Array2::from_shape_fn((count, 1), |(r, _)| target[r + order - 1]);
    make_pairs(
        Scheme::Raw,
        BaseData {
            x,
            u: Some(u),
            labels: None,
        },
        0,
    )
}

/// Ridge-regularised least squares `(FᵀF/n + εI) w = FᵀT/n`.
pub fn wiener_readout(features: ArrayView2<f64>, targets: ArrayView2<f64>, eps: f64) -> Result<Array2<f64>> {
    let n = features.nrows();
    if targets.nrows() != n || n == 0 {
        return Err(FmcaError::DimensionMismatch(format!(
            "{} feature rows vs {} target rows",
            n,
            targets.nrows()
        )));
    }
    let gram = SymMatrix::from_upper(features.t().dot(&features) / n as f64)?.add_ridge(eps);
    let rhs = features.t().dot(&targets) / n as f64;
    let l = cholesky(&gram)?;
    let li = lower_inverse(&l);
    Ok(li.t().dot(&li.dot(&rhs)))
}

/// Writes one pair per row: `x0,…,x{d-1},u0,…,u{e-1}`.
pub fn write_pairs_csv<W: Write>(mut w: W, x: ArrayView2<f64>, u: ArrayView2<f64>) -> io::Result<()> {
    let header: Vec<String> = (0..x.ncols())
        .map(|i| format!("x{i}"))
        .chain((0..u.ncols()).map(|i| format!("u{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (xr, ur) in x.rows().into_iter().zip(u.rows()) {
        let row: Vec<String> = xr.iter().chain(ur.iter()).map(|&v| format_f64(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
