//! The log-determinant dependence objective and its training loop.
//!
//! For outputs `F (n × K)` and `G (n × L)` the batch statistics are
//! `R_F = FᵀF/n + εI`, `R_G = GᵀG/n + εI` and `P = FᵀG/n`. The score
//!
//! ```text
//! r = log det [[R_F, P], [Pᵀ, R_G]] − log det R_F − log det R_G
//! ```
//!
//! is never positive and is minimised jointly over both networks. Training
//! tracks exponential moving averages of the three statistics, divides them by
//! `1 − βᵏ`, and uses the corrected inverses against the current batch
//! derivative when forming output gradients.

use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::datagen::{derive_seed, PairSampler, PairedDataset};
use crate::error::{FmcaError, Result};
use crate::linalg::{chol_logdet, cholesky, inverse, lower_inverse, SymMatrix};
use crate::netfn::{AdamConfig, AdamState, MlpParams, OutputActivation};
use crate::spectrum::{stats_spectrum, SpectrumResult};

/// Autocorrelation `R_F`, `R_G` and cross-correlation `P_FG` of two output families.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrStats {
    pub r_f: SymMatrix,
    pub r_g: SymMatrix,
    pub p_fg: Array2<f64>,
}

impl CorrStats {
    pub fn k(&self) -> usize {
        self.r_f.dim()
    }

    pub fn l(&self) -> usize {
        self.r_g.dim()
    }

    fn check(&self) -> Result<()> {
        if self.p_fg.dim() != (self.k(), self.l()) {
            return Err(FmcaError::DimensionMismatch(format!(
                "cross-correlation is {:?}, expected {}x{}",
                self.p_fg.dim(),
                self.k(),
                self.l()
            )));
        }
        Ok(())
    }

    /// The joint matrix `[[R_F, P], [Pᵀ, R_G]]`.
    pub fn joint(&self) -> Result<SymMatrix> {
        self.check()?;
        let (k, l) = (self.k(), self.l());
        let mut j = Array2::zeros((k + l, k + l));
        j.slice_mut(s![..k, ..k]).assign(self.r_f.as_array());
        j.slice_mut(s![k.., k..]).assign(self.r_g.as_array());
        j.slice_mut(s![..k, k..]).assign(&self.p_fg);
        j.slice_mut(s![k.., ..k]).assign(&self.p_fg.t());
        SymMatrix::new(j)
    }
}

/// `FᵀF/n + εI`.
pub fn batch_acf(f: ArrayView2<f64>, eps: f64) -> Result<SymMatrix> {
    let n = f.nrows();
    if n == 0 || f.ncols() == 0 {
        return Err(FmcaError::InvalidArgument("empty output matrix".into()));
    }
    Ok(SymMatrix::from_upper(f.t().dot(&f) / n as f64)?.add_ridge(eps))
}

/// `FᵀG/n`.
pub fn batch_ccf(f: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array2<f64>> {
    if f.nrows() != g.nrows() || f.nrows() == 0 {
        return Err(FmcaError::DimensionMismatch(format!(
            "row counts differ: {} vs {}",
            f.nrows(),
            g.nrows()
        )));
    }
    Ok(f.t().dot(&g) / f.nrows() as f64)
}

pub fn batch_stats(f: ArrayView2<f64>, g: ArrayView2<f64>, eps: f64) -> Result<CorrStats> {
    Ok(CorrStats {
        p_fg: batch_ccf(f, g)?,
        r_f: batch_acf(f, eps)?,
        r_g: batch_acf(g, eps)?,
    })
}

/// Exponential moving averages of the batch statistics.
///
/// Accumulators start at zero so that the bias correction `1/(1 − βᵏ)`
/// returns the first batch exactly at `k = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrState {
    pub ema: CorrStats,
    pub k: u64,
    pub beta: f64,
    pub eps: f64,
}

impl CorrState {
    pub fn new(k_dim: usize, l_dim: usize, beta: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(FmcaError::InvalidArgument(format!("beta must be in [0,1), got {beta}")));
        }
        if k_dim == 0 || l_dim == 0 {
            return Err(FmcaError::InvalidArgument("output dimensions must be positive".into()));
        }
        Ok(CorrState {
            ema: CorrStats {
                r_f: SymMatrix::zeros(k_dim),
                r_g: SymMatrix::zeros(l_dim),
                p_fg: Array2::zeros((k_dim, l_dim)),
            },
            k: 0,
            beta,
            eps,
        })
    }

    /// `stat ← β·stat + (1 − β)·batch` for all three statistics; `k ← k + 1`.
    pub fn update(&mut self, batch: &CorrStats) -> Result<()> {
        batch.check()?;
        if batch.k() != self.ema.k() || batch.l() != self.ema.l() {
            return Err(FmcaError::DimensionMismatch(format!(
                "batch statistics are {}/{}, state {}/{}",
                batch.k(),
                batch.l(),
                self.ema.k(),
                self.ema.l()
            )));
        }
        let (b, c) = (self.beta, 1.0 - self.beta);
        self.ema.r_f = self.ema.r_f.scaled_add(b, &batch.r_f, c);
        self.ema.r_g = self.ema.r_g.scaled_add(b, &batch.r_g, c);
        self.ema.p_fg = &self.ema.p_fg * b + &batch.p_fg * c;
        self.k += 1;
        Ok(())
    }

    pub fn bias_divisor(&self) -> f64 {
        1.0 - self.beta.powi(self.k.min(i32::MAX as u64) as i32)
    }

    /// Statistics divided by `1 − βᵏ`.
    pub fn bias_corrected(&self) -> Result<CorrStats> {
        if self.k == 0 {
            return Err(FmcaError::InvalidArgument(
                "bias correction needs at least one update".into(),
            ));
        }
        let d = self.bias_divisor();
        Ok(CorrStats {
            r_f: self.ema.r_f.scale(1.0 / d),
            r_g: self.ema.r_g.scale(1.0 / d),
            p_fg: &self.ema.p_fg / d,
        })
    }
}

/// The dependence score, evaluated as `log det(I − CᵀC)` with
/// `C = L_F⁻¹ P L_G⁻ᵀ` (Cholesky whitening). Each pivot of `I − CᵀC` is
/// `1` minus non-negative terms, so the result is `≤ 0` in floating point and
/// exactly `0` when `P = 0`.
pub fn score(stats: &CorrStats) -> Result<f64> {
    stats.check()?;
    let lf = lower_inverse(&cholesky(&stats.r_f)?);
    let lg = lower_inverse(&cholesky(&stats.r_g)?);
    let c = lf.dot(&stats.p_fg).dot(&lg.t());
    let l = c.ncols();
    let gram = c.t().dot(&c);
    // Cholesky of I − CᵀC, written out so every pivot is 1 − (non-negative).
    let mut chol = Array2::<f64>::zeros((l, l));
    let mut total = 0.0;
    for j in 0..l {
        let mut d = 1.0 - gram[[j, j]];
        for k in 0..j {
            d -= chol[[j, k]] * chol[[j, k]];
        }
        if !(d > 0.0) {
            return Err(FmcaError::NotPositiveDefinite {
                pivot: stats.k() + j,
                value: d,
            });
        }
        let dj = d.sqrt();
        chol[[j, j]] = dj;
        for i in (j + 1)..l {
            let mut x = -gram[[i, j]];
            for k in 0..j {
                x -= chol[[i, k]] * chol[[j, k]];
            }
            chol[[i, j]] = x / dj;
        }
        total += d.ln();
    }
    Ok(total)
}

/// The score by its defining form `log det J − log det R_F − log det R_G`.
pub fn score_joint(stats: &CorrStats) -> Result<f64> {
    Ok(chol_logdet(&stats.joint()?)? - chol_logdet(&stats.r_f)? - chol_logdet(&stats.r_g)?)
}

/// Per-sample gradient of the batch score with respect to network outputs.
///
/// With `J` the joint matrix of `stats` and `zₙ = [F[n]; G[n]]`:
/// `dF[n] = (2/n)·(top-K block of J⁻¹zₙ − R_F⁻¹F[n])`, and `dG` likewise with
/// the bottom block and `R_G⁻¹`.
pub fn output_grads(stats: &CorrStats, f: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (k, l) = (stats.k(), stats.l());
    if f.ncols() != k || g.ncols() != l || f.nrows() != g.nrows() || f.nrows() == 0 {
        return Err(FmcaError::DimensionMismatch(format!(
            "outputs {:?}/{:?} vs statistics {k}/{l}",
            f.dim(),
            g.dim()
        )));
    }
    let n = f.nrows() as f64;
    let j_inv = inverse(&stats.joint()?)?;
    let rf_inv = inverse(&stats.r_f)?;
    let rg_inv = inverse(&stats.r_g)?;
    let z = concatenate(Axis(1), &[f, g]).expect("row counts checked");
    let y = z.dot(j_inv.as_array());
    let df = (&y.slice(s![.., ..k]) - &f.dot(rf_inv.as_array())) * (2.0 / n);
    let dg = (&y.slice(s![.., k..]) - &g.dot(rg_inv.as_array())) * (2.0 / n);
    Ok((df, dg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Both networks step every iteration.
    Simultaneous,
    /// `inner_steps` iterations on `f`, then `inner_steps` on `g`, repeating.
    Alternating { inner_steps: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub l: usize,
    pub batch_size: usize,
    pub iterations: u64,
    pub update_mode: UpdateMode,
    pub eps: f64,
    /// EMA rate for the statistics. `0` uses each batch alone; with larger
    /// values the gradient treats the stale part of the average as fixed, and
    /// wide networks learn to move their output constants against it.
    pub beta: f64,
    pub seed: u64,
    pub f_hidden: Vec<usize>,
    pub g_hidden: Vec<usize>,
    pub output_activation: OutputActivation,
    pub adam: AdamConfig,
    pub log_interval: u64,
    /// Held-out pairs on which logged eigenvalues are measured, with ridge ε.
    /// `0` logs the spectrum of the corrected training statistics instead.
    pub monitor_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 20,
            l: 20,
            batch_size: 256,
            iterations: 5000,
            update_mode: UpdateMode::Simultaneous,
            eps: 1e-3,
            beta: 0.0,
            seed: 0,
            f_hidden: vec![300, 300, 300],
            g_hidden: vec![300, 300, 300],
            output_activation: OutputActivation::Sigmoid,
            adam: AdamConfig {
                lr: 3e-4,
                ..AdamConfig::default()
            },
            log_interval: 100,
            monitor_batch: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FmcaError::InvalidArgument(m));
        if self.k == 0 || self.l == 0 {
            return bad(format!("K and L must be >= 1, got {} and {}", self.k, self.l));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be >= 2, got {}", self.batch_size));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must be in [0,1), got {}", self.beta));
        }
        if let UpdateMode::Alternating { inner_steps: 0 } = self.update_mode {
            return bad("alternating mode needs inner_steps >= 1".into());
        }
        if self.log_interval == 0 {
            return bad("log interval must be >= 1".into());
        }
        Ok(())
    }

    pub fn f_layers(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.f_hidden.iter().copied())
            .chain([self.k])
            .collect()
    }

    pub fn g_layers(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.g_hidden.iter().copied())
            .chain([self.l])
            .collect()
    }

    pub fn f_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn g_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    pub fn sampler_seed(&self) -> u64 {
        derive_seed(self.seed, 3)
    }

    pub fn monitor_seed(&self) -> u64 {
        derive_seed(self.seed, 4)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    pub iteration: u64,
    pub score: f64,
    /// Eigenvalue estimates, unclamped; see [`TrainConfig::monitor_batch`].
    pub sigma: Vec<f64>,
    pub elapsed_secs: f64,
}

impl HistoryRecord {
    /// `sigma` clamped to `[0, 1]` for reporting.
    pub fn sigma_clamped(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s.clamp(0.0, 1.0)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    /// Score after every iteration.
    pub scores: Vec<f64>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }
}

/// Trained networks and their statistics.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub f: MlpParams,
    pub g: MlpParams,
    pub state: CorrState,
    pub history: TrainHistory,
}

/// Minibatch FMCA optimisation, one [`Trainer::step`] per iteration.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    f: MlpParams,
    g: MlpParams,
    adam_f: AdamState,
    adam_g: AdamState,
    state: CorrState,
    sampler: PairSampler<'a>,
    monitor: Option<(Array2<f64>, Array2<f64>)>,
    history: TrainHistory,
    iteration: u64,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a PairedDataset) -> Result<Self> {
        cfg.validate()?;
        let f = MlpParams::init(&cfg.f_layers(data.x_dim()), cfg.output_activation, cfg.f_seed())?;
        let g = MlpParams::init(&cfg.g_layers(data.u_dim()), cfg.output_activation, cfg.g_seed())?;
        Ok(Trainer {
            adam_f: AdamState::new(&f, cfg.adam),
            adam_g: AdamState::new(&g, cfg.adam),
            state: CorrState::new(cfg.k, cfg.l, cfg.beta, cfg.eps)?,
            sampler: data.sampler(cfg.sampler_seed()),
            monitor: (cfg.monitor_batch > 0).then(|| data.draw(cfg.monitor_batch, cfg.monitor_seed())),
            history: TrainHistory::default(),
            iteration: 0,
            started: Instant::now(),
            f,
            g,
            cfg,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn f(&self) -> &MlpParams {
        &self.f
    }

    pub fn g(&self) -> &MlpParams {
        &self.g
    }

    pub fn state(&self) -> &CorrState {
        &self.state
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    /// Runs one iteration and returns the score of the corrected statistics.
    pub fn step(&mut self) -> Result<f64> {
        let it = self.iteration + 1;
        self.step_inner(it).map_err(|e| FmcaError::Training {
            iteration: it,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self, it: u64) -> Result<f64> {
        let (x, u) = self.sampler.next_batch(self.cfg.batch_size);
        let fc = self.f.forward_cached(x.view())?;
        let gc = self.g.forward_cached(u.view())?;
        let (fo, go) = (fc.output(), gc.output());

        self.state.update(&batch_stats(fo.view(), go.view(), self.cfg.eps)?)?;
        let corrected = self.state.bias_corrected()?;
        let r = score(&corrected)?;
        let (df, dg) = output_grads(&corrected, fo.view(), go.view())?;

        let (step_f, step_g) = match self.cfg.update_mode {
            UpdateMode::Simultaneous => (true, true),
            UpdateMode::Alternating { inner_steps } => {
                let f_phase = ((it - 1) / inner_steps) % 2 == 0;
                (f_phase, !f_phase)
            }
        };
        if step_f {
            let grads = self.f.backward_cached(&fc, df.view())?;
            self.adam_f.step(&mut self.f, &grads)?;
        }
        if step_g {
            let grads = self.g.backward_cached(&gc, dg.view())?;
            self.adam_g.step(&mut self.g, &grads)?;
        }

        self.iteration = it;
        self.history.scores.push(r);
        if it % self.cfg.log_interval == 0 || it == self.cfg.iterations {
            self.history.records.push(HistoryRecord {
                iteration: it,
                score: r,
                sigma: match &self.monitor {
                    Some((x, u)) => SpectrumResult::fit(&self.f, &self.g, x.view(), u.view(), self.cfg.eps)?.sigma,
                    None => stats_spectrum(&corrected)?,
                },
                elapsed_secs: self.started.elapsed().as_secs_f64(),
            });
        }
        Ok(r)
    }

    /// Steps until the configured iteration count.
    pub fn run(&mut self) -> Result<()> {
        while self.iteration < self.cfg.iterations {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            f: self.f,
            g: self.g,
            state: self.state,
            history: self.history,
        }
    }
}

/// Trains both networks on `data` for `cfg.iterations` iterations.
pub fn train(cfg: &TrainConfig, data: &PairedDataset) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg.clone(), data)?;
    t.run()?;
    Ok(t.finish())
}
