//! Run configuration: flat `section.key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use fmca::datagen::{
    derive_seed, make_pairs, rng_from, BaseData, GaussModel, Gmm, McModel, PairedDataset, Scheme, Shape,
};
use fmca::fmca::{TrainConfig, UpdateMode};
use fmca::netfn::OutputActivation;
use fmca::spectrum::DEFAULT_EVAL_BATCH;
use ndarray::Array2;
use rand::Rng;

/// Environment variable that replaces `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "FMCA_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Gauss,
    Mc,
    Gmm,
    TwoMoons,
    Spiral,
    Check,
    Uniform,
}

impl DatasetKind {
    const ALL: [DatasetKind; 7] = [
        DatasetKind::Gauss,
        DatasetKind::Mc,
        DatasetKind::Gmm,
        DatasetKind::TwoMoons,
        DatasetKind::Spiral,
        DatasetKind::Check,
        DatasetKind::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Gauss => "gauss",
            DatasetKind::Mc => "mc",
            DatasetKind::Gmm => "gmm",
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::Spiral => "spiral",
            DatasetKind::Check => "check",
            DatasetKind::Uniform => "uniform",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn is_shape(self) -> bool {
        matches!(
            self,
            DatasetKind::Gmm | DatasetKind::TwoMoons | DatasetKind::Spiral | DatasetKind::Check
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McRows {
    Drawn,
    /// Every row equal to the first drawn row, so `u` is independent of `x`.
    Identical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub seed: u64,
    pub rho: f64,
    pub p_alpha: f64,
    pub n_states: usize,
    pub rows: McRows,
    pub components: usize,
    pub radius: f64,
    pub std: f64,
    pub noise: f64,
    pub turns: f64,
    pub cells: usize,
    pub samples: usize,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    Raw,
    Class,
    Similarity,
    MaximalDependence,
    Factorial,
}

impl SchemeKind {
    const ALL: [SchemeKind; 5] = [
        SchemeKind::Raw,
        SchemeKind::Class,
        SchemeKind::Similarity,
        SchemeKind::MaximalDependence,
        SchemeKind::Factorial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Raw => "raw",
            SchemeKind::Class => "class",
            SchemeKind::Similarity => "similarity",
            SchemeKind::MaximalDependence => "maximal_dependence",
            SchemeKind::Factorial => "factorial",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodingConfig {
    pub scheme: SchemeKind,
    pub code_len: usize,
}

impl CodingConfig {
    pub fn scheme(&self) -> Scheme {
        match self.scheme {
            SchemeKind::Raw => Scheme::Raw,
            SchemeKind::Class => Scheme::Class,
            SchemeKind::Similarity => Scheme::Similarity,
            SchemeKind::MaximalDependence => Scheme::MaximalDependence,
            SchemeKind::Factorial => Scheme::Factorial {
                code_len: self.code_len,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub batch: usize,
    pub seed: u64,
    /// Nyström points per axis.
    pub grid: usize,
    /// Oracle spectrum length; 0 means `train.k`.
    pub count: usize,
    pub tolerance: f64,
    pub test_samples: usize,
    /// Ridge added to the ACFs when whitening for the spectrum.
    pub ridge: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub coding: CodingConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig {
                kind: DatasetKind::Gauss,
                seed: 0,
                rho: 0.5,
                p_alpha: 0.786,
                n_states: 10,
                rows: McRows::Drawn,
                components: 4,
                radius: 4.0,
                std: 0.5,
                noise: 0.1,
                turns: 1.5,
                cells: 2,
                samples: 1024,
                dim: 8,
            },
            coding: CodingConfig {
                scheme: SchemeKind::Raw,
                code_len: 16,
            },
            train: TrainConfig::default(),
            eval: EvalConfig {
                batch: DEFAULT_EVAL_BATCH,
                seed: 1,
                grid: 128,
                count: 0,
                tolerance: 1e-2,
                test_samples: 1000,
                ridge: fmca::spectrum::DEFAULT_EVAL_RIDGE,
            },
            output_dir: PathBuf::from("fmca-out"),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str, what: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| anyhow!("field `{key}`: expected {what}, got `{raw}`"))
}

fn sizes(key: &str, raw: &str) -> Result<Vec<usize>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| value::<usize>(key, s.trim(), "comma-separated positive integers"))
        .collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        let mut inner_steps = 1;
        let mut alternating = false;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", no + 1))?;
            let (key, raw) = (key.trim(), raw.trim());
            if seen.insert(key.to_string(), no + 1).is_some() {
                bail!("field `{key}`: given more than once");
            }
            let d = &mut cfg.dataset;
            let t = &mut cfg.train;
            let e = &mut cfg.eval;
            match key {
                "dataset.kind" => {
                    d.kind = DatasetKind::parse(raw).ok_or_else(|| {
                        anyhow!(
                            "field `{key}`: unknown kind `{raw}` (expected one of {})",
                            DatasetKind::ALL.map(|k| k.name()).join(", ")
                        )
                    })?
                }
                "dataset.seed" => d.seed = value(key, raw, "unsigned integer")?,
                "dataset.rho" => d.rho = value(key, raw, "number")?,
                "dataset.p_alpha" => d.p_alpha = value(key, raw, "number")?,
                "dataset.n_states" => d.n_states = value(key, raw, "positive integer")?,
                "dataset.rows" => {
                    d.rows = match raw {
                        "drawn" => McRows::Drawn,
                        "identical" => McRows::Identical,
                        _ => bail!("field `{key}`: expected `drawn` or `identical`, got `{raw}`"),
                    }
                }
                "dataset.components" => d.components = value(key, raw, "positive integer")?,
                "dataset.radius" => d.radius = value(key, raw, "number")?,
                "dataset.std" => d.std = value(key, raw, "number")?,
                "dataset.noise" => d.noise = value(key, raw, "number")?,
                "dataset.turns" => d.turns = value(key, raw, "number")?,
                "dataset.cells" => d.cells = value(key, raw, "positive integer")?,
                "dataset.samples" => d.samples = value(key, raw, "positive integer")?,
                "dataset.dim" => d.dim = value(key, raw, "positive integer")?,
                "coding.scheme" => {
                    cfg.coding.scheme = SchemeKind::parse(raw).ok_or_else(|| {
                        anyhow!(
                            "field `{key}`: unknown scheme `{raw}` (expected one of {})",
                            SchemeKind::ALL.map(|k| k.name()).join(", ")
                        )
                    })?
                }
                "coding.code_len" => cfg.coding.code_len = value(key, raw, "positive integer")?,
                "train.k" => t.k = value(key, raw, "positive integer")?,
                "train.l" => t.l = value(key, raw, "positive integer")?,
                "train.batch_size" => t.batch_size = value(key, raw, "integer >= 2")?,
                "train.iterations" => t.iterations = value(key, raw, "unsigned integer")?,
                "train.update_mode" => {
                    alternating = match raw {
                        "simultaneous" => false,
                        "alternating" => true,
                        _ => bail!("field `{key}`: expected `simultaneous` or `alternating`, got `{raw}`"),
                    }
                }
                "train.inner_steps" => inner_steps = value(key, raw, "positive integer")?,
                "train.eps" => t.eps = value(key, raw, "number")?,
                "train.beta" => t.beta = value(key, raw, "number")?,
                "train.seed" => t.seed = value(key, raw, "unsigned integer")?,
                "train.f_hidden" => t.f_hidden = sizes(key, raw)?,
                "train.g_hidden" => t.g_hidden = sizes(key, raw)?,
                "train.output_activation" => {
                    t.output_activation = OutputActivation::parse(raw)
                        .ok_or_else(|| anyhow!("field `{key}`: expected `sigmoid` or `identity`, got `{raw}`"))?
                }
                "train.lr" => t.adam.lr = value(key, raw, "number")?,
                "train.adam_beta1" => t.adam.beta1 = value(key, raw, "number")?,
                "train.adam_beta2" => t.adam.beta2 = value(key, raw, "number")?,
                "train.adam_eps" => t.adam.eps = value(key, raw, "number")?,
                "train.log_interval" => t.log_interval = value(key, raw, "positive integer")?,
                "train.monitor_batch" => t.monitor_batch = value(key, raw, "non-negative integer")?,
                "eval.batch" => e.batch = value(key, raw, "positive integer")?,
                "eval.seed" => e.seed = value(key, raw, "unsigned integer")?,
                "eval.grid" => e.grid = value(key, raw, "integer >= 64")?,
                "eval.count" => e.count = value(key, raw, "unsigned integer")?,
                "eval.tolerance" => e.tolerance = value(key, raw, "number")?,
                "eval.test_samples" => e.test_samples = value(key, raw, "positive integer")?,
                "eval.ridge" => e.ridge = value(key, raw, "number")?,
                "output.dir" => cfg.output_dir = PathBuf::from(raw),
                _ => bail!("field `{key}`: unknown key"),
            }
        }
        cfg.train.update_mode = if alternating {
            UpdateMode::Alternating { inner_steps }
        } else {
            UpdateMode::Simultaneous
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let check = |ok: bool, key: &str, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(anyhow!("field `{key}`: {what}"))
            }
        };
        check(d.rho.abs() < 1.0, "dataset.rho", "must satisfy |rho| < 1")?;
        check(
            (0.0..=1.0).contains(&d.p_alpha),
            "dataset.p_alpha",
            "must lie in [0, 1]",
        )?;
        check(d.n_states >= 2, "dataset.n_states", "must be >= 2")?;
        check(d.components >= 1, "dataset.components", "must be >= 1")?;
        check(d.std > 0.0, "dataset.std", "must be > 0")?;
        check(d.noise > 0.0, "dataset.noise", "must be > 0")?;
        check(d.turns > 0.0, "dataset.turns", "must be > 0")?;
        check(d.cells >= 1, "dataset.cells", "must be >= 1")?;
        check(d.samples >= 1, "dataset.samples", "must be >= 1")?;
        check(d.dim >= 1, "dataset.dim", "must be >= 1")?;
        check(self.coding.code_len >= 1, "coding.code_len", "must be >= 1")?;
        let t = &self.train;
        check(t.k >= 1, "train.k", "must be >= 1")?;
        check(t.l >= 1, "train.l", "must be >= 1")?;
        check(t.batch_size >= 2, "train.batch_size", "must be >= 2")?;
        check(t.eps > 0.0, "train.eps", "must be > 0")?;
        check((0.0..1.0).contains(&t.beta), "train.beta", "must lie in [0, 1)")?;
        check(t.adam.lr > 0.0, "train.lr", "must be > 0")?;
        check(
            (0.0..1.0).contains(&t.adam.beta1),
            "train.adam_beta1",
            "must lie in [0, 1)",
        )?;
        check(
            (0.0..1.0).contains(&t.adam.beta2),
            "train.adam_beta2",
            "must lie in [0, 1)",
        )?;
        check(t.adam.eps > 0.0, "train.adam_eps", "must be > 0")?;
        check(t.log_interval >= 1, "train.log_interval", "must be >= 1")?;
        check(!t.f_hidden.contains(&0), "train.f_hidden", "layer widths must be >= 1")?;
        check(!t.g_hidden.contains(&0), "train.g_hidden", "layer widths must be >= 1")?;
        if let UpdateMode::Alternating { inner_steps } = t.update_mode {
            check(inner_steps >= 1, "train.inner_steps", "must be >= 1")?;
        }
        check(self.eval.batch >= 2, "eval.batch", "must be >= 2")?;
        check(self.eval.grid >= 64, "eval.grid", "must be >= 64")?;
        check(self.eval.tolerance >= 0.0, "eval.tolerance", "must be >= 0")?;
        check(self.eval.test_samples >= 1, "eval.test_samples", "must be >= 1")?;
        check(self.eval.ridge > 0.0, "eval.ridge", "must be > 0")?;
        let raw_only = matches!(d.kind, DatasetKind::Gauss | DatasetKind::Mc);
        check(
            !(raw_only && self.coding.scheme != SchemeKind::Raw),
            "coding.scheme",
            "gauss and mc datasets only support `raw`",
        )?;
        check(
            !(d.kind == DatasetKind::Uniform && self.coding.scheme == SchemeKind::Raw),
            "coding.scheme",
            "uniform datasets need a coding scheme other than `raw`",
        )?;
        Ok(())
    }

    /// Every key with its effective value, sorted.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let d = &self.dataset;
        let t = &self.train;
        let e = &self.eval;
        let (mode, inner) = match t.update_mode {
            UpdateMode::Simultaneous => ("simultaneous", 1),
            UpdateMode::Alternating { inner_steps } => ("alternating", inner_steps),
        };
        BTreeMap::from([
            ("dataset.kind", d.kind.name().to_string()),
            ("dataset.seed", d.seed.to_string()),
            ("dataset.rho", d.rho.to_string()),
            ("dataset.p_alpha", d.p_alpha.to_string()),
            ("dataset.n_states", d.n_states.to_string()),
            (
                "dataset.rows",
                match d.rows {
                    McRows::Drawn => "drawn",
                    McRows::Identical => "identical",
                }
                .to_string(),
            ),
            ("dataset.components", d.components.to_string()),
            ("dataset.radius", d.radius.to_string()),
            ("dataset.std", d.std.to_string()),
            ("dataset.noise", d.noise.to_string()),
            ("dataset.turns", d.turns.to_string()),
            ("dataset.cells", d.cells.to_string()),
            ("dataset.samples", d.samples.to_string()),
            ("dataset.dim", d.dim.to_string()),
            ("coding.scheme", self.coding.scheme.name().to_string()),
            ("coding.code_len", self.coding.code_len.to_string()),
            ("train.k", t.k.to_string()),
            ("train.l", t.l.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.iterations", t.iterations.to_string()),
            ("train.update_mode", mode.to_string()),
            ("train.inner_steps", inner.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.beta", t.beta.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.f_hidden", join(&t.f_hidden)),
            ("train.g_hidden", join(&t.g_hidden)),
            ("train.output_activation", t.output_activation.name().to_string()),
            ("train.lr", t.adam.lr.to_string()),
            ("train.adam_beta1", t.adam.beta1.to_string()),
            ("train.adam_beta2", t.adam.beta2.to_string()),
            ("train.adam_eps", t.adam.eps.to_string()),
            ("train.log_interval", t.log_interval.to_string()),
            ("train.monitor_batch", t.monitor_batch.to_string()),
            ("eval.batch", e.batch.to_string()),
            ("eval.seed", e.seed.to_string()),
            ("eval.grid", e.grid.to_string()),
            ("eval.count", e.count.to_string()),
            ("eval.tolerance", e.tolerance.to_string()),
            ("eval.test_samples", e.test_samples.to_string()),
            ("eval.ridge", e.ridge.to_string()),
            ("output.dir", self.output_dir.display().to_string()),
        ])
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn oracle_count(&self) -> usize {
        if self.eval.count == 0 {
            self.train.k
        } else {
            self.eval.count
        }
    }

    pub fn mc_model(&self) -> Result<McModel> {
        let d = &self.dataset;
        let drawn = McModel::build(d.p_alpha, d.n_states, d.seed)?;
        Ok(match d.rows {
            McRows::Drawn => drawn,
            McRows::Identical => {
                let row: Vec<f64> = drawn.transition.row(0).to_vec();
                McModel::independent(&row)?
            }
        })
    }

    pub fn shape(&self) -> Result<Shape> {
        let d = &self.dataset;
        Ok(match d.kind {
            DatasetKind::Gmm => Shape::Gmm(Gmm::ring(d.components, d.radius, d.std)?),
            DatasetKind::TwoMoons => Shape::TwoMoons { noise: d.noise },
            DatasetKind::Spiral => Shape::Spiral {
                turns: d.turns,
                noise: d.noise,
            },
            DatasetKind::Check => Shape::Check { cells: d.cells },
            other => bail!("dataset kind `{}` is not a 2-D shape", other.name()),
        })
    }

    /// Finite input table with labels where the kind has them.
    pub fn base_data(&self, n: usize, stream: u64) -> Result<BaseData> {
        let d = &self.dataset;
        let seed = derive_seed(d.seed, stream);
        if d.kind.is_shape() {
            let s = self.shape()?.sample(n, seed);
            return Ok(BaseData {
                x: s.points,
                u: None,
                labels: Some(s.labels),
            });
        }
        match d.kind {
            DatasetKind::Uniform => {
                let mut rng = rng_from(seed);
                Ok(BaseData {
                    x: Array2::from_shape_fn((n, d.dim), |_| rng.random::<f64>()),
                    u: None,
                    labels: None,
                })
            }
            other => bail!("dataset kind `{}` has no finite input table", other.name()),
        }
    }

    pub fn dataset(&self) -> Result<PairedDataset> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Gauss => Ok(PairedDataset::Gauss(GaussModel::new(d.rho)?)),
            DatasetKind::Mc => Ok(PairedDataset::Markov(self.mc_model()?)),
            kind if kind.is_shape() && self.coding.scheme == SchemeKind::Raw => Ok(PairedDataset::Shape(self.shape()?)),
            _ => {
                let base = self.base_data(d.samples, TRAIN_STREAM)?;
                Ok(make_pairs(self.coding.scheme(), base, d.seed)?)
            }
        }
    }
}

/// Seed streams for the training table and held-out test draws.
pub const TRAIN_STREAM: u64 = 0x7A;
pub const TEST_STREAM: u64 = 0x7E;
