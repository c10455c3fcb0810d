use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use fmca::datagen::{derive_seed, McModel, PairedDataset};
use fmca::fmca::{TrainHistory, Trainer};
use fmca::oracle::{discrete_spectrum, mc_cross_density, mehler_spectrum, nystrom_spectrum};
use fmca::spectrum::{cdr_matrix, diagonal_report, eigenfunctions, ClassPrototypes, DiagonalReport, SpectrumResult};
use fmca::textio::format_f64;
use ndarray::{Array2, Axis};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetKind, RunConfig, SchemeKind, TEST_STREAM};

/// Bumped whenever the history CSV columns change.
pub const HISTORY_SCHEMA: u32 = 1;
/// Largest table `factorial-demo` will build a full pairwise matrix for.
pub const FACTORIAL_DEMO_LIMIT: usize = 512;
/// Points on the 1-D grid used for eigenfunction samples.
const EIGENFUNCTION_GRID: usize = 121;
const EVAL_STREAM: u64 = 0xE7A1;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_history(path: &Path, history: &TrainHistory, k: usize) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["iteration".to_string(), "score".to_string()];
    header.extend((1..=k).map(|i| format!("sigma_{i}")));
    w.write_record(&header)?;
    for r in &history.records {
        let mut row = vec![r.iteration.to_string(), format_f64(r.score)];
        row.extend(r.sigma.iter().map(|&s| format_f64(s)));
        row.resize(k + 2, format_f64(0.0));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_pairs(path: &Path, header: [&str; 2], rows: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for (a, b) in rows {
        w.write_record([a, b])?;
    }
    w.flush()?;
    Ok(())
}

fn write_vector(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    write_pairs(
        path,
        ["index", name],
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i + 1).to_string(), format_f64(v))),
    )
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let raw = rec
            .get(1)
            .ok_or_else(|| anyhow!("{}: row {} has no value column", path.display(), i + 1))?;
        out.push(
            raw.trim()
                .parse()
                .map_err(|_| anyhow!("{}: row {}: bad number `{raw}`", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Trains from a parsed config without touching the filesystem.
pub fn run_training(cfg: &RunConfig) -> Result<TrainRun> {
    let data = cfg.dataset()?;
    let mut trainer = Trainer::new(cfg.train.clone(), &data)?;
    trainer.run()?;
    let out = trainer.finish();
    Ok(TrainRun {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            iteration: cfg.train.iterations,
            f: out.f,
            g: out.g,
            state: out.state,
        },
        history: out.history,
    })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub summary: PathBuf,
    pub run: TrainRun,
}

pub fn cmd_train(config: &Path) -> Result<TrainReport> {
    train_with(&RunConfig::load(config)?)
}

pub fn train_with(cfg: &RunConfig) -> Result<TrainReport> {
    let dir = output_dir(cfg)?;
    let started = Instant::now();
    let run = run_training(cfg)?;
    eprintln!(
        "trained {} iterations in {:.1}s",
        cfg.train.iterations,
        started.elapsed().as_secs_f64()
    );
    let checkpoint = dir.join("checkpoint.txt");
    let history = dir.join("history.csv");
    let summary = dir.join("summary.csv");
    run.checkpoint.save(&checkpoint)?;
    write_history(&history, &run.history, cfg.train.k)?;
    let last = run.history.last();
    write_pairs(
        &summary,
        ["key", "value"],
        [
            ("history_schema".to_string(), HISTORY_SCHEMA.to_string()),
            ("config_sha256".to_string(), config_hash(cfg)),
            ("iterations".to_string(), cfg.train.iterations.to_string()),
            (
                "final_score".to_string(),
                last.map(|r| format_f64(r.score)).unwrap_or_default(),
            ),
        ],
    )?;
    Ok(TrainReport {
        checkpoint,
        history,
        summary,
        run,
    })
}

/// Deterministic evaluation pairs for a config: the whole table for finite
/// datasets, otherwise a fresh draw of `batch` pairs.
pub fn eval_pairs(cfg: &RunConfig, data: &PairedDataset, batch: usize) -> (Array2<f64>, Array2<f64>) {
    match data.as_table() {
        Some(t) => t.epoch_pairs(0),
        None => data.draw(batch, derive_seed(cfg.eval.seed, EVAL_STREAM)),
    }
}

/// Inputs at which eigenfunction samples are reported.
fn sample_inputs(data: &PairedDataset, eval_x: &Array2<f64>) -> Array2<f64> {
    match data {
        PairedDataset::Markov(m) => Array2::eye(m.n_states),
        _ if eval_x.ncols() == 1 => {
            let col = eval_x.column(0);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let step = (hi - lo) / (EIGENFUNCTION_GRID - 1) as f64;
            Array2::from_shape_fn((EIGENFUNCTION_GRID, 1), |(i, _)| lo + step * i as f64)
        }
        _ => eval_x.slice(ndarray::s![..eval_x.nrows().min(512), ..]).to_owned(),
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub spectrum: PathBuf,
    pub eigenfunctions: PathBuf,
    pub result: SpectrumResult,
}

pub fn cmd_spectrum(checkpoint: &Path, eval_batch: Option<usize>) -> Result<SpectrumReport> {
    let ck = Checkpoint::load(checkpoint)?;
    spectrum_of(&ck, eval_batch)
}

pub fn spectrum_of(ck: &Checkpoint, eval_batch: Option<usize>) -> Result<SpectrumReport> {
    let cfg = &ck.config;
    let batch = eval_batch.unwrap_or(cfg.eval.batch);
    ensure!(batch >= 2, "eval batch must be >= 2");
    let data = cfg.dataset()?;
    let (x, u) = eval_pairs(cfg, &data, batch);
    let result = SpectrumResult::fit(&ck.f, &ck.g, x.view(), u.view(), cfg.eval.ridge)?;
    let dir = output_dir(cfg)?;
    let spectrum = dir.join("spectrum.csv");
    write_vector(&spectrum, "sigma", &result.sigma)?;

    let inputs = sample_inputs(&data, &x);
    let phi = eigenfunctions(&ck.f, &result, inputs.view())?;
    let path = dir.join("eigenfunctions.csv");
    let mut w = writer(&path)?;
    let mut header: Vec<String> = (1..=inputs.ncols()).map(|i| format!("x_{i}")).collect();
    header.extend((1..=phi.ncols()).map(|i| format!("phi_{i}")));
    w.write_record(&header)?;
    for (xi, pi) in inputs.rows().into_iter().zip(phi.rows()) {
        w.write_record(xi.iter().chain(pi.iter()).map(|&v| format_f64(v)))?;
    }
    w.flush()?;
    Ok(SpectrumReport {
        spectrum,
        eigenfunctions: path,
        result,
    })
}

/// Ground-truth spectrum of the configured dataset, `count` values long.
/// Finite-rank spectra are padded with zeros.
pub fn oracle_spectrum(cfg: &RunConfig, count: usize) -> Result<Vec<f64>> {
    ensure!(
        cfg.coding.scheme == SchemeKind::Raw,
        "no oracle for coding scheme `{}`",
        cfg.coding.scheme.name()
    );
    let mut values = match cfg.dataset.kind {
        DatasetKind::Gauss => mehler_spectrum(cfg.dataset.rho, count)?,
        DatasetKind::Mc => mc_spectrum(&cfg.mc_model()?)?,
        DatasetKind::Gmm | DatasetKind::TwoMoons | DatasetKind::Spiral | DatasetKind::Check => {
            nystrom_spectrum(&cfg.shape()?, cfg.eval.grid, count)?
        }
        DatasetKind::Uniform => bail!("dataset kind `uniform` has no oracle"),
    };
    values.resize(count, 0.0);
    Ok(values)
}

fn mc_spectrum(m: &McModel) -> Result<Vec<f64>> {
    Ok(discrete_spectrum(&mc_cross_density(m)?)?.values.to_vec())
}

pub fn cmd_oracle(config: &Path) -> Result<(PathBuf, Vec<f64>)> {
    let cfg = RunConfig::load(config)?;
    let values = oracle_spectrum(&cfg, cfg.oracle_count())?;
    let path = output_dir(&cfg)?.join("oracle.csv");
    write_vector(&path, "lambda", &values)?;
    Ok((path, values))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub index: usize,
    pub estimate: f64,
    pub truth: f64,
    pub abs_error: f64,
    pub squared_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CompareReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:>5} {:>12} {:>12} {:>12} {:>12}\n",
            "index", "estimate", "truth", "abs_err", "sq_err"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:>5} {:>12.6} {:>12.6} {:>12.3e} {:>12.3e}\n",
                r.index, r.estimate, r.truth, r.abs_error, r.squared_error
            ));
        }
        s.push_str(&format!(
            "max abs error {:.3e} (tolerance {:.3e}): {}\n",
            self.max_abs_error,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        ));
        s
    }
}

pub fn compare_values(estimate: &[f64], truth: &[f64], tolerance: f64) -> Result<CompareReport> {
    ensure!(
        estimate.len() == truth.len(),
        "length mismatch: {} estimated values, {} oracle values",
        estimate.len(),
        truth.len()
    );
    let rows: Vec<CompareRow> = estimate
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (&e, &t))| CompareRow {
            index: i + 1,
            estimate: e,
            truth: t,
            abs_error: (e - t).abs(),
            squared_error: (e - t) * (e - t),
        })
        .collect();
    let max_abs_error = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    Ok(CompareReport {
        rows,
        max_abs_error,
        tolerance,
        pass: max_abs_error <= tolerance,
    })
}

/// Compares two single-column CSVs; `count` restricts both to a common prefix.
pub fn cmd_compare(
    spectrum: &Path,
    oracle: &Path,
    tolerance: f64,
    count: Option<usize>,
    out: Option<&Path>,
) -> Result<CompareReport> {
    let mut est = read_vector(spectrum)?;
    let mut truth = read_vector(oracle)?;
    if let Some(n) = count {
        ensure!(
            n <= est.len() && n <= truth.len(),
            "count {n} exceeds available values ({} and {})",
            est.len(),
            truth.len()
        );
        est.truncate(n);
        truth.truncate(n);
    }
    let report = compare_values(&est, &truth, tolerance)?;
    if let Some(path) = out {
        let mut w = writer(path)?;
        w.write_record(["index", "estimate", "truth", "abs_error", "squared_error"])?;
        for r in &report.rows {
            w.write_record([
                r.index.to_string(),
                format_f64(r.estimate),
                format_f64(r.truth),
                format_f64(r.abs_error),
                format_f64(r.squared_error),
            ])?;
        }
        w.flush()?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct FactorialReport {
    pub matrix_path: PathBuf,
    pub report_path: PathBuf,
    pub matrix: Array2<f64>,
    pub diagonal: DiagonalReport,
    pub sigma: Vec<f64>,
}

pub fn cmd_factorial_demo(config: &Path) -> Result<FactorialReport> {
    factorial_demo_with(&RunConfig::load(config)?)
}

pub fn factorial_demo_with(cfg: &RunConfig) -> Result<FactorialReport> {
    ensure!(
        cfg.dataset.samples <= FACTORIAL_DEMO_LIMIT,
        "dataset.samples = {} exceeds the factorial demo limit of {FACTORIAL_DEMO_LIMIT}",
        cfg.dataset.samples
    );
    ensure!(
        cfg.coding.scheme == SchemeKind::Factorial,
        "factorial demo needs coding.scheme = factorial"
    );
    let run = run_training(cfg)?;
    let ck = &run.checkpoint;
    let data = cfg.dataset()?;
    let (x, u) = eval_pairs(cfg, &data, cfg.eval.batch);
    let res = SpectrumResult::fit(&ck.f, &ck.g, x.view(), u.view(), cfg.eval.ridge)?;
    let phi = eigenfunctions(&ck.f, &res, x.view())?;
    let matrix = cdr_matrix(phi.view(), &res.sigma);
    let diagonal = diagonal_report(matrix.view());

    let dir = output_dir(cfg)?;
    let matrix_path = dir.join("cdr_matrix.csv");
    let mut w = writer(&matrix_path)?;
    for row in matrix.rows() {
        w.write_record(row.iter().map(|&v| format_f64(v)))?;
    }
    w.flush()?;
    let report_path = dir.join("diagonal_report.csv");
    write_pairs(
        &report_path,
        ["key", "value"],
        [
            ("mean_diag".to_string(), format_f64(diagonal.mean_diag)),
            ("mean_off".to_string(), format_f64(diagonal.mean_off)),
            ("ratio".to_string(), format_f64(diagonal.ratio)),
        ],
    )?;
    Ok(FactorialReport {
        matrix_path,
        report_path,
        matrix,
        diagonal,
        sigma: res.sigma,
    })
}

#[derive(Clone, Debug)]
pub struct ClassifyReport {
    pub path: PathBuf,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Mean CDR of test points against their own class.
    pub mean_same: f64,
    /// Mean CDR of test points against the other classes.
    pub mean_cross: f64,
    pub sigma: Vec<f64>,
}

pub fn cmd_classify(config: &Path) -> Result<ClassifyReport> {
    classify_with(&RunConfig::load(config)?)
}

pub fn classify_with(cfg: &RunConfig) -> Result<ClassifyReport> {
    ensure!(
        cfg.coding.scheme == SchemeKind::Class,
        "classification needs coding.scheme = class"
    );
    let run = run_training(cfg)?;
    let ck = &run.checkpoint;
    let data = cfg.dataset()?;
    let table = data
        .as_table()
        .ok_or_else(|| anyhow!("class coding needs a finite table"))?;
    let labels = table.labels().ok_or_else(|| anyhow!("dataset has no labels"))?.to_vec();
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let (x, u) = table.epoch_pairs(0);
    let res = SpectrumResult::fit(&ck.f, &ck.g, x.view(), u.view(), cfg.eval.ridge)?;
    let phi_train = eigenfunctions(&ck.f, &res, x.view())?;
    let protos = ClassPrototypes::fit(phi_train.view(), &labels, n_classes, &res.sigma)?;

    let test = cfg.base_data(cfg.eval.test_samples, TEST_STREAM)?;
    let test_labels = test.labels.ok_or_else(|| anyhow!("test data has no labels"))?;
    if let Some(&bad) = test_labels.iter().find(|&&c| c >= n_classes) {
        bail!("test label {bad} was not seen during training ({n_classes} classes)");
    }
    let phi_test = eigenfunctions(&ck.f, &res, test.x.view())?;
    let mut predictions = Vec::with_capacity(test_labels.len());
    let (mut same, mut cross, mut n_cross) = (0.0, 0.0, 0usize);
    for (row, &c) in phi_test.axis_iter(Axis(0)).zip(&test_labels) {
        let scores = protos.mean_cdr(row);
        predictions.push(protos.predict(row));
        same += scores[c];
        for (other, &s) in scores.iter().enumerate() {
            if other != c {
                cross += s;
                n_cross += 1;
            }
        }
    }
    let n = test_labels.len() as f64;
    let correct = predictions.iter().zip(&test_labels).filter(|(p, t)| p == t).count();
    let report = ClassifyReport {
        path: output_dir(cfg)?.join("classify.csv"),
        accuracy: correct as f64 / n,
        predictions,
        mean_same: same / n,
        mean_cross: if n_cross > 0 { cross / n_cross as f64 } else { 0.0 },
        sigma: res.sigma.clone(),
    };
    write_pairs(
        &report.path,
        ["key", "value"],
        [
            ("accuracy".to_string(), format_f64(report.accuracy)),
            ("mean_same_class_cdr".to_string(), format_f64(report.mean_same)),
            ("mean_cross_class_cdr".to_string(), format_f64(report.mean_cross)),
        ],
    )?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    PAlpha,
    Rho,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "p_alpha" => Ok(SweepParam::PAlpha),
            "rho" => Ok(SweepParam::Rho),
            _ => bail!("unknown sweep parameter `{s}` (expected `p_alpha` or `rho`)"),
        }
    }
}

/// Trains one model per value and records learned against true spectra.
pub fn cmd_sweep(config: &Path, param: SweepParam, values: &[f64]) -> Result<PathBuf> {
    let base = RunConfig::load(config)?;
    let expected = match param {
        SweepParam::PAlpha => DatasetKind::Mc,
        SweepParam::Rho => DatasetKind::Gauss,
    };
    ensure!(
        base.dataset.kind == expected,
        "sweeping this parameter needs dataset.kind = {}",
        expected.name()
    );
    let path = output_dir(&base)?.join("sweep.csv");
    let mut w = writer(&path)?;
    w.write_record(["value", "index", "sigma", "oracle"])?;
    for &v in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::PAlpha => cfg.dataset.p_alpha = v,
            SweepParam::Rho => cfg.dataset.rho = v,
        }
        let cfg = RunConfig::parse(&cfg.to_text()).with_context(|| format!("sweep value {v}"))?;
        let run = run_training(&cfg)?;
        let data = cfg.dataset()?;
        let (x, u) = eval_pairs(&cfg, &data, cfg.eval.batch);
        let res = SpectrumResult::fit(&run.checkpoint.f, &run.checkpoint.g, x.view(), u.view(), cfg.eval.ridge)?;
        let truth = oracle_spectrum(&cfg, res.sigma.len())?;
        for (i, (s, t)) in res.sigma.iter().zip(&truth).enumerate() {
            w.write_record([v.to_string(), (i + 1).to_string(), format_f64(*s), format_f64(*t)])?;
        }
    }
    w.flush()?;
    Ok(path)
}
