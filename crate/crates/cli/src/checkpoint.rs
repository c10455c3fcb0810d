//! Versioned plain-text checkpoint.
//!
//! ```text
//! fmca-checkpoint 1
//! iteration <n>
//! config <lines>
//! <key = value>...
//! net f <activation> <layers>
//! layer <in> <out>
//! <in rows of out weights>
//! <bias row>
//! ...
//! net g ...
//! state <k> <beta> <eps>
//! matrix r_f <rows> <cols>
//! ...
//! end
//! ```
//!
//! Floats use 17 significant digits, so a load followed by a save is byte-identical.

use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use fmca::fmca::{CorrState, CorrStats};
use fmca::linalg::SymMatrix;
use fmca::netfn::{Layer, MlpParams, OutputActivation};
use fmca::textio::format_f64;
use ndarray::{Array1, Array2};

use crate::config::RunConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "fmca-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub iteration: u64,
    pub f: MlpParams,
    pub g: MlpParams,
    pub state: CorrState,
}

fn row_text<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values.into_iter().map(|&v| format_f64(v)).collect::<Vec<_>>().join(" ")
}

fn write_matrix(out: &mut String, name: &str, m: &Array2<f64>) {
    out.push_str(&format!("matrix {name} {} {}\n", m.nrows(), m.ncols()));
    for row in m.rows() {
        out.push_str(&row_text(row.iter()));
        out.push('\n');
    }
}

fn write_net(out: &mut String, name: &str, net: &MlpParams) {
    out.push_str(&format!(
        "net {name} {} {}\n",
        net.output_activation().name(),
        net.layers().len()
    ));
    for layer in net.layers() {
        let (rows, cols) = layer.weights.dim();
        out.push_str(&format!("layer {rows} {cols}\n"));
        for row in layer.weights.rows() {
            out.push_str(&row_text(row.iter()));
            out.push('\n');
        }
        out.push_str(&row_text(layer.bias.iter()));
        out.push('\n');
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| anyhow!("checkpoint truncated"))
    }

    /// Next line split into words, checking the leading keyword.
    fn header(&mut self, keyword: &str) -> Result<(usize, Vec<&'a str>)> {
        let (no, line) = self.next()?;
        let words: Vec<&str> = line.split_whitespace().collect();
        ensure!(words.first() == Some(&keyword), "line {no}: expected `{keyword}`");
        Ok((no, words[1..].to_vec()))
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (no, line) = self.next()?;
        let values = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| anyhow!("line {no}: bad number `{w}`")))
            .collect::<Result<Vec<_>>>()?;
        ensure!(
            values.len() == expected,
            "line {no}: expected {expected} values, found {}",
            values.len()
        );
        Ok(values)
    }

    fn matrix(&mut self, name: &str) -> Result<Array2<f64>> {
        let (no, words) = self.header("matrix")?;
        ensure!(
            words.len() == 3 && words[0] == name,
            "line {no}: expected `matrix {name} <rows> <cols>`"
        );
        let rows: usize = parse_word(no, words[1])?;
        let cols: usize = parse_word(no, words[2])?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.floats(cols)?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data)?)
    }

    fn net(&mut self, name: &str) -> Result<MlpParams> {
        let (no, words) = self.header("net")?;
        ensure!(
            words.len() == 3 && words[0] == name,
            "line {no}: expected `net {name} <activation> <layers>`"
        );
        let act =
            OutputActivation::parse(words[1]).ok_or_else(|| anyhow!("line {no}: unknown activation `{}`", words[1]))?;
        let count: usize = parse_word(no, words[2])?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, words) = self.header("layer")?;
            ensure!(words.len() == 2, "line {no}: expected `layer <in> <out>`");
            let rows: usize = parse_word(no, words[0])?;
            let cols: usize = parse_word(no, words[1])?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                data.extend(self.floats(cols)?);
            }
            layers.push(Layer {
                weights: Array2::from_shape_vec((rows, cols), data)?,
                bias: Array1::from(self.floats(cols)?),
            });
        }
        Ok(MlpParams::from_layers(layers, act)?)
    }
}

fn parse_word<T: std::str::FromStr>(no: usize, w: &str) -> Result<T> {
    w.parse().map_err(|_| anyhow!("line {no}: bad value `{w}`"))
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\niteration {}\n", self.iteration);
        let config = self.config.to_text();
        out.push_str(&format!("config {}\n", config.lines().count()));
        out.push_str(&config);
        write_net(&mut out, "f", &self.f);
        write_net(&mut out, "g", &self.g);
        let s = &self.state;
        out.push_str(&format!("state {} {} {}\n", s.k, format_f64(s.beta), format_f64(s.eps)));
        write_matrix(&mut out, "r_f", s.ema.r_f.as_array());
        write_matrix(&mut out, "r_g", s.ema.r_g.as_array());
        write_matrix(&mut out, "p_fg", &s.ema.p_fg);
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
        };
        let (_, words) = lines.header(MAGIC).context("not a checkpoint file")?;
        let version: u32 = words
            .first()
            .ok_or_else(|| anyhow!("line 1: missing version"))
            .and_then(|w| parse_word(1, w))?;
        if version != CHECKPOINT_VERSION {
            bail!("checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})");
        }
        let (no, words) = lines.header("iteration")?;
        let iteration: u64 = parse_word(no, words.first().copied().unwrap_or(""))?;
        let (no, words) = lines.header("config")?;
        let n: usize = parse_word(no, words.first().copied().unwrap_or(""))?;
        let mut config = String::new();
        for _ in 0..n {
            config.push_str(lines.next()?.1);
            config.push('\n');
        }
        let config = RunConfig::parse(&config).context("embedded config")?;
        let f = lines.net("f")?;
        let g = lines.net("g")?;
        let (no, words) = lines.header("state")?;
        ensure!(words.len() == 3, "line {no}: expected `state <k> <beta> <eps>`");
        let k: u64 = parse_word(no, words[0])?;
        let beta: f64 = parse_word(no, words[1])?;
        let eps: f64 = parse_word(no, words[2])?;
        let r_f = SymMatrix::new(lines.matrix("r_f")?)?;
        let r_g = SymMatrix::new(lines.matrix("r_g")?)?;
        let p_fg = lines.matrix("p_fg")?;
        lines.header("end")?;
        ensure!(
            f.output_dim() == r_f.dim() && g.output_dim() == r_g.dim() && p_fg.dim() == (r_f.dim(), r_g.dim()),
            "state dimensions do not match the networks"
        );
        Ok(Checkpoint {
            config,
            iteration,
            f,
            g,
            state: CorrState {
                ema: CorrStats { r_f, r_g, p_fg },
                k,
                beta,
                eps,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).with_context(|| format!("writing checkpoint {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Checkpoint::from_text(&text).with_context(|| format!("loading checkpoint {}", path.display()))
    }
}
