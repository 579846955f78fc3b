//! Inference, empirical Lipschitz estimates, and model files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationDef, ActivationSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::param::{backward_pass, BlockShape, MaterializeConfig, MaterializedBlock, RawBlock};

pub const FORMAT_VERSION: u32 = 1;

/// A stack of residual blocks sharing `d_x`. Each block receives
/// `L_total^(1/K)` so the composition is `L_total`-Lipschitz.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    lipschitz_total: f64,
    blocks: Vec<RawBlock>,
}

pub fn per_block_lipschitz(total: f64, blocks: usize) -> f64 {
    if blocks == 1 {
        total
    } else {
        total.powf(1.0 / blocks as f64)
    }
}

impl Model {
    /// Overwrites each block's Lipschitz bound with its share of `lipschitz_total`.
    pub fn new(lipschitz_total: f64, mut blocks: Vec<RawBlock>) -> Result<Self> {
        if !(lipschitz_total.is_finite() && lipschitz_total > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lipschitz_total must be positive, got {lipschitz_total}"
            )));
        }
        if blocks.is_empty() {
            return Err(Error::Shape("a model needs at least one block".into()));
        }
        let share = per_block_lipschitz(lipschitz_total, blocks.len());
        let d_x = blocks[0].shape.d_x;
        for (i, b) in blocks.iter_mut().enumerate() {
            if b.shape.d_x != d_x {
                return Err(Error::Shape(format!(
                    "block {i} has d_x = {}, block 0 has {d_x}",
                    b.shape.d_x
                )));
            }
            b.lipschitz = share;
            b.validate()?;
        }
        Ok(Self {
            lipschitz_total,
            blocks,
        })
    }

    pub fn lipschitz_total(&self) -> f64 {
        self.lipschitz_total
    }

    pub fn blocks(&self) -> &[RawBlock] {
        &self.blocks
    }

    pub fn d_x(&self) -> usize {
        self.blocks[0].shape.d_x
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(RawBlock::param_count).sum()
    }

    /// Concatenation of every block's [`RawBlock::params`].
    pub fn params(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(RawBlock::params).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector: length {}, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for b in &mut self.blocks {
            let k = b.param_count();
            b.set_params(&flat[at..at + k])?;
            at += k;
        }
        Ok(())
    }

    pub fn materialize(&self, cfg: &MaterializeConfig) -> Result<MaterializedModel> {
        Ok(MaterializedModel {
            lipschitz_total: self.lipschitz_total,
            blocks: self
                .blocks
                .iter()
                .map(|b| backward_pass(b, cfg))
                .collect::<Result<_>>()?,
        })
    }
}

/// Constrained parameters for every block, computed once per update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializedModel {
    pub lipschitz_total: f64,
    pub blocks: Vec<MaterializedBlock>,
}

impl MaterializedModel {
    pub fn d_x(&self) -> usize {
        self.blocks[0].shape.d_x
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        model_forward(self, x)
    }
}

/// `A∘x + B∘w_n` with `w_l = σ_l(C_l w_{l-1} + b_l)`.
pub fn block_forward(block: &MaterializedBlock, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != block.shape.d_x {
        return Err(Error::Shape(format!(
            "input has length {}, block expects {}",
            x.len(),
            block.shape.d_x
        )));
    }
    let mut w = x.to_vec();
    for ((c, bias), act) in block.c.iter().zip(&block.biases).zip(&block.activations) {
        w = c
            .matvec(&w)?
            .iter()
            .zip(bias)
            .map(|(z, b)| act.eval(z + b))
            .collect();
    }
    Ok((0..x.len()).map(|i| block.a[i] * x[i] + block.b[i] * w[i]).collect())
}

pub fn model_forward(model: &MaterializedModel, x: &[f64]) -> Result<Vec<f64>> {
    model.blocks.iter().try_fold(x.to_vec(), |h, b| block_forward(b, &h))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest `||f(x) - f(x')|| / ||x - x'||` over `pairs` uniform pairs in
/// `[lo, hi]^{d_x}`. Pairs closer than `1e-12` are skipped.
pub fn empirical_lipschitz(model: &MaterializedModel, domain: (f64, f64), pairs: usize, seed: u64) -> Result<f64> {
    let (lo, hi) = domain;
    if pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!("degenerate domain [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.d_x();
    let mut best = 0.0f64;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(lo..hi)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(lo..hi)).collect();
        let dx = dist(&x, &y);
        if dx < 1e-12 {
            continue;
        }
        let ratio = dist(&model_forward(model, &x)?, &model_forward(model, &y)?) / dx;
        best = best.max(ratio);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub d_x: usize,
    pub dims: Vec<usize>,
    pub activations: Vec<ActivationDef>,
    #[serde(rename = "W_raw")]
    pub w_raw: Vec<Vec<Vec<f64>>>,
    pub a_raw: Vec<f64>,
    pub b_raw: Vec<f64>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub lipschitz_total: f64,
    pub blocks: Vec<BlockFile>,
}

impl From<&Model> for ModelFile {
    fn from(m: &Model) -> Self {
        ModelFile {
            version: FORMAT_VERSION,
            lipschitz_total: m.lipschitz_total,
            blocks: m
                .blocks
                .iter()
                .map(|b| BlockFile {
                    d_x: b.shape.d_x,
                    dims: b.shape.dims.clone(),
                    activations: b.activations.iter().cloned().map(ActivationDef::from).collect(),
                    w_raw: b.w_raw.iter().map(Matrix::to_rows).collect(),
                    a_raw: b.a_raw.clone(),
                    b_raw: b.b_raw.clone(),
                    biases: b.biases.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for Model {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        check_version(f.version)?;
        let blocks = f
            .blocks
            .into_iter()
            .enumerate()
            .map(|(i, b)| -> Result<RawBlock> {
                let shape = BlockShape::new(b.d_x, b.dims).map_err(|e| Error::Format(format!("block {i}: {e}")))?;
                let activations = b
                    .activations
                    .into_iter()
                    .map(ActivationSpec::try_from)
                    .collect::<Result<Vec<_>>>()?;
                let w_raw = b
                    .w_raw
                    .iter()
                    .map(|rows| {
                        if rows.is_empty() {
                            Err(Error::Format(format!("block {i}: empty weight matrix")))
                        } else {
                            Matrix::from_rows(rows)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(RawBlock {
                    shape,
                    lipschitz: f.lipschitz_total,
                    activations,
                    w_raw,
                    a_raw: b.a_raw,
                    b_raw: b.b_raw,
                    biases: b.biases,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(f.lipschitz_total, blocks)
    }
}

pub fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn model_to_json(model: &Model) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&ModelFile::from(model))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text)?;
    Model::try_from(file)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    model_from_json(&fs::read_to_string(path)?)
}

/// Materialized dump: the constrained parameters, as written by the
/// `materialize` subcommand and accepted by `verify --raw-materialized`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterializedFile {
    pub version: u32,
    pub lipschitz_total: f64,
    pub blocks: Vec<MaterializedBlock>,
}

pub fn save_materialized(model: &MaterializedModel, path: impl AsRef<Path>) -> Result<()> {
    let file = MaterializedFile {
        version: FORMAT_VERSION,
        lipschitz_total: model.lipschitz_total,
        blocks: model.blocks.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn load_materialized(path: impl AsRef<Path>) -> Result<MaterializedModel> {
    let file: MaterializedFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_version(file.version)?;
    if file.blocks.is_empty() {
        return Err(Error::Format("no blocks".into()));
    }
    for b in &file.blocks {
        b.validate_shapes()?;
    }
    Ok(MaterializedModel {
        lipschitz_total: file.lipschitz_total,
        blocks: file.blocks,
    })
}

/// One vector per line, comma separated. Blank lines are skipped; every
/// row must have the same length.
pub fn read_vectors_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Csv {
                    line,
                    message: format!("`{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = out.first() {
            if first.len() != row.len() {
                return Err(Error::Csv {
                    line,
                    message: format!("{} fields, expected {}", row.len(), first.len()),
                });
            }
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_vectors_csv<W: Write>(w: W, rows: &[Vec<f64>]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(w);
    for r in rows {
        wtr.write_record(r.iter().map(f64::to_string)).map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })?;
    }
    wtr.flush()?;
    Ok(())
}
