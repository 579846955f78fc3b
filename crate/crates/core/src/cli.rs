//! The `gresnet` command line.
//!
//! Exit codes: 0 success, 1 I/O or validation error, 2 usage error,
//! 3 verification failure, 4 training divergence.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::activations::{catalog, ActivationDef, ActivationSpec};
use crate::error::{Error, Result};
use crate::lmi::{clip_to_quartile_range, verify_block, write_discs_csv, write_eigenvalues_csv, GershgorinDisc, LmiReport, Tolerances};
use crate::network::{
    check_version, empirical_lipschitz, load_materialized, load_model, model_forward, read_vectors_csv, save_materialized,
    save_model, write_vectors_csv, MaterializedModel, Model, FORMAT_VERSION,
};
use crate::param::{init_raw, BlockShape, MaterializeConfig};
use crate::plot;
use crate::training::{
    linear_fit_oracle, make_sine_dataset, output_curve, train, write_curve_csv, write_history_csv, TrainConfig, CURVE_POINTS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "gresnet", version, about = "Certified Lipschitz residual blocks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the activation catalog with slope constants.
    Constants {
        #[arg(long)]
        json: bool,
    },
    /// Create a model file from a shape config with random raw parameters.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Write the constrained parameters of a model.
    Materialize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the certificate of every block.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        discs: Option<PathBuf>,
        #[arg(long)]
        eigs: Option<PathBuf>,
        /// Random input pairs for the empirical Lipschitz estimate (0 skips it).
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Treat `--model` as a materialized dump and skip the sweep.
        #[arg(long)]
        raw_materialized: bool,
        /// Directory for SVG figures.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Also write display copies of the eigenvalues restricted to
        /// `[Q1 - k IQR, Q3 + k IQR]`.
        #[arg(long, value_name = "K")]
        clip_quantile: Option<f64>,
        #[arg(long, default_value_t = 1e-9)]
        disc_tol: f64,
        #[arg(long, default_value_t = 1e-8)]
        eig_tol: f64,
    },
    /// Fit the sine target and write the trained model and curves.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        /// Overrides the seed in the training config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run a model on every row of a CSV file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Shape config consumed by `init`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default = "format_version")]
    pub version: u32,
    pub lipschitz: f64,
    pub d_x: usize,
    pub dims: Vec<usize>,
    pub activations: Vec<ActivationDef>,
    #[serde(default = "one")]
    pub blocks: usize,
}

fn format_version() -> u32 {
    FORMAT_VERSION
}

fn one() -> usize {
    1
}

impl InitConfig {
    /// Block `k` draws from seed `seed + k`.
    pub fn build(&self, seed: u64) -> Result<Model> {
        check_version(self.version)?;
        if self.blocks == 0 {
            return Err(Error::InvalidArgument("blocks must be >= 1".into()));
        }
        let shape = BlockShape::new(self.d_x, self.dims.clone())?;
        let acts = self
            .activations
            .iter()
            .cloned()
            .map(ActivationSpec::try_from)
            .collect::<Result<Vec<_>>>()?;
        let raws = (0..self.blocks)
            .map(|k| init_raw(&shape, self.lipschitz, acts.clone(), seed.wrapping_add(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        Model::new(self.lipschitz, raws)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub version: u32,
    pub pass: bool,
    pub lipschitz_total: f64,
    pub empirical_lipschitz: Option<f64>,
    pub empirical_pass: bool,
    pub pairs: usize,
    pub blocks: Vec<LmiReport>,
}

enum Failure {
    Error(Error),
    Verify,
    Diverged(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Error(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
        Err(Failure::Verify) => {
            let _ = writeln!(err, "verification failed");
            EXIT_VERIFY
        }
        Err(Failure::Diverged(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DIVERGED
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Constants { json } => cmd_constants(json, out),
        Command::Init { config, out: path, seed } => {
            let cfg: InitConfig = serde_json::from_str(&fs::read_to_string(&config)?).map_err(Error::from)?;
            let model = cfg.build(seed)?;
            save_model(&model, &path)?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(())
        }
        Command::Materialize { model, out: path } => {
            let m = load_model(&model)?.materialize(&MaterializeConfig::default())?;
            save_materialized(&m, &path)?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(())
        }
        Command::Verify {
            model,
            report,
            discs,
            eigs,
            pairs,
            seed,
            raw_materialized,
            svg,
            clip_quantile,
            disc_tol,
            eig_tol,
        } => {
            let mat = if raw_materialized {
                load_materialized(&model)?
            } else {
                load_model(&model)?.materialize(&MaterializeConfig::default())?
            };
            let tol = Tolerances {
                disc: disc_tol,
                eig: eig_tol,
                ..Tolerances::default()
            };
            let opts = VerifyOutputs {
                report,
                discs,
                eigs,
                svg,
                clip_quantile,
            };
            cmd_verify(&mat, &tol, pairs, seed, &opts, out)
        }
        Command::Train {
            model,
            train: cfg_path,
            out: path,
            history,
            curve,
            seed,
            svg,
        } => {
            let mut cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(&cfg_path)?).map_err(Error::from)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let model = load_model(&model)?;
            cmd_train(model, &cfg, &path, &history, &curve, svg.as_deref(), out)
        }
        Command::Eval { model, inputs, out: path } => {
            let mat = load_model(&model)?.materialize(&MaterializeConfig::default())?;
            let rows = read_vectors_csv(BufReader::new(File::open(&inputs)?))?;
            let outputs = rows
                .iter()
                .map(|x| model_forward(&mat, x))
                .collect::<Result<Vec<_>>>()?;
            write_vectors_csv(BufWriter::new(File::create(&path)?), &outputs)?;
            writeln!(out, "wrote {} rows to {}", outputs.len(), path.display())?;
            Ok(())
        }
    }
}

fn cmd_constants(json: bool, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    #[derive(Serialize)]
    struct Row {
        name: String,
        params: std::collections::BTreeMap<String, f64>,
        l: f64,
        m: f64,
        s: f64,
        p: f64,
    }
    let rows: Vec<Row> = catalog()
        .into_iter()
        .map(|spec| {
            let c = spec.constants();
            Row {
                name: spec.name().to_string(),
                params: spec.params().clone(),
                l: c.l,
                m: c.m,
                s: c.s,
                p: c.p,
            }
        })
        .collect();
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&rows).map_err(Error::from)?)?;
    } else {
        writeln!(out, "{:<12} {:>14} {:>14} {:>14} {:>14}", "name", "L", "m", "S", "P")?;
        for r in &rows {
            writeln!(out, "{:<12} {:>14.10} {:>14.10} {:>14.10} {:>14.10}", r.name, r.l, r.m, r.s, r.p)?;
        }
    }
    Ok(())
}

struct VerifyOutputs {
    report: PathBuf,
    discs: Option<PathBuf>,
    eigs: Option<PathBuf>,
    svg: Option<PathBuf>,
    clip_quantile: Option<f64>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn cmd_verify(
    mat: &MaterializedModel,
    tol: &Tolerances,
    pairs: usize,
    seed: u64,
    opts: &VerifyOutputs,
    out: &mut dyn Write,
) -> std::result::Result<(), Failure> {
    let reports: Vec<LmiReport> = mat.blocks.iter().map(|b| verify_block(b, tol)).collect();
    let empirical = if pairs > 0 {
        Some(empirical_lipschitz(mat, (-10.0, 10.0), pairs, seed)?)
    } else {
        None
    };
    let empirical_pass = empirical.map_or(true, |e| e <= mat.lipschitz_total * (1.0 + 1e-6));
    let pass = empirical_pass && reports.iter().all(LmiReport::pass);

    // Blocks are stacked block-diagonally so rows are numbered globally.
    let mut all_discs = Vec::new();
    let mut all_eigs = Vec::new();
    for r in &reports {
        let base = all_discs.len();
        all_discs.extend(r.discs.iter().map(|d| GershgorinDisc { row: base + d.row, ..*d }));
        all_eigs.extend_from_slice(&r.eigenvalues);
    }
    all_eigs.sort_by(f64::total_cmp);
    let display_eigs = match opts.clip_quantile {
        Some(k) => clip_to_quartile_range(&all_eigs, k),
        None => all_eigs.clone(),
    };

    let report = VerifyReport {
        version: FORMAT_VERSION,
        pass,
        lipschitz_total: mat.lipschitz_total,
        empirical_lipschitz: empirical,
        empirical_pass,
        pairs,
        blocks: reports,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    fs::write(&opts.report, text)?;
    if let Some(p) = &opts.discs {
        write_discs_csv(BufWriter::new(File::create(p)?), &all_discs)?;
    }
    if let Some(p) = &opts.eigs {
        write_eigenvalues_csv(BufWriter::new(File::create(p)?), &all_eigs)?;
        if opts.clip_quantile.is_some() {
            write_eigenvalues_csv(BufWriter::new(File::create(with_suffix(p, "_clipped"))?), &display_eigs)?;
        }
    }
    if let Some(dir) = &opts.svg {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("discs.svg"), plot::discs("Gershgorin discs", &all_discs))?;
        fs::write(dir.join("eigenvalues.svg"), plot::histogram("LMI eigenvalues", &display_eigs, 40))?;
    }

    for (k, r) in report.blocks.iter().enumerate() {
        writeln!(
            out,
            "block {k}: dim {} max disc upper {:.3e}, max eig {:.3e}, checks {}",
            r.dim,
            r.max_disc_upper,
            r.max_eig,
            if r.checks_pass { "ok" } else { "FAILED" }
        )?;
    }
    if let Some(e) = empirical {
        writeln!(out, "empirical Lipschitz {e:.6} (bound {})", mat.lipschitz_total)?;
    }
    writeln!(out, "{}", if pass { "PASS" } else { "FAIL" })?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}

fn cmd_train(
    mut model: Model,
    cfg: &TrainConfig,
    out_path: &Path,
    history_path: &Path,
    curve_path: &Path,
    svg: Option<&Path>,
    out: &mut dyn Write,
) -> std::result::Result<(), Failure> {
    cfg.validate()?;
    let mcfg = MaterializeConfig::default();
    let data = make_sine_dataset(cfg.n_points, cfg.domain, cfg.amplitude, cfg.seed)?;
    let history = train(&mut model, &data, cfg, &mcfg)?;
    write_history_csv(BufWriter::new(File::create(history_path)?), &history.losses)?;
    if let Err(e) = history.check() {
        return Err(Failure::Diverged(e));
    }
    save_model(&model, out_path)?;
    let mat = model.materialize(&mcfg)?;
    let curve = output_curve(&mat, cfg.domain, cfg.amplitude, CURVE_POINTS)?;
    write_curve_csv(BufWriter::new(File::create(curve_path)?), &curve)?;
    if let Some(dir) = svg {
        fs::create_dir_all(dir)?;
        let loss: Vec<(f64, f64)> = history.losses.iter().enumerate().map(|(e, &l)| (e as f64, l)).collect();
        fs::write(dir.join("loss.svg"), plot::line_chart("MSE", &[(history.optimizer.as_str(), loss)]))?;
        let pred = curve.iter().map(|r| (r[0], r[1])).collect();
        let target = curve.iter().map(|r| (r[0], r[2])).collect();
        fs::write(dir.join("curve.svg"), plot::line_chart("output", &[("model", pred), ("target", target)]))?;
    }
    let oracle = linear_fit_oracle(cfg.domain, cfg.amplitude)?;
    writeln!(out, "optimizer {}, epochs {}", history.optimizer, history.losses.len())?;
    writeln!(out, "final mse {:.6} (best line {:.6})", history.final_mse, oracle.loss)?;
    if let Some(c) = history.collapse {
        writeln!(out, "line fit slope {:.6} intercept {:.6} r2 {:.6}", c.slope, c.intercept, c.r2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("gresnet").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn constants_table_and_json() {
        let (code, out, _) = run_args(&["constants"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.lines().any(|l| l.starts_with("relu ")));
        let (code, out, _) = run_args(&["constants", "--json"]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let relu = v.as_array().unwrap().iter().find(|r| r["name"] == "relu").unwrap();
        assert_eq!((relu["l"].as_f64(), relu["m"].as_f64()), (Some(1.0), Some(0.0)));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_args(&["constants", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn suffix_insertion() {
        assert_eq!(with_suffix(Path::new("/a/eigs.csv"), "_clipped"), PathBuf::from("/a/eigs_clipped.csv"));
        assert_eq!(with_suffix(Path::new("eigs"), "_c"), PathBuf::from("eigs_c"));
    }

    #[test]
    fn init_config_build() {
        let cfg: InitConfig = serde_json::from_str(
            r#"{"lipschitz": 2.0, "d_x": 2, "dims": [4, 2], "activations": [{"name": "tanh"}, {"name": "relu"}], "blocks": 2}"#,
        )
        .unwrap();
        let m = cfg.build(5).unwrap();
        assert_eq!(m.blocks().len(), 2);
        assert_eq!(m, cfg.build(5).unwrap());
        let bad = InitConfig {
            activations: vec![ActivationDef { name: "leaky_relu".into(), params: Default::default() }, ActivationDef { name: "relu".into(), params: Default::default() }],
            ..cfg
        };
        assert!(matches!(bad.build(5), Err(Error::InvalidFirstActivation { .. })));
    }
}
