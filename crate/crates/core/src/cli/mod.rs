//! The `mrs` command-line front end.
//!
//! ```text
//! mrs gen      --config run.cfg --out data/      # synthetic cube + labels
//! mrs sim      --config run.cfg --out sim/       # band similarity CSV/PGM + groups
//! mrs pretrain --config run.cfg --strategy mrs --ratio 0.25 --out pre/
//! mrs finetune --config run.cfg --set checkpoint=pre/pretrained.param --out ft/
//! mrs evaluate --config run.cfg --set checkpoint=ft/finetuned.param --out ev/
//! mrs compare  --config run.cfg --out cmp/       # none / spectral_random / mrs
//! ```
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 data error,
//! 4 training divergence.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::autonet::{self, init_params, ModelParams};
use crate::cube::{self, HyperCube, LabelMap, Patch};
use crate::error::{Error, Result};
use crate::leakage;
use crate::masking::Strategy;
use crate::trainer::{self, PixelSplit, TrainConfig};

pub use config::{ConfigMap, Experiment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic cube and label map.
    Gen,
    /// Export band similarities and redundancy groups of a cube.
    Sim,
    /// Masked-reconstruction pretraining.
    Pretrain,
    /// Supervised fine-tuning from a checkpoint (or from scratch).
    Finetune,
    /// Overall and per-class accuracy of a checkpoint on the test split.
    Evaluate,
    /// No pretraining vs spectral-random vs MRS pretraining, over seeds.
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Sim => "sim",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Evaluate => "evaluate",
            Command::Compare => "compare",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mrs",
    about = "Redundancy-aware spectral masking for masked image modeling",
    arg_required_else_help = true
)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created if absent).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the mask ratio `ratio`, in (0, 1).
    #[arg(long, global = true)]
    ratio: Option<f64>,

    /// Override `strategy` (spatial_random, spectral_random, mrs).
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Override any configuration key, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// A parsed invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSpec {
    pub command: Command,
    pub config: Option<PathBuf>,
    /// Applied in order on top of the configuration file.
    pub overrides: Vec<(String, String)>,
    pub out: PathBuf,
}

/// Parsing stopped early: help text (code 0) or a usage error (code 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageExit {
    pub code: i32,
    pub text: String,
}

pub fn parse_args<I, T>(argv: I) -> std::result::Result<CommandSpec, UsageExit>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| UsageExit {
        code: if e.use_stderr() { 2 } else { 0 },
        text: e.render().to_string(),
    })?;
    let usage = |text: String| UsageExit { code: 2, text };

    let mut overrides = Vec::new();
    if let Some(seed) = args.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    if let Some(ratio) = args.ratio {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(usage(format!("error: --ratio {ratio} is outside (0, 1)\n")));
        }
        overrides.push(("ratio".to_string(), ratio.to_string()));
    }
    if let Some(strategy) = args.strategy {
        strategy
            .parse::<Strategy>()
            .map_err(|e| usage(format!("error: {e}\n")))?;
        overrides.push(("strategy".to_string(), strategy));
    }
    for pair in args.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("error: --set expects KEY=VALUE, got `{pair}`\n")))?;
        if !config::KEYS.iter().any(|(key, _)| *key == k.trim()) {
            return Err(usage(format!("error: unknown configuration key `{k}`\n")));
        }
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(CommandSpec {
        command: args.command,
        config: args.config,
        overrides,
        out: args.out,
    })
}

/// Parses, runs and reports; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let spec = match parse_args(argv) {
        Ok(spec) => spec,
        Err(exit) => {
            if exit.code == 0 {
                print!("{}", exit.text);
            } else {
                eprint!("{}", exit.text);
            }
            return exit.code;
        }
    };
    match run(&spec) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the configuration of `spec` (file, then overrides).
pub fn resolve(spec: &CommandSpec) -> Result<Experiment> {
    let mut map = match &spec.config {
        Some(path) => ConfigMap::parse(&fs::read_to_string(path)?)?,
        None => ConfigMap::default(),
    };
    for (k, v) in &spec.overrides {
        map.set(k, v)?;
    }
    Experiment::from_map(map)
}

pub fn run(spec: &CommandSpec) -> Result<()> {
    let exp = resolve(spec)?;
    fs::create_dir_all(&spec.out)?;
    fs::write(spec.out.join("config.echo"), exp.echo())?;
    match spec.command {
        Command::Gen => run_gen(&exp, &spec.out),
        Command::Sim => run_sim(&exp, &spec.out),
        Command::Pretrain => run_pretrain(&exp, &spec.out),
        Command::Finetune => run_finetune(&exp, &spec.out),
        Command::Evaluate => run_evaluate(&exp, &spec.out),
        Command::Compare => run_compare(&exp, &spec.out),
    }
}

/// Reads the configured cube and labels, or generates the synthetic scene.
pub fn load_data(exp: &Experiment) -> Result<(HyperCube, LabelMap)> {
    match &exp.cube {
        Some(path) => {
            let cube = cube::read_cube(path)?;
            let labels_path = exp.labels.as_ref().ok_or_else(|| {
                Error::Config("`labels` must be set when `cube` is".into())
            })?;
            let labels = cube::read_labels(labels_path)?;
            Ok((cube, labels))
        }
        None => cube::gen_synthetic(&exp.synthetic),
    }
}

/// Normalized patches for one seed's pixel split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: PixelSplit,
    pub classes: usize,
    pub pretrain: Vec<Patch>,
    pub train: Vec<Patch>,
    pub train_labels: Vec<u16>,
    pub test: Vec<Patch>,
    pub test_labels: Vec<u16>,
}

/// Splits pixels with `seed`, z-scores the cube on the non-test pixels and
/// extracts the patches for each stage.
pub fn prepare(
    exp: &Experiment,
    cube: &HyperCube,
    labels: &LabelMap,
    seed: u64,
) -> Result<Prepared> {
    let t = &exp.train;
    let split = trainer::split_pixels(
        cube,
        labels,
        exp.patch_size,
        t.train_fraction,
        t.test_fraction,
        seed,
    )?;
    if split.pool.is_empty() || split.test.is_empty() {
        return Err(Error::Data(format!(
            "no usable pixels for P={} (pool {}, test {})",
            exp.patch_size,
            split.pool.len(),
            split.test.len()
        )));
    }
    let stats = cube::compute_stats(cube, Some(&split.pool))?;
    let normalized = cube::normalize(cube, &stats)?;
    let pool = trainer::subsample(&split.pool, exp.pretrain_patches, seed);
    Ok(Prepared {
        pretrain: trainer::patches_at(&normalized, &pool, exp.patch_size)?,
        train: trainer::patches_at(&normalized, &split.train, exp.patch_size)?,
        train_labels: trainer::labels_at(labels, &split.train),
        test: trainer::patches_at(&normalized, &split.test, exp.patch_size)?,
        test_labels: trainer::labels_at(labels, &split.test),
        classes: labels.classes(),
        split,
    })
}

fn initial_params(exp: &Experiment, cube: &HyperCube, classes: usize, seed: u64) -> ModelParams {
    init_params(exp.train.dims(cube.bands(), exp.patch_size, classes), seed)
}

fn run_gen(exp: &Experiment, out: &Path) -> Result<()> {
    let (cube, labels) = cube::gen_synthetic(&exp.synthetic)?;
    cube::write_cube(&cube, out.join("cube.spc"))?;
    cube::write_labels(&labels, out.join("labels.spl"))?;
    println!(
        "wrote {}x{}x{} cube and {} classes to {}",
        cube.bands(),
        cube.height(),
        cube.width(),
        labels.classes(),
        out.display()
    );
    Ok(())
}

fn run_sim(exp: &Experiment, out: &Path) -> Result<()> {
    let cube = match &exp.cube {
        Some(path) => cube::read_cube(path)?,
        None => cube::gen_synthetic(&exp.synthetic)?.0,
    };
    let normalized = cube::normalize(&cube, &cube::compute_stats(&cube, None)?)?;
    let bands: Vec<&[f64]> = (0..normalized.bands()).map(|b| normalized.band(b)).collect();
    let matrix = leakage::similarity_of_bands(&bands);
    matrix.write_csv(out.join("similarity.csv"))?;
    matrix.write_pgm(out.join("similarity.pgm"))?;
    let groups = leakage::redundancy_groups(&matrix, exp.threshold)?;
    let mut text = String::from("group,members,min_similarity\n");
    for (g, group) in groups.iter().enumerate() {
        let members: Vec<String> = group.members.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(text, "{g},{},{}", members.join(";"), group.min_similarity);
    }
    fs::write(out.join("groups.csv"), text)?;
    println!(
        "{} bands, {} redundancy groups at threshold {}",
        matrix.size(),
        groups.len(),
        exp.threshold
    );
    Ok(())
}

fn run_pretrain(exp: &Experiment, out: &Path) -> Result<()> {
    let (cube, labels) = load_data(exp).map_err(|e| e.in_stage("load"))?;
    let seed = exp.train.seed;
    let data = prepare(exp, &cube, &labels, seed).map_err(|e| e.in_stage("prepare"))?;
    let init = initial_params(exp, &cube, data.classes, seed);
    let (params, report) =
        trainer::pretrain(&exp.train, init, &data.pretrain).map_err(|e| e.in_stage("pretrain"))?;
    autonet::write_params(&params, out.join("pretrained.param"))?;
    fs::write(out.join("report.csv"), report.report_csv())?;
    eprintln!(
        "pretrained on {} patches in {:.1}s, final loss {:?}",
        data.pretrain.len(),
        report.wall_seconds,
        report.final_pretrain_loss()
    );
    Ok(())
}

fn load_checkpoint(exp: &Experiment, cube: &HyperCube, classes: usize) -> Result<ModelParams> {
    match &exp.checkpoint {
        Some(path) => {
            let params = autonet::read_params(path)?;
            let expected = exp.train.dims(cube.bands(), exp.patch_size, classes);
            if params.dims() != expected {
                return Err(Error::Shape(format!(
                    "checkpoint {:?} does not match data/config {:?}",
                    params.dims(),
                    expected
                )));
            }
            Ok(params)
        }
        None => Ok(initial_params(exp, cube, classes, exp.train.seed)),
    }
}

fn run_finetune(exp: &Experiment, out: &Path) -> Result<()> {
    let (cube, labels) = load_data(exp).map_err(|e| e.in_stage("load"))?;
    let data = prepare(exp, &cube, &labels, exp.train.seed).map_err(|e| e.in_stage("prepare"))?;
    let start = load_checkpoint(exp, &cube, data.classes).map_err(|e| e.in_stage("load"))?;
    let (params, report) = trainer::finetune(&exp.train, start, &data.train, &data.train_labels)
        .map_err(|e| e.in_stage("finetune"))?;
    autonet::write_params(&params, out.join("finetuned.param"))?;
    fs::write(out.join("report.csv"), report.report_csv())?;
    eprintln!(
        "fine-tuned on {} labeled patches in {:.1}s",
        data.train.len(),
        report.wall_seconds
    );
    Ok(())
}

fn run_evaluate(exp: &Experiment, out: &Path) -> Result<()> {
    let (cube, labels) = load_data(exp).map_err(|e| e.in_stage("load"))?;
    let data = prepare(exp, &cube, &labels, exp.train.seed).map_err(|e| e.in_stage("prepare"))?;
    let params = load_checkpoint(exp, &cube, data.classes).map_err(|e| e.in_stage("load"))?;
    let eval = trainer::evaluate_oa(&params, &data.test, &data.test_labels)
        .map_err(|e| e.in_stage("evaluate"))?;
    let mut report = trainer::RunReport::new(exp.train.clone());
    report.oa = Some(eval.oa);
    report.per_class = eval.per_class;
    fs::write(out.join("report.csv"), report.report_csv())?;
    fs::write(out.join("perclass.csv"), report.perclass_csv())?;
    println!("OA {:.4} on {} test pixels", eval.oa, data.test.len());
    Ok(())
}

/// Pretraining arm of the comparison; `None` trains from scratch.
pub const COMPARE_ARMS: [Option<Strategy>; 3] =
    [None, Some(Strategy::SpectralRandom), Some(Strategy::Mrs)];

/// One row of `compare.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub arm: Option<Strategy>,
    pub seed: u64,
    pub oa: f64,
    pub final_pretrain_loss: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

impl CompareRow {
    pub fn arm_name(&self) -> &'static str {
        self.arm.map(Strategy::as_str).unwrap_or("none")
    }

    fn csv(&self) -> String {
        let loss = self
            .final_pretrain_loss
            .map(|l| l.to_string())
            .unwrap_or_default();
        let classes: Vec<String> = self
            .per_class
            .iter()
            .map(|a| a.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()))
            .collect();
        format!(
            "{},{},{},{},{}\n",
            self.arm_name(),
            self.seed,
            self.oa,
            loss,
            classes.join(",")
        )
    }
}

/// Runs one arm for one seed: optional pretraining, fine-tuning, evaluation.
pub fn compare_arm(
    train: &TrainConfig,
    init: &ModelParams,
    data: &Prepared,
    arm: Option<Strategy>,
    seed: u64,
) -> Result<CompareRow> {
    let mut config = train.clone();
    config.seed = seed;
    let (start, pretrain_loss) = match arm {
        None => (init.clone(), None),
        Some(strategy) => {
            config.strategy = strategy;
            let (params, report) = trainer::pretrain(&config, init.clone(), &data.pretrain)
                .map_err(|e| e.in_stage(format!("pretrain[{strategy}, seed {seed}]")))?;
            (params, report.final_pretrain_loss())
        }
    };
    let label = arm.map(Strategy::as_str).unwrap_or("none");
    let (params, _) = trainer::finetune(&config, start, &data.train, &data.train_labels)
        .map_err(|e| e.in_stage(format!("finetune[{label}, seed {seed}]")))?;
    let eval = trainer::evaluate_oa(&params, &data.test, &data.test_labels)
        .map_err(|e| e.in_stage(format!("evaluate[{label}, seed {seed}]")))?;
    Ok(CompareRow {
        arm,
        seed,
        oa: eval.oa,
        final_pretrain_loss: pretrain_loss,
        per_class: eval.per_class,
    })
}

/// Header line of `compare.csv` for `classes` classes.
pub fn compare_header(classes: usize) -> String {
    let mut header = String::from("strategy,seed,oa,final_pretrain_loss");
    for k in 1..=classes {
        let _ = write!(header, ",class_{k}");
    }
    header.push('\n');
    header
}

/// Every arm for every seed with shared data, initialization and budgets.
///
/// Rows are appended to `compare.csv` as they finish, so a failure keeps the
/// completed ones.
pub fn run_compare(exp: &Experiment, out: &Path) -> Result<()> {
    let (cube, labels) = load_data(exp).map_err(|e| e.in_stage("load"))?;
    let mut file = File::create(out.join("compare.csv"))?;
    file.write_all(compare_header(labels.classes()).as_bytes())?;
    for &seed in &exp.seeds {
        let data = prepare(exp, &cube, &labels, seed)
            .map_err(|e| e.in_stage(format!("prepare[seed {seed}]")))?;
        let init = initial_params(exp, &cube, data.classes, seed);
        for arm in COMPARE_ARMS {
            let row = compare_arm(&exp.train, &init, &data, arm, seed)?;
            eprintln!("seed {seed} {:>15}: OA {:.4}", row.arm_name(), row.oa);
            file.write_all(row.csv().as_bytes())?;
            file.flush()?;
        }
    }
    Ok(())
}
