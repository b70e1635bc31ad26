// SPDX-License-Identifier: Apache-2.0

//! The `vmlitho` command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 training divergence.

mod ablate;
pub mod config;
pub mod figures;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vmlitho::diffwarp::save_map;
use vmlitho::faboracle::FabParam;
use vmlitho::layoutgen::{build_dataset, manifest_hash, DatasetManifest, Split};
use vmlitho::nets::{gradcheck, GradcheckOptions};
use vmlitho::raster::{binarize, load_image, save_binary, save_image, Raster};
use vmlitho::train::{
    correct_and_verify, evaluate, evaluate_correction, train_lithonet, train_opcnet, LithoModel, ModelCheckpoint,
    OpcModel,
};

pub use ablate::{AblationRow, LITHO_SETTINGS, OPC_SETTINGS};
pub use config::RunConfig;
use config::{ablate as apply_ablation, Resolved};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

pub const LITHO_CKPT: &str = "lithonet.ckpt";
pub const OPC_CKPT: &str = "opcnet.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const IO_AUDIT: &str = "io_audit.txt";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verify(String),
    Core(vmlitho::Error),
}

impl From<vmlitho::Error> for CliError {
    fn from(e: vmlitho::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verify(_) => EXIT_VERIFY,
            CliError::Core(vmlitho::Error::Divergence { .. }) => EXIT_DIVERGED,
            CliError::Core(vmlitho::Error::FrozenViolation { .. }) => EXIT_VERIFY,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Verify(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vmlitho",
    version,
    about = "Deformation-field lithography model and mask corrector"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate layouts, simulate ground truth and write a manifest.
    Dataset(DatasetArgs),
    /// Train the deformation model.
    TrainLitho(TrainLithoArgs),
    /// Train the mask corrector through a frozen deformation model.
    TrainOpc(TrainOpcArgs),
    /// Predict the deformation map and fabricated shape of a layout.
    Predict(PredictArgs),
    /// Correct a layout and verify both prints through the deformation model.
    Correct(CorrectArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train the loss-setting grid and tabulate validation metrics.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients on small instances.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `data_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of layouts.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for both dataset and training streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning rate of every network.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_train_layouts: Option<usize>,
    #[arg(long)]
    pub max_val_layouts: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// Random flips and rotations of training samples.
    #[arg(long)]
    pub augment: bool,
    /// Loss terms to switch off, e.g. `var,smooth`.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainLithoArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct TrainOpcArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trained deformation model checkpoint.
    #[arg(long)]
    pub litho: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub litho: PathBuf,
    #[arg(long)]
    pub layout: PathBuf,
    /// Fabrication parameter; repeat or separate with commas to sweep.
    #[arg(long, required = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub param: Vec<f64>,
    /// Output path prefix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[arg(long)]
    pub opc: PathBuf,
    #[arg(long)]
    pub litho: PathBuf,
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub param: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score; a corrector also needs `--litho`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub litho: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
    /// Score even if the dataset differs from the one trained on.
    #[arg(long)]
    pub allow_manifest_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Small-trainset regime: 16 training layouts with augmentation.
    #[arg(long)]
    pub small: bool,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test fixture: perturb the analytic gradient of the named array.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?} (train, val or test)")),
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Dataset(a) => cmd_dataset(a),
        Command::TrainLitho(a) => cmd_train_litho(a),
        Command::TrainOpc(a) => cmd_train_opc(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Correct(a) => cmd_correct(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => ablate::cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

fn required(p: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    p.ok_or_else(|| CliError::Usage(format!("{what} is required (flag or config)")))
}

fn cmd_dataset(a: DatasetArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let mut overrides = Vec::new();
    if let Some(out) = a.out {
        overrides.push(format!("data_dir = {}", out.display()));
        cfg.data_dir = Some(out);
    }
    if let Some(n) = a.count {
        overrides.push(format!("layout_spec.count = {n}"));
        cfg.layout_spec.count = n;
    }
    if let Some(s) = a.seed {
        overrides.push(format!("seed = {s}"));
        cfg.seed = s;
    }
    let dir = required(cfg.data_dir.clone(), "--out")?;
    let grid = cfg.param_grid()?;
    cfg.layout_spec.validate()?;
    cfg.oracle.validate()?;
    create_dir(&dir)?;
    let manifest = build_dataset(&cfg.layout_spec, &cfg.oracle, &grid, &dir, cfg.seed)?;
    let hash = manifest_hash(&dir)?;
    Resolved {
        command: "dataset",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        overrides: &overrides,
        manifest_hash: Some(hash.clone()),
    }
    .write(&dir)?;

    println!(
        "manifest {} ({hash})",
        dir.join(vmlitho::layoutgen::MANIFEST_FILE).display()
    );
    for (split, n) in manifest.split_counts() {
        println!("{:<6} {n} layouts", format!("{split:?}").to_lowercase());
    }
    let mut per_param: BTreeMap<usize, usize> = BTreeMap::new();
    for e in &manifest.entries {
        *per_param.entry(e.param_index).or_default() += 1;
    }
    for (k, n) in per_param {
        println!("param {:+.2}: {n} samples", manifest.params[k].primary());
    }
    Ok(())
}

/// Applies training flags to `cfg`, recording each override.
fn apply_flags(cfg: &mut RunConfig, f: &TrainFlags, overrides: &mut Vec<String>) -> Result<(), CliError> {
    let t = &mut cfg.train;
    if let Some(v) = f.epochs {
        t.epochs = v;
        overrides.push(format!("train.epochs = {v}"));
    }
    if let Some(v) = f.batch_size {
        t.batch_size = v;
        overrides.push(format!("train.batch_size = {v}"));
    }
    if let Some(v) = f.seed {
        t.seed = v;
        cfg.seed = v;
        overrides.push(format!("seed = train.seed = {v}"));
    }
    let t = &mut cfg.train;
    if let Some(v) = f.lr {
        t.lr_g = v;
        t.lr_d = v;
        t.lr_opc = v;
        overrides.push(format!("train.lr_* = {v}"));
    }
    if let Some(v) = f.max_train_layouts {
        t.max_train_layouts = Some(v);
        overrides.push(format!("train.max_train_layouts = {v}"));
    }
    if let Some(v) = f.max_val_layouts {
        t.max_val_layouts = Some(v);
        overrides.push(format!("train.max_val_layouts = {v}"));
    }
    if let Some(v) = f.eval_interval {
        t.eval_interval = v;
        overrides.push(format!("train.eval_interval = {v}"));
    }
    if f.augment {
        t.augment = true;
        overrides.push("train.augment = true".into());
    }
    if !f.ablate.is_empty() {
        apply_ablation(t, &f.ablate)?;
        overrides.push(format!("ablate = {}", f.ablate.join(",")));
    }
    t.validate().map_err(|e| CliError::Usage(e.to_string()))
}

fn load_manifest(dir: &Path) -> Result<DatasetManifest, CliError> {
    Ok(DatasetManifest::load(dir)?)
}

fn cmd_train_litho(a: TrainLithoArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.flags.config.as_deref())?;
    let mut overrides = Vec::new();
    apply_flags(&mut cfg, &a.flags, &mut overrides)?;
    let data = required(a.data.or(cfg.data_dir.clone()), "--data")?;
    let out = required(a.out.or(cfg.out_dir.clone()), "--out")?;
    cfg.data_dir = Some(data.clone());
    cfg.out_dir = Some(out.clone());
    let manifest = load_manifest(&data)?;
    create_dir(&out)?;
    Resolved {
        command: "train-litho",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        overrides: &overrides,
        manifest_hash: Some(manifest_hash(&data)?),
    }
    .write(&out)?;
    let run = train_lithonet(&manifest, &cfg.train)?;
    run.log.write_csv(out.join(TRAIN_LOG))?;
    run.checkpoint.save(out.join(LITHO_CKPT))?;
    println!(
        "saved {} (epoch {}, val IOU {})",
        out.join(LITHO_CKPT).display(),
        run.checkpoint.epoch,
        run.checkpoint.val_iou.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn cmd_train_opc(a: TrainOpcArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.flags.config.as_deref())?;
    let mut overrides = Vec::new();
    apply_flags(&mut cfg, &a.flags, &mut overrides)?;
    let data = required(a.data.or(cfg.data_dir.clone()), "--data")?;
    let out = required(a.out.or(cfg.out_dir.clone()), "--out")?;
    cfg.data_dir = Some(data.clone());
    cfg.out_dir = Some(out.clone());
    let manifest = load_manifest(&data)?;
    let litho = ModelCheckpoint::load(&a.litho)?;
    create_dir(&out)?;
    overrides.push(format!("litho = {}", a.litho.display()));
    Resolved {
        command: "train-opc",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        overrides: &overrides,
        manifest_hash: Some(manifest_hash(&data)?),
    }
    .write(&out)?;
    let run = train_opcnet(&manifest, &litho, &cfg.train)?;
    run.log.write_csv(out.join(TRAIN_LOG))?;
    run.checkpoint.save(out.join(OPC_CKPT))?;
    let audit: String = run.opened.iter().map(|p| format!("{}\n", p.display())).collect();
    let audit_path = out.join(IO_AUDIT);
    std::fs::write(&audit_path, audit).map_err(|e| CliError::Usage(format!("{}: {e}", audit_path.display())))?;
    println!(
        "saved {} (epoch {}, val IOU {}); deformation model hash {} unchanged",
        out.join(OPC_CKPT).display(),
        run.checkpoint.epoch,
        run.checkpoint.val_iou.map_or("n/a".into(), |v| format!("{v:.4}")),
        run.litho_hash_after
    );
    Ok(())
}

fn load_layout(path: &Path) -> Result<Raster, CliError> {
    Ok(load_image(path)?)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn save_rgb(img: &image::RgbImage, path: &Path) -> Result<(), CliError> {
    img.save(path).map_err(|e| {
        CliError::Core(vmlitho::Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn prepare_prefix(prefix: &Path) -> Result<(), CliError> {
    match prefix.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn param(y: f64) -> Result<FabParam, CliError> {
    FabParam::scalar(y).map_err(|e| CliError::Usage(format!("--param: {e}")))
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let ckpt = ModelCheckpoint::load(&a.litho)?;
    let model = LithoModel::from_checkpoint(&ckpt)?;
    let layout = load_layout(&a.layout)?;
    let params = a.param.iter().map(|&y| param(y)).collect::<Result<Vec<_>, _>>()?;
    prepare_prefix(&a.out)?;
    let single = params.len() == 1;
    let mut strip = Vec::new();
    for p in &params {
        let (map, j) = model.predict(&layout, p)?;
        let prefix = if single {
            a.out.clone()
        } else {
            with_suffix(&a.out, &format!("_y{:+.2}", p.primary()))
        };
        let img = vmlitho::diffwarp::render_deformation(&map, &Default::default());
        save_rgb(&img, &with_suffix(&prefix, "_map.png"))?;
        save_map(&map, with_suffix(&prefix, "_map.bin"))?;
        save_image(&j, with_suffix(&prefix, "_pred.png"))?;
        save_binary(&binarize(&j, 0.5), with_suffix(&prefix, "_pred_bin.png"))?;
        save_rgb(
            &figures::triptych(&layout, &map, &j),
            &with_suffix(&prefix, "_triptych.png"),
        )?;
        let seen = ckpt
            .param_grid
            .iter()
            .any(|g| g.len() == 1 && (g[0] - p.primary()).abs() < 1e-9);
        println!(
            "param {:+.2}{}: foreground area {}",
            p.primary(),
            if seen { "" } else { " (unseen)" },
            binarize(&j, 0.5).area()
        );
        strip.push((j, seen));
    }
    if !single {
        save_rgb(
            &figures::sweep_strip(&layout, &strip),
            &with_suffix(&a.out, "_sweep.png"),
        )?;
    }
    Ok(())
}

fn cmd_correct(a: CorrectArgs) -> Result<(), CliError> {
    let opc = OpcModel::from_checkpoint(&ModelCheckpoint::load(&a.opc)?)?;
    let litho = LithoModel::from_checkpoint(&ModelCheckpoint::load(&a.litho)?)?;
    let layout = load_layout(&a.layout)?;
    let y = param(a.param)?;
    prepare_prefix(&a.out)?;
    let c = correct_and_verify(&opc, &litho, &layout, &y)?;
    save_image(&c.mask, with_suffix(&a.out, "_mask.png"))?;
    save_binary(&binarize(&c.mask, 0.5), with_suffix(&a.out, "_mask_bin.png"))?;
    save_image(&c.corrected, with_suffix(&a.out, "_corrected.png"))?;
    save_binary(&binarize(&c.corrected, 0.5), with_suffix(&a.out, "_corrected_bin.png"))?;
    save_image(&c.uncorrected, with_suffix(&a.out, "_uncorrected.png"))?;
    save_binary(
        &binarize(&c.uncorrected, 0.5),
        with_suffix(&a.out, "_uncorrected_bin.png"),
    )?;
    let path = with_suffix(&a.out, "_metrics.json");
    let text = serde_json::to_string_pretty(&c.metrics).map_err(vmlitho::Error::from)?;
    std::fs::write(&path, &text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    println!("{text}");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = ModelCheckpoint::load(&a.ckpt)?;
    let manifest = load_manifest(&a.data)?;
    let report = match ckpt.role {
        vmlitho::train::Role::Lithonet => evaluate(&ckpt, &manifest, a.split, a.allow_manifest_mismatch)?,
        vmlitho::train::Role::Opcnet => {
            let litho = a
                .litho
                .as_ref()
                .ok_or_else(|| CliError::Usage("scoring a corrector needs --litho".into()))?;
            let litho = ModelCheckpoint::load(litho)?;
            evaluate_correction(&ckpt, &litho, &manifest, a.split, a.allow_manifest_mismatch)?
        }
    };
    create_dir(&a.out)?;
    report.write_csv(a.out.join("metrics.csv"))?;
    report.write_json(a.out.join("metrics.json"))?;
    println!(
        "{} samples: IOU {:.4} SSIM {:.4} error {:.4}",
        report.rows.len(),
        report.mean_iou,
        report.mean_ssim,
        report.mean_pixel_error
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let mut opts = GradcheckOptions {
        corrupt: a.corrupt,
        ..Default::default()
    };
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let report = gradcheck(&opts);
    println!("{report}");
    if let Some(name) = &opts.corrupt {
        if !report.arrays.iter().any(|r| r.name == *name) {
            return Err(CliError::Usage(format!("--corrupt: no array named {name}")));
        }
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<String> = report
            .failures()
            .map(|r| format!("{}:{}", r.objective, r.name))
            .collect();
        Err(CliError::Verify(format!(
            "gradient check failed for {}",
            names.join(", ")
        )))
    }
}
