use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use redsr::degradation::{self, DegradationMode, DegradationSpec, GenOptions};
use redsr::image::Image;
use redsr::metrics;
use redsr::models::load_checkpoint;
use redsr::training::{self, TrainConfig, TrainData};
use redsr::{diagnostics, synthetic, Error, Result, Tensor};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "redsr", version, about = "Degradation representations for blind super-resolution")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate degraded LR/HR training pairs and a manifest.
    GenData(GenDataArgs),
    /// Train encoder, degrader and generator jointly.
    Train(TrainArgs),
    /// Per-degradation PSNR/SSIM table over a generated dataset.
    Eval(EvalArgs),
    /// Degrade one image: blur, decimate, add noise.
    Degrade(DegradeArgs),
    /// Blind super-resolution of one image.
    Sr(SrArgs),
    /// Export representations of a dataset and cluster statistics.
    Repr(ReprArgs),
    /// Gradient checks and loss identities.
    Selftest,
}

#[derive(Args, Debug, Serialize)]
struct GenDataArgs {
    /// Directory of PPM/PGM source images.
    #[arg(long, conflicts_with = "synthetic")]
    hr_dir: Option<PathBuf>,
    /// Use this many bundled synthetic textures as the source images.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = synthetic::DEFAULT_SIZE)]
    synthetic_size: usize,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value = "isotropic")]
    mode: DegradationMode,
    /// Comma-separated isotropic widths to draw from.
    #[arg(long, value_delimiter = ',')]
    sigma_set: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// LR patch side.
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON file with TrainConfig keys; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in --out.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iters_per_epoch: Option<usize>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    target_seed: Option<u64>,
    #[arg(long)]
    hr_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding manifest.json.
    #[arg(long)]
    dataset: PathBuf,
    /// Output CSV.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct DegradeArgs {
    /// PPM/PGM or RDT1 image.
    #[arg(long)]
    input: PathBuf,
    /// `.rdt` keeps the unclamped values; anything else is written as PPM/PGM.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    sigma1: f64,
    /// Defaults to sigma1.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Noise standard deviation on the 0-255 scale.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct SrArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ReprArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::Config(_) | Error::Parameter(_) => 3,
        Error::Format(_) => 4,
        _ => 1,
    }
}

fn show_config<T: Serialize>(name: &str, value: &T) {
    let json = serde_json::to_string_pretty(value).expect("config serializes");
    println!("{name} effective config:\n{json}");
}

fn read_image(path: &Path) -> Result<Image> {
    if path.extension().is_some_and(|e| e == "rdt") {
        Image::from_tensor(&Tensor::load(path)?)
    } else {
        Ok(Image::read_pnm(path)?.to_rgb())
    }
}

fn write_image(img: &Image, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "rdt") {
        img.to_tensor().save(path)
    } else {
        img.write_pnm(path)
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    show_config("gen-data", &a);
    let opts = GenOptions {
        count: a.count,
        mode: a.mode,
        sigma_set: a.sigma_set.clone(),
        seed: a.seed,
        scale: a.scale,
        lr_patch: a.patch,
    };
    let entries = match (&a.hr_dir, a.synthetic) {
        (Some(dir), _) => degradation::gen_dataset(dir, &opts, &a.out)?,
        (None, Some(n)) => {
            let images = synthetic::dataset(a.seed, n, a.synthetic_size, a.synthetic_size);
            degradation::gen_dataset_from_images(&images, &opts, &a.out)?
        }
        (None, None) => return Err(Error::Config("pass --hr-dir or --synthetic".into())),
    };
    println!("wrote {} pairs to {}", entries.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { cfg.$f = v; })* };
    }
    set!(epochs, iters_per_epoch, init_seed, data_seed, noise_seed, target_seed);
    if a.hr_dir.is_some() {
        cfg.hr_dir = a.hr_dir.clone();
    }
    cfg.validate()?;
    show_config("train", &cfg);
    let data = TrainData::from_config(&cfg)?;
    let summary = training::train(&cfg, &data, &a.out, a.resume)?;
    if let Some(last) = summary.records.last() {
        println!("{}\n{}", training::LOG_HEADER, last.csv_row());
    }
    println!(
        "{} steps run; checkpoint {}, log {}",
        summary.records.len(),
        summary.checkpoint.display(),
        summary.log.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    show_config("eval", &a);
    let ck = load_checkpoint(&a.checkpoint, None)?;
    let (dir, entries) = degradation::read_manifest(&a.dataset)?;
    let samples = metrics::evaluate_manifest(&ck.model, &dir, &entries)?;
    let rows = metrics::group_by_spec(&samples);
    let csv = metrics::spec_table_csv(&rows);
    std::fs::write(&a.report, &csv).map_err(|e| Error::io(&a.report, e))?;
    print!("{csv}");
    Ok(())
}

fn degrade(a: DegradeArgs) -> Result<()> {
    show_config("degrade", &a);
    let spec = DegradationSpec {
        sigma1: a.sigma1,
        sigma2: a.sigma2.unwrap_or(a.sigma1),
        theta: a.theta,
        noise_level: a.noise,
        scale: a.scale,
    };
    spec.validate()?;
    let img = read_image(&a.input)?;
    let lr = degradation::degrade(&img, &spec, a.seed)?;
    write_image(&lr, &a.output)
}

fn sr(a: SrArgs) -> Result<()> {
    show_config("sr", &a);
    let ck = load_checkpoint(&a.checkpoint, None)?;
    let lr = read_image(&a.input)?;
    let out = ck.model.blind_super_resolve(std::slice::from_ref(&lr))?.remove(0);
    write_image(&out, &a.output)
}

fn repr(a: ReprArgs) -> Result<()> {
    show_config("repr", &a);
    let ck = load_checkpoint(&a.checkpoint, None)?;
    let (dir, entries) = degradation::read_manifest(&a.dataset)?;
    let mut reps = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for e in &entries {
        let lr = e.load_lr(&dir)?;
        reps.extend(ck.model.encode_images(std::slice::from_ref(&lr))?);
        labels.push(e.spec.key());
    }
    metrics::export_representations(&a.out, &reps, &labels)?;
    println!("exported {} representations to {}", reps.len(), a.out.display());
    match metrics::cluster_report(&reps, &labels) {
        Ok(report) => {
            let path = a.out.join("cluster_report.json");
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            println!("accuracy {:.4} silhouette {:.4}", report.accuracy, report.silhouette);
        }
        Err(e) => log::warn!("no cluster report: {e}"),
    }
    Ok(())
}

fn selftest() -> Result<bool> {
    show_config("selftest", &serde_json::json!({ "fd_step": diagnostics::FD_STEP }));
    let groups = [
        diagnostics::op_gradient_checks(1)?,
        diagnostics::loss_gradient_checks(1)?,
        diagnostics::model_gradient_checks(1)?,
        diagnostics::loss_identities()?,
    ];
    let mut ok = true;
    println!("{:<44} {:>12} {:>10}  result", "check", "error", "tolerance");
    for c in groups.iter().flatten() {
        ok &= c.passed();
        let verdict = if c.passed() { "pass" } else { "FAIL" };
        println!("{:<44} {:>12.3e} {:>10.0e}  {verdict}", c.name, c.error, c.tolerance);
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(a) => gen_data(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Degrade(a) => degrade(a)?,
        Command::Sr(a) => sr(a)?,
        Command::Repr(a) => repr(a)?,
        Command::Selftest => return selftest(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("selftest failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
