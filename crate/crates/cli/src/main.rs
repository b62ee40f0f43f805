use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use occdet::eval::{dataset_stats, evaluate};
use occdet::io::{self, Config, Dataset};
use occdet::occlusion_map::generate_truth_map;
use occdet::region_select::{select_regions, SelectParams};
use occdet::tpp::{augment_crops, run_coarse, run_tpp, synth_corpus, OracleDetector, OracleDetectorParams, SynthParams};
use occdet::{Detection, TruthStyle};

#[derive(Parser)]
#[command(name = "occdet", version, about = "Occlusion-guided detection toolkit")]
struct Cli {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for scene generation and region clustering.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic crowded scenes as a dataset file.
    Synth(SynthArgs),
    /// Write an occlusion truth map (OMAP1) per image.
    GenMaps(GenMapsArgs),
    /// Select occlusion sub-regions on a map.
    SelectRegions(SelectArgs),
    /// Run coarse + fine detection with the oracle detector.
    RunTpp(RunTppArgs),
    /// Crop occlusion regions out of a dataset as extra training images.
    Augment(AugmentArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
    /// Objects and overlapping pairs per image.
    Stats(StatsArgs),
    /// Self-check of the forward math and losses.
    Netcheck,
    /// Configuration helpers.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator parameters (TOML); defaults to the [synth] config section.
    #[arg(long)]
    gen: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenMapsArgs {
    #[arg(long, visible_alias = "annotations")]
    gt: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// occlusion-only or highlighted.
    #[arg(long)]
    style: Option<TruthStyle>,
    #[arg(long)]
    stride: Option<u32>,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, visible_alias = "params")]
    select_params: Option<PathBuf>,
    /// Source image size when it differs from the map's image size.
    #[arg(long, requires = "img_h")]
    img_w: Option<u32>,
    #[arg(long, requires = "img_w")]
    img_h: Option<u32>,
}

#[derive(Args)]
struct RunTppArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    oracle_params: Option<PathBuf>,
    #[arg(long)]
    select_params: Option<PathBuf>,
    #[arg(long)]
    n_sub: Option<usize>,
    /// Skip the fine phase.
    #[arg(long)]
    coarse_only: bool,
    /// Multiplicative noise on the oracle's occlusion map.
    #[arg(long)]
    map_noise: Option<f64>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Directory of `<image id>.omap` files.
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    iou: Option<f64>,
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print the default configuration as TOML.
    PrintDefaults,
    /// Load and validate a configuration file.
    Check { path: PathBuf },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_dataset(path: &Path, cfg: &Config) -> Result<Dataset> {
    Ok(io::load_dataset(path, &cfg.visdrone)?)
}

fn synth(args: &SynthArgs, cfg: &Config) -> Result<()> {
    let params: SynthParams = match &args.gen {
        Some(p) => io::read_toml(p)?,
        None => cfg.synth,
    };
    let scenes = synth_corpus(&params, args.count, cfg.seed)?;
    let categories = (0..params.num_categories).map(|c| format!("class{c}")).collect();
    io::save_dataset(&args.out, &Dataset::from_scenes(&scenes, categories))?;
    eprintln!("wrote {} scenes to {}", scenes.len(), args.out.display());
    Ok(())
}

fn gen_maps(args: &GenMapsArgs, cfg: &Config) -> Result<()> {
    let ds = load_dataset(&args.gt, cfg)?;
    let mut params = cfg.map;
    if let Some(s) = args.style {
        params.style = s;
    }
    if let Some(s) = args.stride {
        params.stride = s;
    }
    params.validate()?;
    ds.images.par_iter().try_for_each(|img| -> Result<()> {
        let map = generate_truth_map(&img.annotations, img.width, img.height, &params)?;
        io::save_omap(&args.out_dir.join(format!("{}.omap", img.id)), &map)?;
        Ok(())
    })?;
    eprintln!("wrote {} maps to {}", ds.images.len(), args.out_dir.display());
    Ok(())
}

fn select_params(path: &Option<PathBuf>, cfg: &Config) -> Result<SelectParams> {
    let p: SelectParams = match path {
        Some(p) => io::read_toml(p)?,
        None => cfg.select,
    };
    p.validate()?;
    Ok(p)
}

fn select(args: &SelectArgs, cfg: &Config) -> Result<()> {
    let map = io::load_omap(&args.map)?;
    let params = select_params(&args.select_params, cfg)?;
    let (w, h) = match (args.img_w, args.img_h) {
        (Some(w), Some(h)) => (w, h),
        _ => (map.img_w(), map.img_h()),
    };
    let regions = select_regions(&map, w as f64, h as f64, &params, cfg.seed);
    io::save_regions(&args.out, &regions)?;
    eprintln!("selected {} regions", regions.len());
    Ok(())
}

fn run_tpp_cmd(args: &RunTppArgs, cfg: &Config) -> Result<()> {
    let ds = load_dataset(&args.scenes, cfg)?;
    let mut oracle: OracleDetectorParams = match &args.oracle_params {
        Some(p) => io::read_toml(p)?,
        None => cfg.oracle,
    };
    if let Some(n) = args.map_noise {
        oracle.map_noise = n;
    }
    let detector = OracleDetector::new(oracle)?;
    let mut params = cfg.tpp_params();
    params.select = select_params(&args.select_params, cfg)?;
    if let Some(n) = args.n_sub {
        params.n_sub = n;
    }
    let scenes = ds.scenes()?;
    let dets: Vec<Vec<Detection>> = scenes
        .par_iter()
        .map(|s| {
            if args.coarse_only {
                run_coarse(s, &detector, &params)
            } else {
                run_tpp(s, &detector, &params, cfg.seed)
            }
        })
        .collect::<occdet::Result<_>>()?;
    io::save_detections(&args.out, &dets)?;
    eprintln!("wrote detections for {} scenes to {}", dets.len(), args.out.display());
    Ok(())
}

fn augment(args: &AugmentArgs, cfg: &Config) -> Result<()> {
    let ds = load_dataset(&args.gt, cfg)?;
    let crops: Vec<Vec<_>> = ds
        .images
        .par_iter()
        .map(|img| -> Result<Vec<_>> {
            let path = args.maps.join(format!("{}.omap", img.id));
            let map = io::load_omap(&path)?;
            Ok(augment_crops(&img.scene()?, &map, &cfg.select, cfg.tpp.fine_size, cfg.tpp.augment_min_visible, cfg.seed)?)
        })
        .collect::<Result<_>>()?;
    let scenes: Vec<_> = crops.into_iter().flatten().collect();
    io::save_dataset(&args.out, &Dataset::from_scenes(&scenes, ds.categories.clone()))?;
    eprintln!("wrote {} crops to {}", scenes.len(), args.out.display());
    Ok(())
}

fn eval_cmd(args: &EvalArgs, cfg: &Config) -> Result<()> {
    let ds = load_dataset(&args.gt, cfg)?;
    let dets = io::load_detections(&args.dets)?;
    if dets.len() != ds.images.len() {
        return Err(occdet::Error::InvalidArgument(format!(
            "{} has {} detection lists but {} has {} images",
            args.dets.display(),
            dets.len(),
            args.gt.display(),
            ds.images.len()
        ))
        .into());
    }
    let report = evaluate(&dets, &ds.annotations(), &cfg.eval)?;
    io::save_report(&args.report, &report)?;
    if let Some(csv) = &args.csv {
        std::fs::write(csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn stats(args: &StatsArgs, cfg: &Config) -> Result<()> {
    let ds = load_dataset(&args.gt, cfg)?;
    let thr = args.iou.unwrap_or(cfg.eval.stats_iou);
    if !(0.0..1.0).contains(&thr) {
        return Err(occdet::Error::InvalidArgument(format!("--iou must lie in [0, 1), got {thr}")).into());
    }
    println!("{}", serde_json::to_string_pretty(&dataset_stats(&ds.annotations(), thr))?);
    Ok(())
}

fn netcheck(cfg: &Config) -> Result<()> {
    let outcomes = occdet::netmath::run_netcheck(cfg.seed);
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        bail!("{failed} netcheck(s) failed");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Config(ConfigCommand::PrintDefaults) = cli.command {
        print!("{}", Config::default().to_toml());
        return Ok(());
    }
    if let Command::Config(ConfigCommand::Check { path }) = &cli.command {
        Config::load(path)?;
        println!("{}: ok", path.display());
        return Ok(());
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::GenMaps(a) => gen_maps(a, &cfg),
        Command::SelectRegions(a) => select(a, &cfg),
        Command::RunTpp(a) => run_tpp_cmd(a, &cfg),
        Command::Augment(a) => augment(a, &cfg),
        Command::Eval(a) => eval_cmd(a, &cfg),
        Command::Stats(a) => stats(a, &cfg),
        Command::Netcheck => netcheck(&cfg),
        Command::Config(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.downcast_ref::<occdet::Error>().is_some_and(occdet::Error::is_validation);
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
