mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, Parser, Subcommand};

use riverbench::bench_harness::{
    evaluate_run, load_vae, report, run_training, HarnessError, RunConfig, RunManifest,
};
use riverbench::river_world::{encode_ppm, generate_world, render_preview, ChannelConfig, Level, Palette};
use riverbench::safe_algos::Algorithm;
use riverbench::vision_codec::{
    encode_dataset, latent_sweep, reconstruction_loss, relative_entropy, train_vae, water_agreement, CodecError,
    FrameDataset,
};

use config::ConfigError;

/// Exit-code classes: 2 for missing or unwritable resources, 3 for invalid configuration.
enum Failure {
    Resource(anyhow::Error),
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Resource(_) => 2,
            Failure::Config(_) => 3,
            Failure::Other(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Resource(e) | Failure::Config(e) | Failure::Other(e) => e,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Infeasible { .. } => Failure::Config(e.into()),
            HarnessError::Missing(_) | HarnessError::Io(_) => Failure::Resource(e.into()),
            HarnessError::Codec(CodecError::Config(_)) => Failure::Config(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn resource<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Resource(e.into())
}

#[derive(Parser)]
#[command(name = "riverbench", version, about = "Vision-driven safe RL river-following benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Shared {
    /// `key = value` configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    level: Option<Level>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long, value_parser = parse_channels)]
    channels: Option<ChannelConfig>,
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<usize>,
}

fn parse_resolution(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(r) if [32, 64, 128].contains(&r) => Ok(r),
        _ => Err(format!("resolution must be 32, 64 or 128, got `{s}`")),
    }
}

fn parse_channels(s: &str) -> Result<ChannelConfig, String> {
    ChannelConfig::parse(s).ok_or_else(|| format!("unknown channel config `{s}` (rgb|mask|rgbmask)"))
}

#[derive(Subcommand)]
enum Command {
    /// Top-down preview image and world description.
    Gen {
        #[arg(long, default_value = "medium")]
        level: Level,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Preview width in pixels.
        #[arg(long, default_value_t = 512)]
        width: usize,
    },
    /// Frame/mask pairs from random safe poses.
    Collect {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains one encoder on a collected dataset, or a latent-size sweep.
    TrainVae {
        #[command(flatten)]
        shared: Shared,
        /// Dataset directory written by `collect`.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated latent sizes; trains one encoder per size.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise relative entropy between encodings of the three channel configs.
    ReAnalyze {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-seed training run.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        algo: Option<Algorithm>,
        /// Single seed (or the first seed when combined with --seeds).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Reuse a trained encoder instead of training one.
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a run's final checkpoints.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Level to evaluate on; all levels when omitted.
        #[arg(long)]
        level: Option<Level>,
        /// Episodes per seed.
        #[arg(long)]
        episodes: Option<usize>,
        /// Evaluate only the first N seeds of the run.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot data, a gnuplot script and a summary table from runs and evaluations.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(shared: &Shared) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &shared.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(resource)?;
        config::apply_text(&mut cfg, &text)?;
    }
    if let Some(l) = shared.level {
        cfg.level = l;
    }
    if let Some(d) = shared.latent_dim {
        cfg.vae.latent_dim = d;
    }
    if let Some(c) = shared.channels {
        cfg.vae.channels = c;
    }
    if let Some(r) = shared.resolution {
        cfg.env.resolution = r;
    }
    Ok(cfg)
}

fn create_out(out: &Path) -> CmdResult {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
        .map_err(resource)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(resource)
}

fn load_dataset(dir: &Path) -> Result<FrameDataset, Failure> {
    if !dir.join("index.json").exists() {
        return Err(resource(anyhow!("no dataset index at {}", dir.display())));
    }
    FrameDataset::load(dir).map_err(|e| resource(anyhow!("cannot load dataset {}: {e}", dir.display())))
}

fn cmd_gen(level: Level, seed: u64, out: &Path, width: usize) -> CmdResult {
    let world = generate_world(level, seed);
    create_out(out)?;
    let (w, h, rgb) = render_preview(&world, width);
    write(&out.join(format!("world_{}_{seed}.ppm", level.name())), encode_ppm(w, h, &rgb))?;
    write(&out.join(format!("world_{}_{seed}.json", level.name())), world.spec.to_json())?;
    println!("{} world seed {seed}: {} m of river", level.name(), world.spline.arc_length().round());
    Ok(())
}

fn cmd_collect(shared: &Shared, seed: u64, count: usize, out: &Path) -> CmdResult {
    let cfg = resolve_config(shared)?;
    if count == 0 {
        return Err(Failure::Config(anyhow!("--count must be at least 1")));
    }
    let world = generate_world(cfg.level, cfg.world_seed);
    create_out(out)?;
    let data = FrameDataset::collect(&world, &cfg.env, count, cfg.env.resolution, seed);
    let source = serde_json::json!({
        "level": cfg.level.name(),
        "world_seed": cfg.world_seed,
        "seed": seed,
        "env": cfg.env,
    });
    data.save(out, source).map_err(resource)?;
    println!("collected {count} frames at {0}x{0} into {1}", cfg.env.resolution, out.display());
    Ok(())
}

fn cmd_train_vae(shared: &Shared, data_dir: &Path, sweep: &[usize], out: &Path) -> CmdResult {
    let cfg = resolve_config(shared)?;
    let data = load_dataset(data_dir)?;
    create_out(out)?;
    if !sweep.is_empty() {
        let rows = latent_sweep(&data, &data, sweep, &cfg.vae)?;
        let mut csv = String::from("latent_dim,reconstruction_loss,final_train_loss\n");
        for r in &rows {
            let _ = writeln!(csv, "{},{},{}", r.latent_dim, r.reconstruction_loss, r.final_train_loss);
            println!("D={:<5} reconstruction loss {:.6}", r.latent_dim, r.reconstruction_loss);
        }
        return write(&out.join("sweep.csv"), csv);
    }
    let (vae, curve) = train_vae(&data, &cfg.vae)?;
    let loss = reconstruction_loss(&vae, &data)?;
    let agreement = water_agreement(&vae, &data, &Palette::default())?;
    vae.save().save(&out.join("vae.ndm")).map_err(resource)?;
    let summary = serde_json::json!({
        "config": cfg.vae,
        "frames": data.len(),
        "epoch_loss": curve,
        "reconstruction_loss": loss,
        "water_agreement": agreement,
    });
    write(&out.join("vae_summary.json"), serde_json::to_string_pretty(&summary).unwrap())?;
    println!("reconstruction loss {loss:.6}, water agreement {agreement:.4}");
    Ok(())
}

fn cmd_re_analyze(shared: &Shared, data_dir: &Path, out: &Path) -> CmdResult {
    let cfg = resolve_config(shared)?;
    let data = load_dataset(data_dir)?;
    create_out(out)?;
    let mut encodings = Vec::new();
    for ch in ChannelConfig::ALL {
        let vcfg = riverbench::vision_codec::VaeConfig {
            channels: ch,
            ..cfg.vae.clone()
        };
        let (vae, _) = train_vae(&data, &vcfg)?;
        vae.save().save(&out.join(format!("vae_{}.ndm", ch.name()))).map_err(resource)?;
        let enc = encode_dataset(&vae, &data)?;
        let f = fs::File::create(out.join(format!("encodings_{}.csv", ch.name()))).map_err(resource)?;
        enc.write_csv(f).map_err(resource)?;
        encodings.push((ch, enc));
    }
    let mut table = format!("{:<10}", "P \\ Q");
    for (q, _) in &encodings {
        let _ = write!(table, " {:>9}", q.name());
    }
    table.push('\n');
    let mut json = serde_json::Map::new();
    for (p, ep) in &encodings {
        let _ = write!(table, "{:<10}", p.name());
        let mut row = serde_json::Map::new();
        for (q, eq) in &encodings {
            if p == q {
                let _ = write!(table, " {:>9}", "-");
                continue;
            }
            let re = relative_entropy(ep, eq)?;
            let _ = write!(table, " {:>9.4}", re.mean);
            row.insert(q.name().to_string(), serde_json::to_value(&re).unwrap());
        }
        table.push('\n');
        json.insert(p.name().to_string(), row.into());
    }
    write(&out.join("re_table.txt"), &table)?;
    write(&out.join("re.json"), serde_json::to_string_pretty(&json).unwrap())?;
    print!("{table}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    shared: &Shared,
    algo: Option<Algorithm>,
    seed: Option<u64>,
    seeds: Option<usize>,
    steps: Option<usize>,
    vae: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let mut cfg = resolve_config(shared)?;
    if let Some(a) = algo {
        cfg.algorithm = a;
    }
    match (seed, seeds) {
        (Some(s), Some(n)) => cfg.seeds = (s..s + n as u64).collect(),
        (Some(s), None) => cfg.seeds = vec![s],
        (None, Some(n)) => cfg.seeds = (0..n as u64).collect(),
        (None, None) => {}
    }
    if let Some(s) = steps {
        cfg.total_steps = s;
    }
    cfg.out_dir = out.to_path_buf();
    cfg.validate()?;
    let encoder = match vae {
        Some(p) => Some(Arc::new(load_vae(p)?)),
        None => None,
    };
    let manifest = run_training(&cfg, encoder)?;
    for (seed, path) in &manifest.metrics {
        println!("seed {seed}: {}", path.display());
    }
    Ok(())
}

fn cmd_eval(run: &Path, level: Option<Level>, episodes: Option<usize>, seeds: Option<usize>, out: &Path) -> CmdResult {
    let manifest = RunManifest::load(run)?;
    let episodes = episodes.unwrap_or(manifest.config.eval_episodes);
    let levels = level.map_or_else(|| Level::ALL.to_vec(), |l| vec![l]);
    let mut reports = Vec::new();
    for lv in levels {
        reports.push(evaluate_run(run, lv, episodes, seeds)?);
    }
    create_out(out)?;
    for r in &reports {
        write(&out.join(format!("eval_{}.json", r.level)), r.to_json()?)?;
    }
    print!("{}", riverbench::bench_harness::summary_table(&reports));
    Ok(())
}

fn cmd_report(input: &Path, out: &Path) -> CmdResult {
    let res = report(input, out)?;
    for f in &res.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Gen { level, seed, out, width } => cmd_gen(level, seed, &out, width),
        Command::Collect { shared, seed, count, out } => cmd_collect(&shared, seed, count, &out),
        Command::TrainVae { shared, data, sweep, out } => cmd_train_vae(&shared, &data, &sweep, &out),
        Command::ReAnalyze { shared, data, out } => cmd_re_analyze(&shared, &data, &out),
        Command::Train {
            shared,
            algo,
            seed,
            seeds,
            steps,
            vae,
            out,
        } => cmd_train(&shared, algo, seed, seeds, steps, vae.as_deref(), &out),
        Command::Eval {
            run,
            level,
            episodes,
            seeds,
            out,
        } => cmd_eval(&run, level, episodes, seeds, &out),
        Command::Report { input, out } => cmd_report(&input, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
