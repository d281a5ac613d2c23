//! The `cir` command line: `gen`, `train`, `eval`, `analyze`, `reproduce`.
//!
//! Every command that writes files also writes `<output>.manifest`: `#`
//! metadata lines (tool version, input and output hashes) followed by the
//! resolved configuration. Wall-clock time goes to stderr only, so repeated
//! invocations produce identical files.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 IO error,
//! 4 numeric failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_run_config, RunConfig};
use crate::datagen::{gen_gaussian_mixture, split_classes, DataSplits, Dataset, GeneratorSpec};
use crate::error::{config_err, CirError, Result};
use crate::eval::{geometry_stats, EpisodeSpec};
use crate::losses::{study_case_loss, StudyCase};
use crate::nn::forward;
use crate::reproduce::{run_matrix, ReproduceSpec};
use crate::trainer::{evaluate_checkpoint, fmt_opt, logs_to_csv, run, Protocol};
use crate::EmbeddingBatch;

pub const TOOL_VERSION: &str = concat!("cir-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(name = "cir", version, about = "Class interference regularization lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Reproduce,
    Separable,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Episodic,
    Retrieval,
    Classification,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    Gen {
        #[arg(long, value_enum, default_value = "reproduce")]
        preset: Preset,
        /// Generator spec file (`key = value`); replaces the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        spread: Option<f64>,
        #[arg(long)]
        label_noise: Option<f64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train an encoder and write a checkpoint, a per-epoch CSV log and a manifest.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Log path; defaults to `<out>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Validate the config and dataset, print the resolved config, write nothing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Run config whose split settings match training; defaults otherwise.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "episodic")]
        protocol: ProtocolArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long, default_value_t = 5)]
        way: usize,
        #[arg(long, default_value_t = 1)]
        shot: usize,
        #[arg(long, default_value_t = 15)]
        queries: usize,
        #[arg(long, default_value_t = 600)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metrics CSV path (`metric,value,ci95`).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Embedding geometry per split and the regression-case identity on a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the no-regularization / interference / noise matrix and write reports.
    Reproduce {
        #[arg(short, long)]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Override the epoch budget of every run.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 600)]
        episodes: usize,
    },
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    let start = Instant::now();
    let name = match &command {
        Command::Gen { .. } => "gen",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Analyze { .. } => "analyze",
        Command::Reproduce { .. } => "reproduce",
    };
    match command {
        Command::Gen {
            preset,
            spec,
            seed,
            classes,
            per_class,
            dim,
            spread,
            label_noise,
            out,
        } => {
            let mut g = match spec {
                Some(p) => crate::config::parse_generator_spec(&read_text(&p)?)?,
                None => match preset {
                    Preset::Reproduce => GeneratorSpec::reproduce(0),
                    Preset::Separable => GeneratorSpec::separable(0),
                },
            };
            g.seed = seed.unwrap_or(g.seed);
            g.classes = classes.unwrap_or(g.classes);
            g.per_class = per_class.unwrap_or(g.per_class);
            g.dim = dim.unwrap_or(g.dim);
            g.spread = spread.unwrap_or(g.spread);
            g.label_noise = label_noise.unwrap_or(g.label_noise);
            cmd_gen(&g, &out)?;
        }
        Command::Train {
            config,
            data,
            out,
            log,
            dry_run,
        } => {
            let log = log.unwrap_or_else(|| suffixed(&out, ".log.csv"));
            cmd_train(&config, &data, &out, &log, dry_run)?;
        }
        Command::Eval {
            checkpoint,
            data,
            config,
            protocol,
            split,
            way,
            shot,
            queries,
            episodes,
            seed,
            out,
        } => {
            let spec = EpisodeSpec {
                way,
                shot,
                queries,
                episodes,
            };
            let protocol = match protocol {
                ProtocolArg::Episodic => Protocol::Episodic,
                ProtocolArg::Retrieval => Protocol::Retrieval,
                ProtocolArg::Classification => Protocol::Classification,
            };
            let args = EvalArgs {
                checkpoint: &checkpoint,
                data: &data,
                config: config.as_deref(),
                protocol,
                split,
                spec,
                seed,
            };
            let csv = cmd_eval(&args, out.as_deref())?;
            print!("{csv}");
        }
        Command::Analyze {
            checkpoint,
            data,
            config,
            lambda,
            seed,
        } => print!("{}", cmd_analyze(&checkpoint, &data, config.as_deref(), lambda, seed)?),
        Command::Reproduce {
            out,
            seeds,
            epochs,
            episodes,
        } => cmd_reproduce(&out, seeds, epochs, episodes)?,
    }
    eprintln!("{name} finished in {:.2?}", start.elapsed());
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(output: &Path) -> PathBuf {
    suffixed(output, ".manifest")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CirError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CirError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_sha(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CirError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(sha256_hex(&bytes))
}

/// Manifest text: metadata comments, then the resolved config body.
pub fn manifest(command: &str, inputs: &[(&str, &Path)], outputs: &[&Path], body: &str) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# tool = {TOOL_VERSION}");
    let _ = writeln!(out, "# command = {command}");
    for (role, p) in inputs {
        let _ = writeln!(out, "# input {role} = {} sha256={}", p.display(), file_sha(p)?);
    }
    for p in outputs {
        let _ = writeln!(out, "# output = {} sha256={}", p.display(), file_sha(p)?);
    }
    out.push_str(body);
    Ok(out)
}

pub fn cmd_gen(spec: &GeneratorSpec, out: &Path) -> Result<()> {
    let ds = gen_gaussian_mixture(spec)?;
    ds.save(out)?;
    let text = manifest("gen", &[], &[out], &spec.to_text())?;
    write_file(&manifest_path(out), text.as_bytes())?;
    println!("wrote {} ({} samples, {} classes)", out.display(), ds.len(), ds.class_count());
    Ok(())
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => parse_run_config(&read_text(p)?).map_err(|e| match e {
            CirError::Config(m) => CirError::Config(format!("{}: {m}", p.display())),
            other => other,
        }),
        None => Ok(RunConfig::default()),
    }
}

fn splits_for(ds: &Dataset, cfg: &RunConfig) -> Result<DataSplits> {
    split_classes(ds, cfg.split_fractions, cfg.split_seed)
}

pub fn cmd_train(config: &Path, data: &Path, out: &Path, log: &Path, dry_run: bool) -> Result<()> {
    let cfg = load_run_config(Some(config))?;
    let ds = Dataset::load(data)?;
    let splits = splits_for(&ds, &cfg)?;
    if dry_run {
        print!("{}", cfg.to_text());
        println!(
            "# ok: {} train / {} val / {} test classes",
            splits.train.class_count(),
            splits.val.class_count(),
            splits.test.class_count()
        );
        return Ok(());
    }
    let outcome = run(&splits.train, &splits.val, &cfg.train)?;
    let ckpt = Checkpoint {
        model: outcome.model,
        table: outcome.table,
    };
    ckpt.save(out)?;
    write_file(log, logs_to_csv(&outcome.logs).as_bytes())?;
    let text = manifest("train", &[("config", config), ("data", data)], &[out, log], &cfg.to_text())?;
    write_file(&manifest_path(out), text.as_bytes())?;
    if let Some(last) = outcome.logs.last() {
        println!(
            "epoch {} train_loss {:.4} train_acc {:.4} val_acc {:.4}",
            last.epoch, last.train_loss, last.train_acc, last.val_acc
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub protocol: Protocol,
    pub split: SplitName,
    pub spec: EpisodeSpec,
    pub seed: u64,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

fn pick(splits: &DataSplits, name: SplitName) -> &Dataset {
    match name {
        SplitName::Train => &splits.train,
        SplitName::Val => &splits.val,
        SplitName::Test => &splits.test,
    }
}

/// Returns the metrics CSV; also writes it and a manifest when `out` is set.
pub fn cmd_eval(args: &EvalArgs, out: Option<&Path>) -> Result<String> {
    if args.protocol == Protocol::Episodic && (args.spec.episodes == 0 || args.spec.way < 2) {
        return Err(config_err("episodic evaluation needs at least one episode and way >= 2"));
    }
    let cfg = load_run_config(args.config)?;
    let ckpt = Checkpoint::load(args.checkpoint)?;
    let ds = Dataset::load(args.data)?;
    let splits = splits_for(&ds, &cfg)?;
    let report = evaluate_checkpoint(&ckpt.model, &ckpt.table, pick(&splits, args.split), args.protocol, &args.spec, args.seed)?;
    let csv = report.to_csv();
    if let Some(out) = out {
        write_file(out, csv.as_bytes())?;
        let mut inputs = vec![("checkpoint", args.checkpoint), ("data", args.data)];
        if let Some(c) = args.config {
            inputs.push(("config", c));
        }
        let body = format!(
            "protocol = {}\nsplit = {}\nway = {}\nshot = {}\nqueries = {}\nepisodes = {}\nseed = {}\n{}",
            args.protocol.name(),
            args.split.name(),
            args.spec.way,
            args.spec.shot,
            args.spec.queries,
            args.spec.episodes,
            args.seed,
            cfg.to_text()
        );
        write_file(&manifest_path(out), manifest("eval", &inputs, &[out], &body)?.as_bytes())?;
    }
    Ok(csv)
}

/// Geometry CSV per split, then the regression-case identity evaluated on the
/// checkpoint's last layer (bias omitted) for a few samples.
pub fn cmd_analyze(checkpoint: &Path, data: &Path, config: Option<&Path>, lambda: f64, seed: u64) -> Result<String> {
    let cfg = load_run_config(config)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds = Dataset::load(data)?;
    let splits = splits_for(&ds, &cfg)?;
    let mut out = String::from("split,center_distance,inter_mean,intra_mean,inter_intra_ratio\n");
    for name in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let split = pick(&splits, name);
        let (z, _) = forward(&ckpt.model, &split.all_rows())?;
        let g = geometry_stats(&EmbeddingBatch::new(z, split.labels().to_vec())?)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            name.name(),
            g.center_distance,
            g.inter_mean,
            fmt_opt(g.intra_mean),
            fmt_opt(g.ratio)
        );
    }

    out.push_str("\nsample,lambda,plain,blended,regularized,abs_diff\n");
    let layers = ckpt.model.num_layers();
    let w = ckpt.model.weights[layers - 1].clone();
    let (_, cache) = forward(&ckpt.model, &splits.test.all_rows())?;
    let inputs = &cache.activations[layers - 1];
    let classes = ckpt.table.class_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..5.min(inputs.nrows()) {
        let i = rng.random_range(0..inputs.nrows());
        let own = rng.random_range(0..classes);
        let other = (own + 1 + rng.random_range(0..classes - 1)) % classes;
        let case = StudyCase {
            w: w.clone(),
            x: inputs.row(i).to_owned(),
            y: Array1::from(ckpt.table.lookup(own)?.to_vec()),
            mu: Array1::from(ckpt.table.lookup(other)?.to_vec()),
            lambda,
        };
        let l = study_case_loss(&case)?;
        let _ = writeln!(
            out,
            "{i},{lambda},{},{},{},{:e}",
            l.plain,
            l.blended,
            l.regularized,
            (l.blended - l.regularized).abs()
        );
    }
    Ok(out)
}

fn threads_from_env() -> Result<usize> {
    match std::env::var("CIR_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| config_err(format!("CIR_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn cmd_reproduce(out: &Path, seeds: Vec<u64>, epochs: Option<usize>, episodes: usize) -> Result<()> {
    if episodes == 0 {
        return Err(config_err("episodes must be positive"));
    }
    let mut spec = ReproduceSpec::new(seeds);
    spec.threads = threads_from_env()?;
    spec.epochs = epochs;
    spec.final_episodes.episodes = episodes;
    fs::create_dir_all(out).map_err(|e| CirError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", out.display()))))?;
    let report = run_matrix(&spec)?;
    let summary = out.join("summary.csv");
    let curves = out.join("curves.csv");
    write_file(&summary, report.summary_csv().as_bytes())?;
    write_file(&curves, report.curves_csv().as_bytes())?;
    let mut outputs = vec![summary.clone(), curves];
    for (file, svg) in report.curve_plots() {
        let p = out.join(file);
        write_file(&p, svg.as_bytes())?;
        outputs.push(p);
    }
    let body = {
        let mut b = format!(
            "seeds = {}\nepisodes = {}\n",
            spec.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            episodes
        );
        if let Some(e) = epochs {
            let _ = writeln!(b, "epochs = {e}");
        }
        b
    };
    let refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_file(&manifest_path(&summary), manifest("reproduce", &[], &refs, &body)?.as_bytes())?;

    for a in &report.arms {
        println!(
            "{:<7} val_acc {:.4} ± {:.4}  gap {:.4} ± {:.4}  ratio {:.4} ± {:.4}  ({} runs)",
            a.arm.name(),
            a.val_acc.0,
            a.val_acc.1,
            a.gap.0,
            a.gap.1,
            a.inter_intra_ratio.0,
            a.inter_intra_ratio.1,
            a.runs
        );
    }
    for v in report.verdicts() {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let failures = report.failures();
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("run {} seed {} failed: {}", f.arm.name(), f.seed, f.outcome.as_ref().unwrap_err());
        }
        return Err(CirError::Numeric(format!("{} runs did not complete", failures.len())));
    }
    Ok(())
}
