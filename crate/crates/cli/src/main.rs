use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctp_core::commands::{self, with_jobs};
use ctp_core::config::Config;
use ctp_core::synthesis::{BackgroundMode, BoxSource};
use ctp_core::transforms::Preset;
use ctp_core::BoundingBox;

/// Synthesize target-aware tracking data, build training pairs, run the
/// correlation-filter baseline and evaluate it.
#[derive(Parser, Debug)]
#[command(name = "ctp", version)]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Output does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize frames, ground truth and a sample manifest.
    Synth(SynthArgs),
    /// Sample template/search pairs from a manifest.
    Pairs {
        manifest: PathBuf,
        /// Pairs per sequence.
        #[arg(long)]
        count: Option<usize>,
        /// Record pairs without writing crop images.
        #[arg(long)]
        no_materialize: bool,
    },
    /// Track a sequence directory (or every sequence under a root).
    Track {
        path: PathBuf,
        /// Initial box `x,y,w,h`, 1-based like ground-truth files.
        #[arg(long, value_parser = parse_box)]
        init: Option<BoundingBox>,
    },
    /// Score result files against ground truth.
    Eval { results: PathBuf, groundtruth: PathBuf },
    /// Contact sheet of the first samples in a manifest.
    Preview {
        manifest: PathBuf,
        #[arg(short, default_value_t = 16)]
        n: usize,
        /// Output PNG (default `<out>/preview.png`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Transform frequencies and parameter histograms.
    Stats {
        /// Manifest to summarize. Without it, chains are drawn from the policy.
        manifest: Option<PathBuf>,
        /// Chains to draw when no manifest is given.
        #[arg(long, default_value_t = 10_000)]
        sample: usize,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Dataset root with OTB-style sequence directories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Samples per sequence.
    #[arg(long)]
    num: Option<usize>,
    /// Only these sequences.
    #[arg(long = "sequence")]
    sequences: Vec<String>,
    /// annotated, detector or random.
    #[arg(long)]
    box_source: Option<String>,
    /// same or different.
    #[arg(long)]
    background: Option<String>,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    /// Challenge preset: sv, occ, mb or bc. Repeatable.
    #[arg(long = "preset")]
    presets: Vec<String>,
    /// Enable horizontal flip.
    #[arg(long, overrides_with = "no_flip")]
    flip: bool,
    /// Disable horizontal flip (default).
    #[arg(long)]
    no_flip: bool,
    /// Extra config assignments, e.g. `--set policy.shear.enable=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn parse_box(s: &str) -> std::result::Result<BoundingBox, String> {
    let v: Vec<f64> = s
        .split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [x, y, w, h] = v[..] else {
        return Err(format!("expected x,y,w,h, got {s:?}"));
    };
    BoundingBox::new(x - 1.0, y - 1.0, w, h).map_err(|e| e.to_string())
}

impl PolicyArgs {
    fn apply(&self, cfg: &mut Config) -> Result<()> {
        for name in &self.presets {
            let Some(p) = Preset::parse(name) else { bail!("unknown preset {name:?}") };
            p.apply(&mut cfg.policy);
        }
        if self.flip {
            cfg.policy.flip.enable = true;
        } else if self.no_flip {
            cfg.policy.flip.enable = false;
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else { bail!("--set expects KEY=VALUE, got {kv:?}") };
            cfg.set(k.trim(), v.trim()).map_err(anyhow::Error::msg)?;
        }
        cfg.validate()?;
        Ok(())
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth(a) => {
            if let Some(d) = &a.data {
                cfg.data_root = d.clone();
            }
            if let Some(n) = a.num {
                cfg.samples_per_sequence = n;
            }
            if let Some(s) = &a.box_source {
                cfg.box_source = BoxSource::parse(s).with_context(|| format!("unknown box source {s:?}"))?;
            }
            if let Some(b) = &a.background {
                cfg.background_mode = BackgroundMode::parse(b).with_context(|| format!("unknown background mode {b:?}"))?;
            }
            a.policy.apply(&mut cfg)?;
            let summary = with_jobs(cli.jobs, || commands::cmd_synth(&cfg, &a.sequences))??;
            println!("effective policy (seed {}):", cfg.master_seed);
            for line in cfg.to_text().lines().filter(|l| l.starts_with("policy.")) {
                println!("  {line}");
            }
            for (id, n) in &summary.per_sequence {
                println!("{id}: {n} samples");
            }
            println!(
                "{} samples, {} distractors ({} skipped) -> {}",
                summary.total(),
                summary.distractors,
                summary.skipped_distractors,
                summary.manifest.display()
            );
        }
        Command::Pairs { manifest, count, no_materialize } => {
            if let Some(c) = count {
                cfg.pairs_per_sequence = *c;
            }
            if *no_materialize {
                cfg.materialize_pairs = false;
            }
            let s = with_jobs(cli.jobs, || commands::cmd_pairs(&cfg, manifest))??;
            println!("{} pairs from {} samples -> {}", s.pairs, s.samples, s.manifest.display());
        }
        Command::Track { path, init } => {
            let single = path.join(ctp_core::otb::IMAGE_DIR).is_dir();
            if !single && init.is_some() {
                bail!("--init needs a single sequence directory");
            }
            let files = with_jobs(cli.jobs, || {
                if single {
                    commands::cmd_track(&cfg, path, *init).map(|p| vec![p])
                } else {
                    commands::cmd_track_all(&cfg, path)
                }
            })??;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Eval { results, groundtruth } => {
            let report = commands::cmd_eval(results, groundtruth, &cfg.out_dir)?;
            print!("{}", report.to_table());
        }
        Command::Preview { manifest, n, output } => {
            let out = output.clone().unwrap_or_else(|| cfg.out_dir.join("preview.png"));
            let p = commands::cmd_preview(manifest, *n, &out)?;
            println!("{}", p.display());
        }
        Command::Stats { manifest, sample, policy, json } => {
            let stats = match manifest {
                Some(m) => commands::cmd_stats(m)?,
                None => {
                    policy.apply(&mut cfg)?;
                    with_jobs(cli.jobs, || commands::schedule_stats(&cfg.policy, *sample, cfg.master_seed))??
                }
            };
            if *json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{}", stats.to_table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
