//! `ptt`: synthesize corpora, train, track, evaluate and inspect the
//! point-track-transformer tracker.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure (divergence, failed gradient check).

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ptt_core::gradcheck::Component;
use ptt_core::pipeline::{PttPlacement, SearchPolicy, TemplatePolicy};
use ptt_core::sampling::SampleMethod;

/// Bad flags, config keys or config values.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A run that completed but failed a numerical check.
#[derive(Debug)]
pub struct Numerical(pub String);

impl fmt::Display for Numerical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numerical {}

#[derive(Parser, Debug)]
#[command(name = "ptt", version, about = "Point-cloud single-object tracking with point transformers")]
struct Cli {
    /// Worker threads; 1 keeps every run on the calling thread.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

/// Options shared by commands that resolve a configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.lr=0.0005`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Network and tracker ablation axes.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Seed sampler: rs, fps or feat-fps.
    #[arg(long)]
    pub sampler: Option<SampleMethod>,
    /// PTT placement: none, vote, prop or all.
    #[arg(long)]
    pub ptt: Option<PttPlacement>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PolicyArgs {
    /// Template: first-gt, prev, first+prev or all-prev.
    #[arg(long)]
    pub template: Option<TemplatePolicy>,
    /// Search area: prev-result, prev-gt or cur-gt.
    #[arg(long)]
    pub search: Option<SearchPolicy>,
}

/// Where tracked sequences come from.
#[derive(Args, Debug, Clone, Default)]
pub struct SourceArgs {
    /// Synthetic corpus directory or manifest.
    #[arg(long, conflicts_with = "kitti")]
    pub corpus: Option<PathBuf>,
    /// KITTI tracking root with label_02/, velodyne/ and optional calib/.
    #[arg(long)]
    pub kitti: Option<PathBuf>,
    /// Object types kept from KITTI labels.
    #[arg(long = "type", value_name = "TYPE", default_values_t = vec!["Car".to_string()])]
    pub kinds: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        /// Corpus spec (TOML or JSON).
        #[arg(long, required_unless_present = "preset")]
        spec: Option<PathBuf>,
        /// Built-in corpus instead of a spec file.
        #[arg(long, value_parser = ["kitti-like"])]
        preset: Option<String>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a corpus; writes a checkpoint and the loss curve.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also checkpoint every N steps.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Track sequences and report Success/Precision.
    Track {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, required_unless_present_any = ["oracle", "stub_bias"])]
        checkpoint: Option<PathBuf>,
        /// Regress the ground truth exactly (pipeline check).
        #[arg(long, conflicts_with_all = ["checkpoint", "stub_bias"])]
        oracle: bool,
        /// Always predict the reference box moved by this many meters
        /// along its heading.
        #[arg(long, conflicts_with = "checkpoint", allow_negative_numbers = true)]
        stub_bias: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Ground-plane center error for Precision.
        #[arg(long)]
        bev: bool,
    },
    /// Finite-difference check of every backward rule in a block.
    Gradcheck {
        #[arg(long, default_value = "all")]
        component: Component,
        /// Corrupt a backward rule on purpose: relu or linear.
        #[arg(long)]
        fault: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-stage timing of the tracker.
    Bench {
        #[command(flatten)]
        source: SourceArgs,
        /// Untrained weights are used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Convert KITTI tracking labels into per-object tracklets.
    ConvertLabels {
        /// Directory of label files (or a KITTI root with label_02/).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only these object types; all when omitted.
        #[arg(long = "type", value_name = "TYPE")]
        kinds: Vec<String>,
        /// Calibration file used for every scene.
        #[arg(long)]
        calib: Option<PathBuf>,
    },
    /// Per-frame attention of the PTT blocks along one tracked sequence.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        /// Scene id; the first sequence when omitted.
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and evaluate every sampler and PTT placement.
    Ablate {
        #[arg(long, required_unless_present = "preset")]
        corpus: Option<PathBuf>,
        /// Synthesize the corpus in memory instead.
        #[arg(long, value_parser = ["kitti-like"], conflicts_with = "corpus")]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if cause.downcast_ref::<Numerical>().is_some() {
            return 3;
        }
        if let Some(pe) = cause.downcast_ref::<ptt_core::Error>() {
            return match pe {
                ptt_core::Error::Config(_) => 1,
                e if e.is_numerical() => 3,
                _ => 2,
            };
        }
    }
    2
}

/// The error chain on one line, skipping causes already quoted by the
/// message above them.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands as c;
    match cli.command {
        Command::Synth {
            spec,
            preset,
            sequences,
            seed,
            out,
        } => c::synth(spec.as_deref(), preset.as_deref(), sequences, seed, &out),
        Command::Train {
            corpus,
            out,
            cfg,
            model,
            steps,
            lr,
            resume,
            checkpoint_every,
        } => c::train(&c::TrainArgs {
            corpus,
            out,
            cfg,
            model,
            steps,
            lr,
            resume,
            checkpoint_every,
        }),
        Command::Track {
            source,
            checkpoint,
            oracle,
            stub_bias,
            out,
            cfg,
            model,
            policy,
            bev,
        } => {
            let regressor = match (checkpoint, oracle, stub_bias) {
                (Some(p), _, _) => c::Regressor::Checkpoint(p),
                (None, true, _) => c::Regressor::Oracle,
                (None, false, Some(dx)) => c::Regressor::Bias(dx),
                (None, false, None) => return Err(Usage("track needs --checkpoint, --oracle or --stub-bias".into()).into()),
            };
            c::track(&source, regressor, &out, &cfg, &model, &policy, bev)
        }
        Command::Gradcheck { component, fault, out } => c::gradcheck(component, fault.as_deref(), out.as_deref()),
        Command::Bench {
            source,
            checkpoint,
            out,
            cfg,
            model,
        } => c::bench(&source, checkpoint.as_deref(), &out, &cfg, &model),
        Command::ConvertLabels {
            labels,
            out,
            kinds,
            calib,
        } => c::convert_labels(&labels, &out, &kinds, calib.as_deref()),
        Command::DumpAttention {
            checkpoint,
            source,
            sequence,
            out,
            cfg,
        } => c::dump_attention(&checkpoint, &source, sequence.as_deref(), &out, &cfg),
        Command::Ablate {
            corpus,
            preset,
            out,
            cfg,
            steps,
        } => c::ablate(corpus.as_deref(), preset.as_deref(), &out, &cfg, steps),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let jobs = cli.jobs;
    match ptt_core::par::with_jobs(jobs, move || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
