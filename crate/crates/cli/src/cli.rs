//! Argument definitions and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use uditqc_core::dataset::Task;
use uditqc_core::{Circuit, Srv};

use crate::commands::{self, MaskOptions, Overrides, Prompt};
use crate::config::RunConfig;
use crate::error::{config, CliError, Result};
use crate::run::RunDir;

#[derive(Debug, Parser)]
#[command(name = "uditqc", version, about = "Diffusion-based quantum circuit synthesis")]
pub struct Cli {
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true, env = "UDITQC_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a training dataset.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model on the run's dataset.
    Train(TrainArgs),
    /// Draw circuits for one prompt.
    Sample(SampleArgs),
    /// Evaluate a trained model.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Print ASCII diagrams of the circuits in a JSON or JSON-lines file.
    Inspect {
        file: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `paths.run_dir`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Overrides `dataset.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `dataset.balanced_size`.
    #[arg(long)]
    pub balanced_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Entanglement (SRV) dataset.
    GenSrv(DatasetArgs),
    /// Unitary compilation dataset plus held-out test unitaries.
    GenCompile(DatasetArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Checkpoint manifest (default: the run's latest).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of samples (per prompt for evaluations).
    #[arg(long)]
    pub n: Option<usize>,
    /// Sampler steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Classifier-free guidance scale.
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    /// Output file (sample) or report directory (eval).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GenArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            checkpoint: self.checkpoint.clone(),
            n: self.n,
            steps: self.steps,
            cfg_scale: self.cfg_scale,
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("prompt").required(true).multiple(true).args(["srv", "label", "target"])))]
pub struct SampleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Target SRV, e.g. `2,2,1`.
    #[arg(long, conflicts_with_all = ["label", "target"])]
    pub srv: Option<Srv>,
    /// Class index; with `--target`, overrides the gate set read off the circuit.
    #[arg(long)]
    pub label: Option<usize>,
    /// Compile task: JSON circuit whose unitary is the target.
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub gen: GenArgs,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub srv: Srv,
    /// Qubit rows forced to padding, e.g. `--pad-rows 2`.
    #[arg(long, value_delimiter = ',')]
    pub pad_rows: Vec<usize>,
    /// Cells forced to hold no gate, as `qubit:time`.
    #[arg(long, value_delimiter = ',', value_parser = parse_cell)]
    pub blank_cells: Vec<(usize, usize)>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Per-SRV accuracy, novelty and confusion matrix.
    Srv(EvalArgs),
    /// Accuracy under a fixed inpainting mask.
    Mask(MaskArgs),
    /// Prefix completion success per (input SRV, target SRV).
    Edit(EvalArgs),
    /// Exact compilation of the held-out unitaries.
    Compile(EvalArgs),
}

fn parse_cell(s: &str) -> std::result::Result<(usize, usize), String> {
    let (q, t) = s.split_once(':').ok_or_else(|| format!("expected qubit:time, got {s:?}"))?;
    let q = q.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    let t = t.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    Ok((q, t))
}

fn load(args: &RunArgs) -> Result<(RunConfig, RunDir)> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.run_dir {
        cfg.paths.run_dir = dir.clone();
    }
    let run = RunDir::new(cfg.paths.run_dir.clone());
    Ok((cfg, run))
}

fn read_circuit(path: &Path) -> Result<Circuit> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(config("--workers must be positive"));
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Dataset(cmd) => {
            let (args, task) = match &cmd {
                DatasetCommand::GenSrv(a) => (a, Task::Srv),
                DatasetCommand::GenCompile(a) => (a, Task::Compile),
            };
            let (mut cfg, run) = load(&args.run)?;
            if let Some(seed) = args.seed {
                cfg.dataset.seed = seed;
            }
            if let Some(size) = args.balanced_size {
                cfg.dataset.balanced_size = size;
            }
            cfg.validate()?;
            let s = commands::gen_dataset(&cfg, &run, task)?;
            println!("{} records, {} classes, {} held out", s.manifest.records, s.manifest.classes.len(), s.held_out);
        }
        Command::Train(args) => {
            let (mut cfg, run) = load(&args.run)?;
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = args.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = args.lr {
                cfg.train.lr = lr;
            }
            cfg.validate()?;
            let s = commands::train_cmd(&cfg, &run)?;
            let last = s.report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!("{} steps, final epoch loss {last:.6}, checkpoint {}", s.report.steps, s.checkpoint.display());
        }
        Command::Sample(args) => {
            let (cfg, run) = load(&args.run)?;
            let prompt = match (&args.srv, args.label, &args.target) {
                (Some(s), _, _) => Prompt::Srv(s.clone()),
                (_, label, Some(p)) => Prompt::Unitary { circuit: read_circuit(p)?, label },
                (_, Some(l), None) => Prompt::Label(l),
                _ => unreachable!("clap requires one prompt"),
            };
            let (path, records) = commands::sample_cmd(&cfg, &run, &prompt, &args.gen.overrides())?;
            let valid = records.iter().filter(|r| r.circuit.is_some()).count();
            println!("{} samples ({valid} valid) written to {}", records.len(), path.display());
        }
        Command::Eval(cmd) => match cmd {
            EvalCommand::Srv(a) => {
                let (cfg, run) = load(&a.run)?;
                let ev = commands::eval_srv_cmd(&cfg, &run, &a.gen.overrides())?;
                println!("macro accuracy {:.4}, micro accuracy {:.4}", ev.macro_accuracy, ev.micro_accuracy);
            }
            EvalCommand::Mask(m) => {
                let (cfg, run) = load(&m.eval.run)?;
                let opts = MaskOptions { srv: Some(m.srv.clone()), pad_rows: m.pad_rows.clone(), blank_cells: m.blank_cells.clone() };
                let r = commands::eval_mask_cmd(&cfg, &run, &opts, &m.eval.gen.overrides())?;
                println!("accuracy {:.4}, mask violations {}", r.report.accuracy, r.mask_violations);
            }
            EvalCommand::Edit(a) => {
                let (cfg, run) = load(&a.run)?;
                let m = commands::eval_edit_cmd(&cfg, &run, &a.gen.overrides())?;
                                println!("{} input x {} target cells, prefix violations {}", m.classes.len(), m.classes.len(), m.prefix_violations);
            }
            EvalCommand::Compile(a) => {
                let (cfg, run) = load(&a.run)?;
                let r = commands::eval_compile_cmd(&cfg, &run, &a.gen.overrides())?;
                println!("accuracy {:.4}, dominates baseline: {}", r.accuracy, r.dominates_baseline);
            }
        },
        Command::Inspect { file } => print!("{}", commands::inspect(&file)?),
    }
    info!("done");
    Ok(())
}
