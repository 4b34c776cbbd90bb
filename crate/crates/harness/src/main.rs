use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use snn_dep::attacks::{fgsm, parse_budget, pgd};
use snn_dep::snn::{checkpoint, Model};
use snn_dep_harness::config::ExperimentConfig;
use snn_dep_harness::metrics::{JsonlWriter, SpectrumRecord};
use snn_dep_harness::run::{
    build_model, evaluate, hessian_report, load_data, probe_batch, train_hetero,
    train_homogeneous, Splits,
};
use snn_dep_harness::sweep::{sweep_epsilon, sweep_pgd_k, sweep_timesteps, SweepSink};

#[derive(Parser)]
#[command(name = "snn-dep", version, about = "Spiking-network training with DEP, attacks and Hessian probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::reference(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Epsilon,
    PgdK,
    Timesteps,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeBatch {
    Clean,
    Fgsm,
    Pgd,
}

#[derive(Subcommand)]
enum Command {
    /// Homogeneous training (vanilla or adversarial, per `mode`).
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory for metrics, step log, manifest and checkpoint.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Training with poisoned batches per the `[hetero]` section.
    TrainHetero {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Clean / FGSM / PGD test accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clean accuracy only.
        #[arg(long)]
        no_attacks: bool,
    },
    /// Accuracy over attack budgets or PGD steps, or ρ(H) over time steps.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Comma-separated points; budgets accept `N/255`.
        #[arg(long)]
        values: String,
        /// Model to attack; trained from the config when absent (epsilon, pgd-k).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Seeds for the time-step sweep.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// CSV destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top Hessian eigenvalues on the fixed probe batch.
    Hessian {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "clean")]
        batch: ProbeBatch,
        #[arg(long)]
        k: Option<usize>,
        /// Step number stored in the record.
        #[arg(long, default_value_t = 0)]
        step: usize,
        /// JSONL file to append the report to (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter names and shapes stored in a checkpoint.
    CheckpointInfo { path: PathBuf },
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<(Model, Splits)> {
    let splits = load_data(&cfg.data)?;
    let mut model = build_model(cfg, splits.train.sample_shape(), splits.train.num_classes())?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    checkpoint::load_into(&mut model, BufReader::new(file))
        .with_context(|| format!("loading {}", path.display()))?;
    Ok((model, splits))
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty())
}

fn print_final(out: &Path, outcome: &snn_dep_harness::RunOutcome) -> Result<()> {
    println!("{}", serde_json::to_string(outcome.final_metrics())?);
    eprintln!("artifacts written to {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { common, out } => {
            let cfg = common.resolve()?;
            let outcome = train_homogeneous(&cfg, Some(&out))?;
            print_final(&out, &outcome)?;
        }
        Command::TrainHetero { common, out } => {
            let cfg = common.resolve()?;
            let outcome = train_hetero(&cfg, Some(&out))?;
            print_final(&out, &outcome)?;
        }
        Command::Eval {
            common,
            checkpoint,
            no_attacks,
        } => {
            let cfg = common.resolve()?;
            let (model, splits) = load_model(&cfg, &checkpoint)?;
            let attack = (!no_attacks).then_some(&cfg.attack.eval);
            let acc = evaluate(&model, &splits.test, cfg.time_steps, attack, 256)?;
            println!("{}", serde_json::to_string(&acc)?);
        }
        Command::Sweep {
            common,
            kind,
            values,
            checkpoint,
            seeds,
            out,
        } => {
            let cfg = common.resolve()?;
            let writer: Box<dyn std::io::Write> = match &out {
                Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(std::io::stdout()),
            };
            let mut sink = SweepSink::new(writer);
            match kind {
                SweepKind::Timesteps => {
                    let ts = split_list(&values)
                        .map(|v| v.parse::<usize>().with_context(|| format!("bad time step `{v}`")))
                        .collect::<Result<Vec<_>>>()?;
                    let seeds = split_list(&seeds)
                        .map(|v| v.parse::<u64>().with_context(|| format!("bad seed `{v}`")))
                        .collect::<Result<Vec<_>>>()?;
                    sweep_timesteps(&cfg, &ts, &seeds, &cfg.probe, &mut sink)?;
                }
                SweepKind::Epsilon | SweepKind::PgdK => {
                    let (model, test) = match &checkpoint {
                        Some(p) => {
                            let (m, s) = load_model(&cfg, p)?;
                            (m, s.test)
                        }
                        None => {
                            let mut c = cfg.clone();
                            c.eval_attacks = false;
                            let run = train_homogeneous(&c, None)?;
                            (run.model, run.splits.test)
                        }
                    };
                    if let SweepKind::Epsilon = kind {
                        let eps = split_list(&values)
                            .map(|v| Ok(parse_budget(v)?))
                            .collect::<Result<Vec<_>>>()?;
                        sweep_epsilon(&model, &test, cfg.time_steps, &cfg.attack.eval, &eps, &mut sink)?;
                    } else {
                        let ks = split_list(&values)
                            .map(|v| v.parse::<usize>().with_context(|| format!("bad K `{v}`")))
                            .collect::<Result<Vec<_>>>()?;
                        sweep_pgd_k(&model, &test, cfg.time_steps, &cfg.attack.eval, &ks, &mut sink)?;
                    }
                }
            }
        }
        Command::Hessian {
            common,
            checkpoint,
            batch,
            k,
            step,
            out,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(k) = k {
                cfg.probe.k = k;
            }
            let (model, splits) = load_model(&cfg, &checkpoint)?;
            let (x, y) = probe_batch(&splits.test, cfg.probe.batch_size);
            let t = cfg.time_steps;
            let (x, id) = match batch {
                ProbeBatch::Clean => (x, "test-clean"),
                ProbeBatch::Fgsm => (fgsm(&model, &x, &y, t, &cfg.attack.eval)?, "test-fgsm"),
                ProbeBatch::Pgd => (pgd(&model, &x, &y, t, &cfg.attack.eval)?, "test-pgd"),
            };
            let tag = checkpoint.display().to_string();
            let r = hessian_report(&model, &x, &y, t, &cfg.probe, id, &tag)?;
            let rec = SpectrumRecord {
                step,
                batch_id: r.batch_id.clone(),
                rho: r.rho,
                top5: r.top5.clone(),
                pr: r.pr,
                converged_flags: r.converged.clone(),
            };
            match out {
                Some(p) => {
                    let mut w = JsonlWriter::append(&p)?;
                    w.write(&rec)?;
                    w.flush()?;
                }
                None => println!("{}", serde_json::to_string(&rec)?),
            }
            if !r.all_converged() {
                eprintln!("warning: not every eigenvalue converged: {:?}", r.converged);
            }
        }
        Command::CheckpointInfo { path } => {
            let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let params = checkpoint::read(BufReader::new(file))?;
            if params.is_empty() {
                bail!("checkpoint holds no parameters");
            }
            let mut total = 0;
            for p in &params {
                println!("{:<24} {:?}", p.name, p.shape);
                total += p.data.len();
            }
            println!("{} parameters in {} tensors", total, params.len());
        }
    }
    Ok(())
}
