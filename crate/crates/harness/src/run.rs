//! Training runs (homogeneous and heterogeneous) and evaluation.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use snn_dep::attacks::{fgsm, pgd, AttackConfig};
use snn_dep::data::{load_cifar10_binary, BatchPlan, Dataset, Provenance};
use snn_dep::dep::{apply_gradients, SgdState};
use snn_dep::hessian::{spectral_report, HessianReport, SnnLoss};
use snn_dep::snn::{checkpoint, loss_and_grad, predict, Dynamics, Model};
use snn_dep::Tensor;

use crate::config::{
    DataConfig, DataSource, ExperimentConfig, ModelKind, Placement, ProbeConfig, Scheme,
    TrainMode,
};
use crate::metrics::{JsonlWriter, MetricsRecord, StepRecord};

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &DataConfig) -> Result<Splits> {
    match cfg.source {
        DataSource::Synthetic => {
            let all = cfg.synthetic.generate()?;
            let (train, test) = all.split(cfg.test_size, cfg.synthetic.seed)?;
            Ok(Splits { train, test })
        }
        DataSource::Cifar10 => {
            let train_path = cfg.train_path.as_ref().context("data.train_path is not set")?;
            let mut train = load_cifar10_binary(train_path)
                .with_context(|| format!("loading {}", train_path.display()))?;
            let mut test = match &cfg.test_path {
                Some(p) => load_cifar10_binary(p)
                    .with_context(|| format!("loading {}", p.display()))?,
                None => {
                    let (tr, te) = train.split(cfg.test_size, 0)?;
                    train = tr;
                    te
                }
            };
            if let Some(n) = cfg.train_limit {
                train = train.take(n);
            }
            if let Some(n) = cfg.test_limit {
                test = test.take(n);
            }
            Ok(Splits { train, test })
        }
    }
}

pub fn build_model(cfg: &ExperimentConfig, input_shape: &[usize], classes: usize) -> Result<Model> {
    let m = &cfg.model;
    let model = match m.kind {
        ModelKind::Mlp => Model::mlp(input_shape, &m.hidden, classes, m.lif, m.init_gain, cfg.seed)?,
        ModelKind::Conv => {
            let dense = m.hidden.first().copied().unwrap_or(64);
            Model::conv(
                input_shape,
                [m.channels[0], m.channels[1]],
                dense,
                classes,
                m.lif,
                m.init_gain,
                cfg.seed,
            )?
        }
    };
    Ok(model)
}

/// The fixed probe batch: the first `size` test samples.
pub fn probe_batch(test: &Dataset, size: usize) -> (Tensor, Vec<usize>) {
    let idx: Vec<usize> = (0..size.min(test.len())).collect();
    test.batch(&idx)
}

pub fn hessian_report(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    steps: usize,
    probe: &ProbeConfig,
    batch_id: &str,
    model_tag: &str,
) -> Result<HessianReport> {
    let surface = SnnLoss::new(model, x.clone(), labels.to_vec(), steps);
    Ok(spectral_report(
        &surface,
        probe.k,
        probe.tol,
        probe.max_iter,
        batch_id,
        model_tag,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracy {
    pub clean: f64,
    pub fgsm: Option<f64>,
    pub pgd: Option<f64>,
}

fn count_correct(model: &Model, x: &Tensor, labels: &[usize], steps: usize) -> Result<usize> {
    Ok(predict(model, x, steps)?
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count())
}

/// Clean accuracy, plus FGSM and PGD accuracies when `attack` is given.
/// Predictions are the argmax of time-summed readout potentials.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    steps: usize,
    attack: Option<&AttackConfig>,
    batch_size: usize,
) -> Result<Accuracy> {
    if data.is_empty() {
        bail!("cannot evaluate on an empty dataset");
    }
    let (mut clean, mut adv_f, mut adv_p) = (0, 0, 0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        clean += count_correct(model, &x, &y, steps)?;
        if let Some(cfg) = attack {
            let xf = fgsm(model, &x, &y, steps, cfg)?;
            adv_f += count_correct(model, &xf, &y, steps)?;
            let xp = pgd(model, &x, &y, steps, cfg)?;
            adv_p += count_correct(model, &xp, &y, steps)?;
        }
    }
    let n = data.len() as f64;
    Ok(Accuracy {
        clean: clean as f64 / n,
        fgsm: attack.map(|_| adv_f as f64 / n),
        pgd: attack.map(|_| adv_p as f64 / n),
    })
}

/// `(batch index, poisoned)` for every optimizer step of one epoch.
pub fn epoch_schedule(
    cfg: &ExperimentConfig,
    epoch: usize,
    num_batches: usize,
) -> Vec<(usize, bool)> {
    let mut steps: Vec<(usize, bool)> = (0..num_batches).map(|i| (i, false)).collect();
    let h = &cfg.hetero;
    if h.scheme == Scheme::None || h.batches_per_epoch == 0 || epoch < h.start_epoch {
        return steps;
    }
    if num_batches == 0 {
        return steps;
    }
    // Own stream, so enabling poison never shifts the clean batch order.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((1u64 << 32) + epoch as u64);
    match h.placement {
        Placement::AppendEnd => {
            for _ in 0..h.batches_per_epoch {
                steps.push((rng.gen_range(0..num_batches), true));
            }
        }
        Placement::ReplaceRandom => {
            let b = h.batches_per_epoch.min(num_batches);
            for pos in sample(&mut rng, num_batches, b) {
                steps[pos].1 = true;
            }
        }
    }
    steps
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    package_version: &'a str,
    base_mode: TrainMode,
    num_params: usize,
    train_samples: usize,
    test_samples: usize,
    train_provenance: &'a Provenance,
    test_provenance: &'a Provenance,
    /// Parameters whose gradients go through DEP (others bypass it).
    dep_projected: Vec<(String, bool)>,
}

#[derive(Debug, Serialize)]
struct Failure {
    epoch: usize,
    step: usize,
    error: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub model: Model,
    pub metrics: Vec<MetricsRecord>,
    pub steps: Vec<StepRecord>,
    pub splits: Splits,
}

impl RunOutcome {
    pub fn final_metrics(&self) -> &MetricsRecord {
        self.metrics.last().expect("initial record always present")
    }
}

/// Homogeneous training: every batch is clean (`vanilla`) or FGSM-perturbed
/// (`adversarial_training`). Any hetero section is ignored.
pub fn train_homogeneous(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    cfg.hetero.scheme = Scheme::None;
    run(&cfg, out)
}

/// Heterogeneous training with poisoned batches per the hetero section.
pub fn train_hetero(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    if cfg.hetero.scheme == Scheme::None {
        bail!("train-hetero needs hetero.scheme = \"c_plus_p\" or \"p_plus_c\"");
    }
    run(cfg, out)
}

struct Sinks {
    metrics: JsonlWriter,
    steps: JsonlWriter,
}

pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let splits = load_data(&cfg.data)?;
    let mut model = build_model(cfg, splits.train.sample_shape(), splits.train.num_classes())?;

    let mut sinks = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
            let manifest = Manifest {
                package_version: env!("CARGO_PKG_VERSION"),
                base_mode: cfg.base_mode(),
                num_params: model.num_params(),
                train_samples: splits.train.len(),
                test_samples: splits.test.len(),
                train_provenance: splits.train.provenance(),
                test_provenance: splits.test.provenance(),
                dep_projected: model
                    .params()
                    .iter()
                    .map(|p| (p.name.clone(), cfg.optimizer.projects(p.tensor.shape())))
                    .collect(),
            };
            std::fs::write(
                dir.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            Some(Sinks {
                metrics: JsonlWriter::create(&dir.join("metrics.jsonl"))?,
                steps: JsonlWriter::create(&dir.join("steps.jsonl"))?,
            })
        }
        None => None,
    };

    let started = Instant::now();
    let mut outcome = RunOutcome {
        model: model.clone(),
        metrics: Vec::new(),
        steps: Vec::new(),
        splits: splits.clone(),
    };
    let mut step = 0usize;
    let result = train_loop(
        cfg,
        &splits,
        &mut model,
        &mut outcome,
        &mut sinks,
        &mut step,
        started,
    );
    if let Some(s) = sinks.as_mut() {
        s.metrics.flush()?;
        s.steps.flush()?;
    }
    if let Err(e) = result {
        if let Some(dir) = out {
            let epoch = outcome.steps.last().map_or(0, |s| s.epoch);
            let failure = Failure {
                epoch,
                step: step + 1,
                error: format!("{e:#}"),
            };
            std::fs::write(dir.join("failure.json"), serde_json::to_string_pretty(&failure)?)?;
        }
        return Err(e.context(format!("run aborted at optimizer step {}", step + 1)));
    }
    if let Some(dir) = out {
        let file = std::fs::File::create(dir.join("model.ckpt"))?;
        checkpoint::save(&model, std::io::BufWriter::new(file))?;
    }
    outcome.model = model;
    Ok(outcome)
}

fn eval_record(
    cfg: &ExperimentConfig,
    splits: &Splits,
    model: &Model,
    epoch: usize,
    step: usize,
    train_loss: Option<f64>,
    started: Instant,
) -> Result<MetricsRecord> {
    let attack = cfg.eval_attacks.then_some(&cfg.attack.eval);
    let acc = evaluate(model, &splits.test, cfg.time_steps, attack, 256)?;
    let (rho, pr) = if cfg.probe.enabled {
        let (x, y) = probe_batch(&splits.test, cfg.probe.batch_size);
        let r = hessian_report(model, &x, &y, cfg.time_steps, &cfg.probe, "test-clean", "run")?;
        (Some(r.rho), Some(r.pr))
    } else {
        (None, None)
    };
    Ok(MetricsRecord {
        epoch,
        step,
        train_loss,
        test_acc_clean: acc.clean,
        test_acc_fgsm: acc.fgsm,
        test_acc_pgd: acc.pgd,
        rho,
        pr,
        wall_time: cfg
            .record_wall_time
            .then(|| started.elapsed().as_secs_f64()),
    })
}

fn train_loop(
    cfg: &ExperimentConfig,
    splits: &Splits,
    model: &mut Model,
    outcome: &mut RunOutcome,
    sinks: &mut Option<Sinks>,
    step: &mut usize,
    started: Instant,
) -> Result<()> {
    let record = |r: MetricsRecord, outcome: &mut RunOutcome, sinks: &mut Option<Sinks>| {
        if let Some(s) = sinks.as_mut() {
            s.metrics.write(&r)?;
            s.metrics.flush()?;
        }
        outcome.metrics.push(r);
        anyhow::Ok(())
    };
    let initial = eval_record(cfg, splits, model, 0, 0, None, started)?;
    record(initial, outcome, sinks)?;

    let plan = BatchPlan::new(cfg.batch_size, cfg.seed)?;
    let mut state = SgdState::new();
    let base_perturbed = cfg.base_mode() == TrainMode::AdversarialTraining;
    let poison_perturbed = cfg.hetero.scheme == Scheme::CPlusP;

    for epoch in 0..cfg.epochs {
        let batches = plan.epoch(splits.train.len(), epoch as u64);
        let mut loss_sum = 0.0;
        let schedule = epoch_schedule(cfg, epoch, batches.len());
        for &(bi, poison) in &schedule {
            let (x, y) = splits.train.batch(&batches[bi]);
            let perturbed = if poison {
                poison_perturbed
            } else {
                base_perturbed
            };
            let x = if perturbed {
                fgsm(model, &x, &y, cfg.time_steps, &cfg.attack.train)?
            } else {
                x
            };
            let grads = loss_and_grad(model, &x, &y, cfg.time_steps, Dynamics::Spiking)?;
            if !grads.loss.is_finite() {
                bail!("non-finite training loss {} in epoch {epoch}", grads.loss);
            }
            let dep = apply_gradients(model, &grads, &cfg.optimizer, &mut state, cfg.dep_diagnostics)?;
            *step += 1;
            loss_sum += grads.loss;
            let rec = StepRecord {
                epoch: epoch + 1,
                step: *step,
                poison,
                loss: grads.loss,
                dep,
            };
            if let Some(s) = sinks.as_mut() {
                s.steps.write(&rec)?;
            }
            outcome.steps.push(rec);
        }
        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
            let mean = (!schedule.is_empty()).then(|| loss_sum / schedule.len() as f64);
            let r = eval_record(cfg, splits, model, epoch + 1, *step, mean, started)?;
            record(r, outcome, sinks)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hetero(b: usize, placement: Placement, start: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.hetero.scheme = Scheme::CPlusP;
        cfg.hetero.batches_per_epoch = b;
        cfg.hetero.placement = placement;
        cfg.hetero.start_epoch = start;
        cfg
    }

    #[test]
    fn append_end_adds_b_poisoned_steps() {
        let cfg = hetero(2, Placement::AppendEnd, 1);
        assert_eq!(epoch_schedule(&cfg, 0, 5).len(), 5);
        let s = epoch_schedule(&cfg, 1, 5);
        assert_eq!(s.len(), 7);
        assert!(s[..5].iter().all(|&(_, p)| !p));
        assert!(s[5..].iter().all(|&(i, p)| p && i < 5));
    }

    #[test]
    fn replace_random_keeps_step_count() {
        let cfg = hetero(3, Placement::ReplaceRandom, 0);
        let s = epoch_schedule(&cfg, 4, 10);
        assert_eq!(s.len(), 10);
        assert_eq!(s.iter().filter(|&&(_, p)| p).count(), 3);
        assert_eq!(s, epoch_schedule(&cfg, 4, 10));
        let all = epoch_schedule(&hetero(30, Placement::ReplaceRandom, 0), 0, 10);
        assert!(all.iter().all(|&(_, p)| p));
    }

    #[test]
    fn zero_strength_is_clean_schedule() {
        let cfg = hetero(0, Placement::AppendEnd, 0);
        assert_eq!(
            epoch_schedule(&cfg, 3, 4),
            vec![(0, false), (1, false), (2, false), (3, false)]
        );
    }
}
