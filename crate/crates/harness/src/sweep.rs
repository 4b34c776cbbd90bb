//! Attack-budget, PGD-step and time-step sweeps written as CSV.

use std::io::Write;

use anyhow::Result;
use serde::Serialize;
use snn_dep::attacks::AttackConfig;
use snn_dep::data::Dataset;
use snn_dep::snn::Model;

use crate::config::{ExperimentConfig, ProbeConfig};
use crate::run::{evaluate, hessian_report, probe_batch, train_homogeneous};

/// CSV columns: `sweep,value,seed,acc_clean,acc_fgsm,acc_pgd,rho`. Unused
/// cells are empty; a `timesteps` row with an empty seed is the mean over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep: &'static str,
    pub value: f64,
    pub seed: Option<u64>,
    pub acc_clean: Option<f64>,
    pub acc_fgsm: Option<f64>,
    pub acc_pgd: Option<f64>,
    pub rho: Option<f64>,
}

/// Writes each row as soon as it is computed so partial sweeps survive a failure.
pub struct SweepSink<W: Write> {
    csv: csv::Writer<W>,
    pub rows: Vec<SweepRow>,
}

impl<W: Write> SweepSink<W> {
    pub fn new(out: W) -> Self {
        Self {
            csv: csv::Writer::from_writer(out),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: SweepRow) -> Result<()> {
        self.csv.serialize(&row)?;
        self.csv.flush()?;
        self.rows.push(row);
        Ok(())
    }
}

pub fn sweep_epsilon<W: Write>(
    model: &Model,
    test: &Dataset,
    steps: usize,
    base: &AttackConfig,
    epsilons: &[f64],
    sink: &mut SweepSink<W>,
) -> Result<()> {
    for &eps in epsilons {
        let acc = evaluate(model, test, steps, Some(&base.with_epsilon(eps)), 256)?;
        sink.push(SweepRow {
            sweep: "epsilon",
            value: eps,
            seed: None,
            acc_clean: Some(acc.clean),
            acc_fgsm: acc.fgsm,
            acc_pgd: acc.pgd,
            rho: None,
        })?;
    }
    Ok(())
}

pub fn sweep_pgd_k<W: Write>(
    model: &Model,
    test: &Dataset,
    steps: usize,
    base: &AttackConfig,
    ks: &[usize],
    sink: &mut SweepSink<W>,
) -> Result<()> {
    for &k in ks {
        let cfg = AttackConfig {
            k_steps: k,
            ..*base
        };
        let acc = evaluate(model, test, steps, Some(&cfg), 256)?;
        sink.push(SweepRow {
            sweep: "pgd_k",
            value: k as f64,
            seed: None,
            acc_clean: Some(acc.clean),
            acc_fgsm: acc.fgsm,
            acc_pgd: acc.pgd,
            rho: None,
        })?;
    }
    Ok(())
}

/// Trains one model per `(T, seed)` and records `ρ(H)` on the probe batch,
/// followed by the per-`T` mean.
pub fn sweep_timesteps<W: Write>(
    base: &ExperimentConfig,
    time_steps: &[usize],
    seeds: &[u64],
    probe: &ProbeConfig,
    sink: &mut SweepSink<W>,
) -> Result<()> {
    for &t in time_steps {
        let mut rhos = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.time_steps = t;
            cfg.seed = seed;
            cfg.eval_attacks = false;
            cfg.eval_every = 0;
            cfg.probe.enabled = false;
            let run = train_homogeneous(&cfg, None)?;
            let (x, y) = probe_batch(&run.splits.test, probe.batch_size);
            let r = hessian_report(&run.model, &x, &y, t, probe, "test-clean", "timestep-sweep")?;
            rhos.push(r.rho);
            sink.push(SweepRow {
                sweep: "timesteps",
                value: t as f64,
                seed: Some(seed),
                acc_clean: Some(run.final_metrics().test_acc_clean),
                acc_fgsm: None,
                acc_pgd: None,
                rho: Some(r.rho),
            })?;
        }
        if !rhos.is_empty() {
            sink.push(SweepRow {
                sweep: "timesteps",
                value: t as f64,
                seed: None,
                acc_clean: None,
                acc_fgsm: None,
                acc_pgd: None,
                rho: Some(rhos.iter().sum::<f64>() / rhos.len() as f64),
            })?;
        }
    }
    Ok(())
}
