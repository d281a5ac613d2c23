//! The regularization experiment: no regularization, class interference and
//! norm-matched Gaussian noise, trained on the same data for each seed.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::datagen::{gen_gaussian_mixture, split_classes, DataSplits, GeneratorSpec};
use crate::error::{config_err, Result};
use crate::eval::{episodic_accuracy_on, EpisodeSpec};
use crate::interference::NoiseConfig;
use crate::nn::forward;
use crate::report::{line_chart_svg, mean_ci95, Series};
use crate::trainer::{fmt_opt, split_geometry, train, EpochLog, TrainConfig, LOG_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    NoReg,
    Cir,
    Noise,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::NoReg, Arm::Cir, Arm::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Arm::NoReg => "no_reg",
            Arm::Cir => "cir",
            Arm::Noise => "noise",
        }
    }

    /// Training config of this arm; the arms differ only in the perturbation.
    pub fn config(self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::reproduce(seed);
        cfg.interference.lambda = 0.5;
        cfg.gamma = 0.5;
        match self {
            Arm::NoReg => {}
            Arm::Cir => cfg.interference.enabled = true,
            Arm::Noise => {
                cfg.noise = Some(NoiseConfig {
                    sigma: 0.0,
                    norm_matched: true,
                })
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceSpec {
    pub seeds: Vec<u64>,
    /// Parallel runs; each run is single-threaded.
    pub threads: usize,
    /// Episodes for the final train and validation accuracies.
    pub final_episodes: EpisodeSpec,
    /// Replaces the per-arm epoch budget when set.
    pub epochs: Option<usize>,
}

impl ReproduceSpec {
    pub fn new(seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            threads: 1,
            final_episodes: EpisodeSpec {
                way: 5,
                shot: 1,
                queries: 10,
                episodes: 600,
            },
            epochs: None,
        }
    }
}

pub fn split_fractions() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}

/// The dataset and splits shared by every arm of one seed.
pub fn seed_splits(seed: u64) -> Result<DataSplits> {
    let ds = gen_gaussian_mixture(&GeneratorSpec::reproduce(seed))?;
    split_classes(&ds, split_fractions(), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub val_acc: f64,
    pub train_acc: f64,
    pub inter_intra_ratio: Option<f64>,
    pub logs: Vec<EpochLog>,
}

impl RunMetrics {
    pub fn gap(&self) -> f64 {
        self.train_acc - self.val_acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub arm: Arm,
    pub seed: u64,
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: Arm,
    pub runs: usize,
    pub val_acc: (f64, f64),
    pub train_acc: (f64, f64),
    pub gap: (f64, f64),
    pub inter_intra_ratio: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

type CurveFn = fn(&EpochLog) -> f64;

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceReport {
    pub runs: Vec<RunResult>,
    pub arms: Vec<ArmSummary>,
}

/// Train and measure one arm on one seed.
pub fn run_one(arm: Arm, seed: u64, splits: &DataSplits, spec: &ReproduceSpec) -> Result<RunMetrics> {
    let mut cfg = arm.config(seed);
    if let Some(e) = spec.epochs {
        cfg.epochs = e;
        cfg.lr_decay_start = e;
    }
    let out = train(&splits.train, &splits.val, &cfg)?;
    let acc = |ds: &crate::datagen::Dataset| -> Result<f64> {
        let (z, _) = forward(&out.model, &ds.all_rows())?;
        Ok(episodic_accuracy_on(&z, ds, &spec.final_episodes, seed)?.mean)
    };
    let geometry = split_geometry(&out.model, splits)?;
    Ok(RunMetrics {
        val_acc: acc(&splits.val)?,
        train_acc: acc(&splits.train)?,
        inter_intra_ratio: geometry[1].ratio,
        logs: out.logs,
    })
}

/// Run every (arm, seed) pair. Results are ordered by seed, then arm,
/// whatever the thread count.
pub fn run_matrix(spec: &ReproduceSpec) -> Result<ReproduceReport> {
    if spec.seeds.is_empty() {
        return Err(config_err("reproduce needs at least one seed"));
    }
    let jobs: Vec<(u64, Arm)> = spec
        .seeds
        .iter()
        .flat_map(|&s| Arm::ALL.into_iter().map(move |a| (s, a)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads.max(1))
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;
    let runs: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, arm)| {
                let outcome = seed_splits(seed)
                    .and_then(|splits| run_one(arm, seed, &splits, spec))
                    .map_err(|e| e.to_string());
                RunResult { arm, seed, outcome }
            })
            .collect()
    });
    let arms = Arm::ALL.iter().map(|&arm| summarize(arm, &runs)).collect();
    Ok(ReproduceReport { runs, arms })
}

fn summarize(arm: Arm, runs: &[RunResult]) -> ArmSummary {
    let ok: Vec<&RunMetrics> = runs
        .iter()
        .filter(|r| r.arm == arm)
        .filter_map(|r| r.outcome.as_ref().ok())
        .collect();
    let col = |f: &dyn Fn(&RunMetrics) -> f64| mean_ci95(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
    ArmSummary {
        arm,
        runs: ok.len(),
        val_acc: col(&|m| m.val_acc),
        train_acc: col(&|m| m.train_acc),
        gap: col(&|m| m.gap()),
        inter_intra_ratio: col(&|m| m.inter_intra_ratio.unwrap_or(f64::NAN)),
    }
}

impl ReproduceReport {
    pub fn arm(&self, arm: Arm) -> &ArmSummary {
        self.arms.iter().find(|a| a.arm == arm).expect("every arm is summarized")
    }

    pub fn failures(&self) -> Vec<&RunResult> {
        self.runs.iter().filter(|r| r.outcome.is_err()).collect()
    }

    /// The directional comparisons between arms.
    pub fn verdicts(&self) -> Vec<Verdict> {
        let (n, c, g) = (self.arm(Arm::NoReg), self.arm(Arm::Cir), self.arm(Arm::Noise));
        vec![
            Verdict {
                name: "cir_val_acc_ge_no_reg",
                pass: c.val_acc.0 >= n.val_acc.0,
                detail: format!("cir {:.4} vs no_reg {:.4}", c.val_acc.0, n.val_acc.0),
            },
            Verdict {
                name: "cir_gap_lt_no_reg",
                pass: c.gap.0 < n.gap.0,
                detail: format!("cir {:.4} vs no_reg {:.4}", c.gap.0, n.gap.0),
            },
            Verdict {
                name: "cir_val_acc_ge_noise",
                pass: c.val_acc.0 >= g.val_acc.0,
                detail: format!("cir {:.4} vs noise {:.4}", c.val_acc.0, g.val_acc.0),
            },
            Verdict {
                name: "cir_ratio_gt_no_reg",
                pass: c.inter_intra_ratio.0 > n.inter_intra_ratio.0,
                detail: format!(
                    "cir {:.4} vs no_reg {:.4}",
                    c.inter_intra_ratio.0, n.inter_intra_ratio.0
                ),
            },
        ]
    }

    /// One row per run, then `mean` and `ci95` rows per arm.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("arm,seed,status,val_acc,train_acc,gap,inter_intra_ratio\n");
        for r in &self.runs {
            match &r.outcome {
                Ok(m) => {
                    let _ = writeln!(
                        out,
                        "{},{},ok,{},{},{},{}",
                        r.arm.name(),
                        r.seed,
                        m.val_acc,
                        m.train_acc,
                        m.gap(),
                        fmt_opt(m.inter_intra_ratio)
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{},{},\"failed: {}\",NA,NA,NA,NA", r.arm.name(), r.seed, e.replace('"', "'"));
                }
            }
        }
        for a in &self.arms {
            let _ = writeln!(
                out,
                "{},mean,{} runs,{},{},{},{}",
                a.arm.name(),
                a.runs,
                a.val_acc.0,
                a.train_acc.0,
                a.gap.0,
                a.inter_intra_ratio.0
            );
            let _ = writeln!(
                out,
                "{},ci95,{} runs,{},{},{},{}",
                a.arm.name(),
                a.runs,
                a.val_acc.1,
                a.train_acc.1,
                a.gap.1,
                a.inter_intra_ratio.1
            );
        }
        out
    }

    /// Every epoch log of every completed run.
    pub fn curves_csv(&self) -> String {
        let mut out = format!("arm,seed,{LOG_HEADER}\n");
        for r in &self.runs {
            if let Ok(m) = &r.outcome {
                for l in &m.logs {
                    let _ = writeln!(out, "{},{},{}", r.arm.name(), r.seed, l.csv_row());
                }
            }
        }
        out
    }

    /// Seed-averaged curves per arm as `(file name, svg)`.
    pub fn curve_plots(&self) -> Vec<(String, String)> {
        let metrics: [(&str, &str, CurveFn); 4] = [
            ("val_acc", "validation accuracy", |l| l.val_acc),
            ("train_acc", "training accuracy", |l| l.train_acc),
            ("train_loss", "training loss", |l| l.train_loss),
            ("inter_intra_ratio", "inter/intra ratio", |l| l.geometry.ratio.unwrap_or(f64::NAN)),
        ];
        metrics
            .iter()
            .map(|(file, title, f)| {
                let series: Vec<Series> = Arm::ALL
                    .iter()
                    .map(|&arm| Series {
                        name: arm.name().into(),
                        points: self.mean_curve(arm, *f),
                    })
                    .collect();
                (format!("curves_{file}.svg"), line_chart_svg(title, "epoch", title, &series))
            })
            .collect()
    }

    fn mean_curve(&self, arm: Arm, f: fn(&EpochLog) -> f64) -> Vec<(f64, f64)> {
        let logs: Vec<&Vec<EpochLog>> = self
            .runs
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| r.outcome.as_ref().ok().map(|m| &m.logs))
            .collect();
        let len = logs.iter().map(|l| l.len()).min().unwrap_or(0);
        (0..len)
            .map(|e| {
                let mean = logs.iter().map(|l| f(&l[e])).sum::<f64>() / logs.len() as f64;
                (logs[0][e].epoch as f64, mean)
            })
            .collect()
    }
}
