//! End-to-end pipelines shared by the command-line front end and the tests:
//! dataset preparation, training, held-out evaluation, sweeps and the
//! pendulum comparison.

use std::path::Path;

use ugcn_core::data::{split_groups, Normalizer, Sample};
use ugcn_core::infer::sliding_window_predict;
use ugcn_core::loss::{motion_loss_value, LossConfig};
use ugcn_core::metrics::{Alignment, EvalReport, MetricAccumulator};
use ugcn_core::model::{build_model, UgcnModel};
use ugcn_core::pose::PoseSequence;
use ugcn_core::synth::{gen_lifting_dataset, gen_pendulum, mean_l1, PendulumTraces};
use ugcn_core::train::{EpochStats, Trainer};
use ugcn_core::SkeletonTopology;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::{load_dataset_dir, resolve_topology};

/// A paired sequence in physical units (pixels and millimetres).
#[derive(Debug, Clone, PartialEq)]
pub struct RawPair {
    pub name: String,
    pub action: Option<String>,
    pub pose2d: PoseSequence,
    pub pose3d: PoseSequence,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub topology: SkeletonTopology,
    pub normalizer: Normalizer,
    pub train: Vec<RawPair>,
    pub test: Vec<RawPair>,
}

impl Prepared {
    /// Training pairs in network units.
    pub fn train_samples(&self) -> Result<Vec<Sample>> {
        self.train.iter().map(|p| to_sample(p, &self.normalizer)).collect()
    }

    /// Mean Euclidean distance between noisy and clean 2D test inputs.
    pub fn mean_2d_error(&self, clean: &[RawPair]) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for (a, b) in self.test.iter().zip(clean) {
            for (p, q) in a.pose2d.data().chunks_exact(2).zip(b.pose2d.data().chunks_exact(2)) {
                sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                n += 1;
            }
        }
        sum / n.max(1) as f64
    }
}

fn to_sample(p: &RawPair, n: &Normalizer) -> Result<Sample> {
    Ok(Sample::new(n.normalize_2d(&p.pose2d), n.normalize_3d(&p.pose3d), p.action.clone())?)
}

/// Loads the configured dataset or generates the synthetic one.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let topology = resolve_topology(&cfg.data.topology)?;
    let (train, test) = match &cfg.data.train_dir {
        Some(dir) => {
            let train = load_dataset_dir(dir, &topology)?;
            let test = match &cfg.data.test_dir {
                Some(t) => load_dataset_dir(t, &topology)?,
                None => Vec::new(),
            };
            (train, test)
        }
        None => synthetic_split(cfg, &topology, cfg.data.synth.noise_sigma)?,
    };
    if train.is_empty() {
        return Err(ugcn_core::Error::EmptyDataset.into());
    }
    for p in train.iter().chain(&test) {
        if p.pose2d.frames() < cfg.model.frames {
            return Err(Error::Config(format!(
                "sequence {} has {} frames, shorter than the {}-frame window",
                p.name,
                p.pose2d.frames(),
                cfg.model.frames
            )));
        }
    }
    Ok(Prepared {
        topology,
        normalizer: cfg.data.normalizer,
        train,
        test,
    })
}

/// Synthetic train/test split with the given 2D noise level.
pub fn synthetic_split(cfg: &ExperimentConfig, topo: &SkeletonTopology, sigma: f64) -> Result<(Vec<RawPair>, Vec<RawPair>)> {
    let mut spec = cfg.data.synth.clone();
    spec.noise_sigma = sigma;
    let seqs = gen_lifting_dataset(topo, &spec)?;
    let pairs: Vec<RawPair> = seqs
        .into_iter()
        .enumerate()
        .map(|(i, s)| RawPair {
            name: format!("{}_{:03}", s.action, i),
            action: Some(s.action),
            pose2d: s.pose2d,
            pose3d: s.pose3d,
        })
        .collect();
    Ok(split_groups(&pairs, spec.sequences_per_action, cfg.data.held_out_per_action)?)
}

pub fn new_trainer(cfg: &ExperimentConfig, topo: &SkeletonTopology) -> Result<Trainer> {
    cfg.validate()?;
    let model = build_model(cfg.model.clone(), topo, cfg.train.seed)?;
    Ok(Trainer::new(model, cfg.train_config())?)
}

/// Trains from scratch, reporting every epoch.
pub fn train(cfg: &ExperimentConfig, data: &Prepared, on_epoch: impl FnMut(&Trainer, &EpochStats)) -> Result<Trainer> {
    let mut trainer = new_trainer(cfg, &data.topology)?;
    trainer.train(&data.train_samples()?, on_epoch)?;
    Ok(trainer)
}

/// Lifts a whole sequence given in pixels; returns millimetres.
pub fn predict_sequence(model: &UgcnModel, cfg: &ExperimentConfig, normalizer: &Normalizer, pose2d: &PoseSequence) -> Result<PoseSequence> {
    let input = normalizer.normalize_2d(pose2d);
    let out = sliding_window_predict(model, &input, &cfg.inference, model.topology().mirror())?;
    Ok(normalizer.denormalize_3d(&out))
}

/// Scores `model` on every test pair with sliding-window inference.
pub fn evaluate(model: &UgcnModel, cfg: &ExperimentConfig, data: &Prepared) -> Result<EvalReport> {
    let mut acc = MetricAccumulator::new(data.topology.root(), Alignment::Similarity);
    for p in &data.test {
        let pred = predict_sequence(model, cfg, &data.normalizer, &p.pose2d)?;
        acc.add(&pred, &p.pose3d, p.action.as_deref())?;
    }
    Ok(acc.finish()?)
}

/// One variant of an ablation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    /// `key=value` overrides applied to the base configuration.
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub seed: u64,
    pub report: EvalReport,
    pub final_loss: f64,
}

/// Trains and evaluates each variant on the same data and seed.
pub fn ablate(base: &ExperimentConfig, variants: &[Variant], mut log: impl FnMut(&str)) -> Result<Vec<AblationRow>> {
    let data = prepare(base)?;
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = ExperimentConfig::load(None, base.clone(), &v.overrides)?;
        let trainer = train(&cfg, &data, |_, _| {})?;
        let report = evaluate(&trainer.model, &cfg, &data)?;
        log(&format!(
            "{}: mpjpe {:.3} mm, mpjve {:.3} mm",
            v.label, report.overall.mpjpe_mm, report.overall.mpjve_mm
        ));
        rows.push(AblationRow {
            label: v.label.clone(),
            seed: cfg.train.seed,
            final_loss: trainer.history.last().map_or(f64::NAN, |h| h.loss.total),
            report,
        });
    }
    Ok(rows)
}

/// Parses a sweep description: one variant per non-empty line,
/// `label: key=value key=value ...` (`#` starts a comment).
pub fn parse_sweep(text: &str) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (label, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("sweep line `{line}` lacks `label:`")))?;
        out.push(Variant {
            label: label.trim().to_string(),
            overrides: rest.split_whitespace().map(str::to_string).collect(),
        });
    }
    if out.is_empty() {
        return Err(Error::Config("sweep has no variants".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRow {
    pub sigma: f64,
    pub mean_2d_error: f64,
    pub mpjpe_mm: f64,
}

/// Trains and evaluates one model per 2D noise level (same seed each time)
/// and pairs the measured 2D input error with the resulting 3D error.
pub fn noise_curve(base: &ExperimentConfig, sigmas: &[f64], mut log: impl FnMut(&str)) -> Result<Vec<NoiseRow>> {
    if sigmas.is_empty() {
        return Err(Error::Config("noise curve needs at least one sigma".into()));
    }
    let topo = resolve_topology(&base.data.topology)?;
    let (_, clean_test) = synthetic_split(base, &topo, 0.0)?;
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let (train_pairs, test) = synthetic_split(base, &topo, sigma)?;
        let data = Prepared {
            topology: topo.clone(),
            normalizer: base.data.normalizer,
            train: train_pairs,
            test,
        };
        let trainer = train(base, &data, |_, _| {})?;
        let report = evaluate(&trainer.model, base, &data)?;
        let row = NoiseRow {
            sigma,
            mean_2d_error: data.mean_2d_error(&clean_test),
            mpjpe_mm: report.overall.mpjpe_mm,
        };
        log(&format!(
            "sigma {sigma}: 2d error {:.3}, mpjpe {:.3} mm",
            row.mean_2d_error, row.mpjpe_mm
        ));
        rows.push(row);
    }
    Ok(rows)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumRow {
    pub trace: &'static str,
    pub mean_l1: f64,
    pub motion_loss: f64,
}

pub const PENDULUM_FRAMES: usize = 200;
pub const PENDULUM_AMPLITUDE: f64 = 1.0;
pub const PENDULUM_PERIOD: f64 = 50.0;

/// Generates the pendulum traces and scores each against the ground truth.
pub fn pendulum(seed: u64) -> Result<(PendulumTraces, Vec<PendulumRow>)> {
    let p = gen_pendulum(PENDULUM_FRAMES, PENDULUM_AMPLITUDE, PENDULUM_PERIOD, seed)?;
    let cfg = LossConfig::derivative();
    let rows = p
        .traces()
        .into_iter()
        .map(|(name, tr)| {
            Ok(PendulumRow {
                trace: name,
                mean_l1: mean_l1(tr, &p.gt),
                motion_loss: motion_loss_value(tr, &p.gt, &cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((p, rows))
}

/// Writes the resolved configuration next to the artifacts.
pub fn write_resolved_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))
}
