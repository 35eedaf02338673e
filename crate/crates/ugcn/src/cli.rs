//! The `ugcn` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ugcn_core::gradcheck::GradCheckOptions;
use ugcn_core::gradsuite;
use ugcn_core::metrics::EvalReport;
use ugcn_core::train::Trainer;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{self, Prepared, Variant};
use crate::io::{self, Checkpoint, SequenceFile};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "ugcn", version, about = "Lift 2D keypoint sequences to 3D with a U-shaped graph network")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Built-in starting configuration: default, toy or trend.
    #[arg(long, global = true, default_value = "default")]
    pub preset: String,
    /// TOML configuration layered over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `key.path=value` override, applied last (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Artifacts directory (overrides `output` from the configuration).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and evaluate it on the held-out split.
    Train {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of `.2d.pose`/`.3d.pose` pairs; defaults to the
        /// held-out split of the checkpoint's configuration.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Lift one 2D sequence file to 3D.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score three pendulum estimates with positional and motion losses.
    ToyPendulum {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and compare configuration variants.
    Ablate {
        /// Sweep file, one `label: key=value ...` variant per line.
        #[arg(long, conflicts_with = "sweep_preset")]
        sweep: Option<PathBuf>,
        /// Built-in sweep: intervals, operators, lambda or pairs.
        #[arg(long)]
        sweep_preset: Option<String>,
    },
    /// Train at several 2D noise levels and relate 2D to 3D error.
    NoiseCurve {
        /// Noise standard deviations in pixels.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0, 4.0, 8.0])]
        sigmas: Vec<f64>,
    },
    /// Finite-difference check of every gradient rule.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Scale the tiny network's output adjoint by `1 + ERROR`; the
        /// check must then fail.
        #[arg(long, value_name = "ERROR")]
        inject_fault: Option<f64>,
    },
}

/// Runs a parsed command line, logging to standard output.
pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Train { resume } => cmd_train(g, resume.as_deref()),
        Command::Eval { checkpoint, data } => cmd_eval(g, checkpoint, data.as_deref()).map(|_| ()),
        Command::Infer { checkpoint, input, out } => cmd_infer(checkpoint, input, out),
        Command::ToyPendulum { seed } => cmd_toy_pendulum(g, *seed),
        Command::Ablate { sweep, sweep_preset } => cmd_ablate(g, sweep.as_deref(), sweep_preset.as_deref()),
        Command::NoiseCurve { sigmas } => cmd_noise_curve(g, sigmas),
        Command::Gradcheck { seeds, inject_fault } => cmd_gradcheck(*seeds, *inject_fault),
    }
}

fn resolve(g: &GlobalArgs, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), base, &g.overrides)?;
    if let Some(out) = &g.output {
        cfg.output.clone_from(out);
    }
    Ok(cfg)
}

pub fn load_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    resolve(g, ExperimentConfig::preset(&g.preset)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const EPOCH_LOG_FILE: &str = "train_log.csv";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-epoch{epoch:04}.ckpt")
}

fn snapshot(cfg: &ExperimentConfig, t: &Trainer) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        model: t.model.clone(),
        optimizer: Some(t.optimizer.clone()),
        epoch: t.epoch,
        history: t.history.clone(),
    }
}

/// Trains, then writes the epoch log, the final checkpoint, its digest, the
/// resolved configuration and (when a held-out split exists) an evaluation
/// report. Nothing is written before the configuration and data load.
pub fn cmd_train(g: &GlobalArgs, resume: Option<&Path>) -> Result<()> {
    let (cfg, mut trainer) = match resume {
        Some(path) => {
            let ck = io::load_checkpoint(path)?;
            let cfg = resolve(g, ck.config.clone())?;
            cfg.validate()?;
            let optimizer = ck
                .optimizer
                .ok_or_else(|| Error::Config(format!("{} holds no optimizer state", path.display())))?;
            let t = Trainer::resume(ck.model, optimizer, cfg.train_config(), ck.epoch, ck.history)?;
            (cfg, t)
        }
        None => {
            let cfg = load_config(g)?;
            cfg.validate()?;
            let topo = io::resolve_topology(&cfg.data.topology)?;
            (cfg.clone(), experiment::new_trainer(&cfg, &topo)?)
        }
    };
    let data = experiment::prepare(&cfg)?;
    if data.topology != *trainer.model.topology() {
        return Err(Error::TopologyMismatch("checkpoint and dataset use different skeletons".into()));
    }
    let samples = data.train_samples()?;

    let out = cfg.output.clone();
    create_dir(&out)?;
    experiment::write_resolved_config(&cfg, &out)?;
    let mut log = String::from(report::EPOCH_LOG_HEADER);
    log.push('\n');
    for h in &trainer.history {
        log.push_str(&report::epoch_log_line(h));
        log.push('\n');
    }
    println!(
        "training {} windows of {} frames from {} sequences, epochs {}..{}",
        samples.len(),
        cfg.train.window,
        data.train.len(),
        trainer.epoch,
        cfg.train.epochs
    );
    let mut failure = None;
    trainer.train(&samples, |t, s| {
        println!(
            "epoch {:>4}  lr {:.1e}  loss {:.6}  position {:.6}  motion {:.6}",
            s.epoch, s.lr, s.loss.total, s.loss.position, s.loss.motion
        );
        log.push_str(&report::epoch_log_line(s));
        log.push('\n');
        if cfg.checkpoint_every > 0 && t.epoch % cfg.checkpoint_every == 0 && t.epoch < cfg.train.epochs && failure.is_none() {
            let path = out.join(epoch_checkpoint_name(t.epoch));
            if let Err(e) = io::save_checkpoint(&path, &snapshot(&cfg, t)) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    report::write(&out, EPOCH_LOG_FILE, &log)?;
    let digest = io::save_checkpoint(&out.join(CHECKPOINT_FILE), &snapshot(&cfg, &trainer))?;
    report::write(&out, "checkpoint.sha256", &format!("{digest}  {CHECKPOINT_FILE}\n"))?;
    println!("checkpoint {} sha256 {digest}", out.join(CHECKPOINT_FILE).display());

    if !data.test.is_empty() {
        let r = experiment::evaluate(&trainer.model, &cfg, &data)?;
        print!("{}", report::format_report(&r));
        report::write_eval_report(&out, &r)?;
    }
    Ok(())
}

/// Evaluates a checkpoint on a dataset directory or its own held-out split.
pub fn cmd_eval(g: &GlobalArgs, checkpoint: &Path, data: Option<&Path>) -> Result<EvalReport> {
    let ck = io::load_checkpoint(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(out) = &g.output {
        cfg.output.clone_from(out);
    }
    let topology = ck.model.topology().clone();
    let prepared = match data {
        Some(dir) => Prepared {
            test: io::load_dataset_dir(dir, &topology)?,
            train: Vec::new(),
            normalizer: cfg.data.normalizer,
            topology,
        },
        None => {
            let p = experiment::prepare(&cfg)?;
            if p.topology != topology {
                return Err(Error::TopologyMismatch("checkpoint and dataset use different skeletons".into()));
            }
            p
        }
    };
    if prepared.test.is_empty() {
        return Err(Error::Config("no evaluation sequences".into()));
    }
    let r = experiment::evaluate(&ck.model, &cfg, &prepared)?;
    print!("{}", report::format_report(&r));
    create_dir(&cfg.output)?;
    experiment::write_resolved_config(&cfg, &cfg.output)?;
    report::write_eval_report(&cfg.output, &r)?;
    Ok(r)
}

pub fn cmd_infer(checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    let ck = io::load_checkpoint(checkpoint)?;
    let file = io::load_sequence(input)?;
    let topo = ck.model.topology();
    if file.header.dims != 2 {
        return Err(Error::SchemaMismatch {
            path: input.to_path_buf(),
            msg: format!("expected 2D coordinates, found {}D", file.header.dims),
        });
    }
    if file.header.joints != topo.num_joints() {
        return Err(Error::TopologyMismatch(format!(
            "{} has {} joints, the model expects {}",
            input.display(),
            file.header.joints,
            topo.num_joints()
        )));
    }
    let pose = experiment::predict_sequence(&ck.model, &ck.config, &ck.config.data.normalizer, &file.pose)?;
    let result = SequenceFile::new(pose, file.header.fps, file.header.action.clone(), &file.header.topology);
    io::save_sequence(out, &result)?;
    println!("wrote {} frames to {}", result.header.frames, out.display());
    Ok(())
}

pub fn cmd_toy_pendulum(g: &GlobalArgs, seed: u64) -> Result<()> {
    let (traces, rows) = experiment::pendulum(seed)?;
    let mut out = g.output.clone().unwrap_or_else(|| PathBuf::from("runs/pendulum"));
    if out.as_os_str().is_empty() {
        out = PathBuf::from(".");
    }
    create_dir(&out)?;
    println!("trace  mean_l1        motion_loss");
    for r in &rows {
        println!("{:<5}  {:.12}  {:.9}", r.trace, r.mean_l1, r.motion_loss);
    }
    report::write(&out, "pendulum.csv", &report::pendulum_csv(&rows))?;
    report::write(&out, "pendulum_traces.csv", &report::pendulum_traces_csv(&traces))
}

/// Built-in sweeps.
pub fn sweep_preset(name: &str) -> Result<Vec<Variant>> {
    let text = match name {
        "intervals" => "none: loss.intervals=[]\ntau2: loss.intervals=[2]\ntau12: loss.intervals=[12]\n",
        "operators" => concat!(
            "position_only: loss.lambda=0\n",
            "subtraction: loss.operator=\"subtraction\"\n",
            "inner_product: loss.operator=\"inner_product\"\n",
            "cross_product: loss.operator=\"cross_product\"\n",
        ),
        "lambda" => "lambda0: loss.lambda=0\nlambda1: loss.lambda=1\n",
        "pairs" => concat!(
            "pairs0: model.strided=[]\n",
            "pairs1: model.strided=[2]\n",
            "pairs2: model.strided=[2,4]\n",
            "pairs4: model.strided=[2,4,6,8]\n",
        ),
        _ => {
            return Err(Error::Config(format!(
                "unknown sweep preset `{name}` (expected intervals, operators, lambda or pairs)"
            )))
        }
    };
    experiment::parse_sweep(text)
}

pub fn cmd_ablate(g: &GlobalArgs, sweep: Option<&Path>, preset: Option<&str>) -> Result<()> {
    let variants = match (sweep, preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            experiment::parse_sweep(&text)?
        }
        (None, Some(name)) => sweep_preset(name)?,
        (None, None) => return Err(Error::Config("ablate needs --sweep or --sweep-preset".into())),
    };
    let cfg = load_config(g)?;
    cfg.validate()?;
    let rows = experiment::ablate(&cfg, &variants, |l| println!("{l}"))?;
    print!("{}", report::ablation_table(&rows));
    create_dir(&cfg.output)?;
    experiment::write_resolved_config(&cfg, &cfg.output)?;
    report::write(&cfg.output, "ablation.csv", &report::ablation_csv(&rows))
}

pub fn cmd_noise_curve(g: &GlobalArgs, sigmas: &[f64]) -> Result<()> {
    let cfg = load_config(g)?;
    cfg.validate()?;
    if cfg.data.train_dir.is_some() {
        return Err(Error::Config("noise-curve runs on synthetic data; unset data.train_dir".into()));
    }
    let rows = experiment::noise_curve(&cfg, sigmas, |l| println!("{l}"))?;
    let xs: Vec<f64> = rows.iter().map(|r| r.mean_2d_error).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mpjpe_mm).collect();
    let r = experiment::pearson(&xs, &ys);
    println!("pearson(mean_2d_error, mpjpe_mm) = {r:.6}");
    create_dir(&cfg.output)?;
    experiment::write_resolved_config(&cfg, &cfg.output)?;
    report::write(&cfg.output, "noise_curve.csv", &report::noise_csv(&rows))?;
    report::write(&cfg.output, "noise_curve.txt", &format!("pearson = {r}\n"))
}

pub fn cmd_gradcheck(seeds: u64, inject_fault: Option<f64>) -> Result<()> {
    let opts = GradCheckOptions::default();
    let mut failed = Vec::new();
    println!("{:<24} {:>6} {:>14} {:>8} {:>8}", "check", "seeds", "max_rel_error", "skipped", "status");
    for &name in gradsuite::CASES {
        let (mut worst, mut skipped, mut ok) = (0.0f64, 0, true);
        for seed in 0..seeds {
            let r = gradsuite::run_case(name, seed, &opts)?;
            worst = worst.max(r.max_rel_error());
            skipped += r.inputs.iter().map(|i| i.skipped_kinks).sum::<usize>();
            ok &= r.passed();
        }
        println!("{name:<24} {seeds:>6} {worst:>14.3e} {skipped:>8} {:>8}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(name.to_string());
        }
    }
    if let Some(err) = inject_fault {
        let r = gradsuite::run_fault_injected(0, err, &opts)?;
        let ok = r.passed();
        println!(
            "{:<24} {:>6} {:>14.3e} {:>8} {:>8}",
            "tiny_ugcn_fault",
            1,
            r.max_rel_error(),
            0,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push("tiny_ugcn_fault".into());
        }
    }
    if failed.is_empty() {
        println!("all gradient checks passed (tolerance {:e})", opts.tol);
        Ok(())
    } else {
        Err(Error::GradCheckFailed(failed.join(", ")))
    }
}
