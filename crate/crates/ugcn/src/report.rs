//! Text, CSV and JSON renderings of experiment results.

use std::fmt::Write as _;
use std::path::Path;

use ugcn_core::metrics::{EvalReport, MetricRow};
use ugcn_core::synth::PendulumTraces;
use ugcn_core::train::EpochStats;

use crate::error::{Error, Result};
use crate::experiment::{AblationRow, NoiseRow, PendulumRow};

/// `key = value` lines for the pooled metrics, then one block per action.
pub fn format_report(r: &EvalReport) -> String {
    let mut out = String::new();
    let row = |out: &mut String, m: &MetricRow| {
        for (k, v) in MetricRow::KEYS.iter().zip(m.values()) {
            writeln!(out, "{k} = {v:.6}").expect("writing to a string");
        }
    };
    row(&mut out, &r.overall);
    if r.degenerate_frames > 0 {
        writeln!(out, "degenerate_frames = {}", r.degenerate_frames).expect("writing to a string");
    }
    for (action, m) in &r.per_action {
        writeln!(out, "\n[{action}]").expect("writing to a string");
        row(&mut out, m);
    }
    out
}

/// One CSV row per scope: `all` first, then each action.
pub fn report_csv(r: &EvalReport) -> String {
    let mut out = format!("scope,{}\n", MetricRow::KEYS.join(","));
    let mut line = |scope: &str, m: &MetricRow| {
        let vals: Vec<String> = m.values().iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{scope},{}", vals.join(",")).expect("writing to a string");
    };
    line("all", &r.overall);
    for (action, m) in &r.per_action {
        line(action, m);
    }
    out
}

pub fn report_json(r: &EvalReport) -> String {
    serde_json::to_string_pretty(r).expect("report is serializable")
}

/// Writes `report.txt`, `report.csv` and `report.json` into `dir`.
pub fn write_eval_report(dir: &Path, r: &EvalReport) -> Result<()> {
    write(dir, "report.txt", &format_report(r))?;
    write(dir, "report.csv", &report_csv(r))?;
    write(dir, "report.json", &report_json(r))
}

pub const EPOCH_LOG_HEADER: &str = "epoch,lr,steps,loss_total,loss_position,loss_motion";

pub fn epoch_log_line(s: &EpochStats) -> String {
    format!(
        "{},{},{},{},{},{}",
        s.epoch, s.lr, s.steps, s.loss.total, s.loss.position, s.loss.motion
    )
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("variant,seed,{},final_loss\n", MetricRow::KEYS.join(","));
    for r in rows {
        let vals: Vec<String> = r.report.overall.values().iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{},{},{},{}", r.label, r.seed, vals.join(","), r.final_loss).expect("writing to a string");
    }
    out
}

/// Fixed-width table of the ablation rows for the terminal.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}  {:>10}  {:>10}  {:>10}\n", "variant", "MPJPE", "P-MPJPE", "MPJVE");
    for r in rows {
        let m = &r.report.overall;
        writeln!(
            out,
            "{:<width$}  {:>10.3}  {:>10.3}  {:>10.3}",
            r.label, m.mpjpe_mm, m.p_mpjpe_mm, m.mpjve_mm
        )
        .expect("writing to a string");
    }
    out
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut out = String::from("sigma,mean_2d_error,mpjpe_mm\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.sigma, r.mean_2d_error, r.mpjpe_mm).expect("writing to a string");
    }
    out
}

pub fn pendulum_csv(rows: &[PendulumRow]) -> String {
    let mut out = String::from("trace,mean_l1,motion_loss\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.trace, r.mean_l1, r.motion_loss).expect("writing to a string");
    }
    out
}

/// Per-frame coordinates of the ground truth and the three estimates.
pub fn pendulum_traces_csv(p: &PendulumTraces) -> String {
    let mut out = String::from("t,gt,a,b,c\n");
    for t in 0..p.gt.frames() {
        let v = |s: &ugcn_core::PoseSequence| s.frame(t)[0];
        writeln!(out, "{t},{},{},{},{}", v(&p.gt), v(&p.a), v(&p.b), v(&p.c)).expect("writing to a string");
    }
    out
}

pub fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_has_exact_keys() {
        let csv = report_csv(&EvalReport::default());
        assert_eq!(csv.lines().next().unwrap(), "scope,mpjpe_mm,p_mpjpe_mm,mpjve_mm,pck_at_150,auc");
    }
}
