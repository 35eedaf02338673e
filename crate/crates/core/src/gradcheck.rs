//! Central finite-difference checking of reverse-mode gradients.
//!
//! Functions built from ReLU or `|x|` are only piecewise smooth, so a probe
//! `x ± h` may land on the other side of a kink and produce a meaningless
//! difference quotient. The checker runs every probe with kink tracking on;
//! when a probe's branch pattern differs from the base point it retries with
//! a step ten times smaller (at most three times) and otherwise skips the
//! coordinate, counting it in the report.

use alloc::vec::Vec;

use crate::array::Array;
use crate::error::Result;
use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Relative errors are computed against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per input (evenly spaced).
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-3,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InputReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().fold(0.0, |m, r| m.max(r.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        let err = self.max_rel_error();
        err.is_finite() && err < self.tol && self.inputs.iter().all(|r| r.checked > 0)
    }
}

/// Checks `d f(x) / d x` for a single input.
pub fn grad_check<F>(f: F, x: &Array, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let opts = GradCheckOptions {
        step,
        tol,
        ..Default::default()
    };
    grad_check_many(|g, vars| f(g, vars[0]), core::slice::from_ref(x), &opts)
}

/// Checks the gradient of a scalar function with respect to each of `inputs`.
pub fn grad_check_many<F>(f: F, inputs: &[Array], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Array]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        g.track_kinks(true);
        let vars: Vec<Var> = xs.iter().map(|a| g.constant(a.clone())).collect();
        let y = f(&mut g, &vars)?;
        Ok((g.value(y).item(), g.kink_signature()))
    };

    let mut g = Graph::new();
    g.track_kinks(true);
    let vars: Vec<Var> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
    let y = f(&mut g, &vars)?;
    let base_sig = g.kink_signature();
    g.backward(y)?;
    let analytic: Vec<Array> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut work: Vec<Array> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (which, grad) in analytic.iter().enumerate() {
        let n = inputs[which].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut rep = InputReport::default();
        for &i in &coords {
            let orig = inputs[which].data()[i];
            let mut h = opts.step;
            let mut numeric = None;
            for _ in 0..4 {
                work[which].data_mut()[i] = orig + h;
                let (fp, sp) = eval(&work)?;
                work[which].data_mut()[i] = orig - h;
                let (fm, sm) = eval(&work)?;
                if sp == base_sig && sm == base_sig {
                    numeric = Some((fp - fm) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            work[which].data_mut()[i] = orig;
            let Some(num) = numeric else {
                rep.skipped_kinks += 1;
                continue;
            };
            let a = grad.data()[i];
            let denom = a.abs().max(num.abs()).max(opts.floor);
            let err = (a - num).abs() / denom;
            // NaN must register as a failure.
            if !(err <= rep.max_rel_error) {
                rep.max_rel_error = err;
                rep.worst = i;
            }
            rep.checked += 1;
        }
        reports.push(rep);
    }
    Ok(GradCheckReport {
        inputs: reports,
        tol: opts.tol,
    })
}
