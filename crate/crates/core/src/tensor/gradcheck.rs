//! Central-difference verification of tape gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Maximum relative error for a coordinate whose absolute error exceeds `abs_floor`.
    pub tolerance: f64,
    pub abs_floor: f64,
    /// Central-difference step.
    pub step: f64,
    /// Inputs with more elements than this are checked on a seeded random
    /// subset of coordinates.
    pub max_coords_per_input: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            abs_floor: 1e-6,
            step: 1e-4,
            max_coords_per_input: 1000,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op_name: String,
    /// Largest relative error among coordinates above the absolute floor.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
    pub tolerance: f64,
    pub checked: usize,
    /// Coordinate with the largest relative error, as "input i, element j".
    pub worst: Option<String>,
    /// Set when the check could not run (e.g. a non-finite forward value).
    pub failure: Option<String>,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {} rel={:.3e} abs={:.3e} tol={:.0e} coords={}",
            self.op_name,
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.max_abs_err,
            self.tolerance,
            self.checked
        )?;
        if let Some(w) = &self.worst {
            if !self.passed {
                write!(f, " worst=[{w}]")?;
            }
        }
        if let Some(e) = &self.failure {
            write!(f, " error={e}")?;
        }
        Ok(())
    }
}

/// Reduces an op's output to a scalar with fixed random weights so that
/// every output element contributes to the checked gradient.
fn project<'t>(out: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    let w = out.tape().constant(weights.clone());
    out.mul(w)?.sum()
}

fn eval<F>(f: &F, inputs: &[Tensor], weights: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let s = project(out, weights)?;
    let v = s.value().item();
    Ok(v)
}

/// Compares tape gradients of `f` against central differences for every
/// input (or a sampled subset of coordinates of large inputs).
pub fn grad_check<F>(op_name: &str, inputs: &[Tensor], f: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut report = GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        passed: false,
        tolerance: opts.tolerance,
        checked: 0,
        worst: None,
        failure: None,
    };
    match run(&f, inputs, opts, &mut report) {
        Ok(()) => report.passed = report.max_rel_err <= opts.tolerance,
        Err(e) => {
            report.failure = Some(e.to_string());
            report.passed = false;
        }
    }
    report
}

fn run<F>(f: &F, inputs: &[Tensor], opts: &GradCheckOptions, report: &mut GradCheckReport) -> Result<()>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let out_shape = out.shape();
    let weights = Tensor::from_fn(out_shape, |_| rng.random_range(-1.0..1.0));
    let scalar = project(out, &weights)?;
    let grads = tape.backward(scalar)?;

    let mut worst_rel = -1.0;
    for (i, (input, var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(*var);
        let coords: Vec<usize> = if input.len() > opts.max_coords_per_input {
            let mut c = sample(&mut rng, input.len(), opts.max_coords_per_input).into_vec();
            c.sort_unstable();
            c
        } else {
            (0..input.len()).collect()
        };
        let mut probe = inputs.to_vec();
        for j in coords {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + opts.step;
            let fp = eval(f, &probe, &weights)?;
            probe[i].data_mut()[j] = orig - opts.step;
            let fm = eval(f, &probe, &weights)?;
            probe[i].data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic.data()[j];
            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if abs <= opts.abs_floor || scale == 0.0 { 0.0 } else { abs / scale };
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > worst_rel {
                worst_rel = rel;
                report.max_rel_err = rel;
                report.worst = Some(format!("input {i}, element {j}: tape {a:.6e} vs numeric {numeric:.6e}"));
            }
        }
    }
    Ok(())
}
