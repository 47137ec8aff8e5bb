//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding compare on an absolute scale.
    pub floor: f64,
    /// Elements probed per input; `None` probes all of them.
    pub max_probes: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
            max_probes: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_element: usize,
    pub probes: usize,
}

/// Compares analytic gradients of `f` with central differences for every
/// input. `f` must build a scalar loss from the given leaves.
pub fn check_gradients<F>(inputs: &[Tensor], opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t)).collect();
        let out = f(&mut tape, &vars)?;
        tape.scalar(out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_element: 0,
        probes: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_default();
        let n = inputs[i].numel();
        let probes: Vec<usize> = match opts.max_probes {
            Some(m) if m < n => {
                let mut idx = sample(&mut rng, n, m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        for e in probes {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + opts.step;
            let up = eval(&work)?;
            work[i].data_mut()[e] = orig - opts.step;
            let down = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.get(e).copied().unwrap_or(0.0);
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = (a - numeric).abs() / denom;
            report.probes += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = i;
                report.worst_element = e;
            }
        }
    }
    Ok(report)
}
