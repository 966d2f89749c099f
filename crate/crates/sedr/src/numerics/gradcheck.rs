//! Central-difference gradient checking against the tape's reverse pass.

use super::param::Param;
use super::tape::{Tape, TensorId};
use crate::error::{Result, SedrError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Outcome of a gradient check over sampled coordinates.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Relative error with a small absolute floor so near-zero gradients do not
/// blow up the ratio.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Compare the tape gradient of a scalar function against central finite
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` on a sampled coordinate subset.
///
/// `build` must construct the function on the supplied tape and return the
/// scalar output plus one leaf id per entry of `params`, in order. The
/// function must be deterministic: two forward passes are compared bitwise
/// and a difference is reported as a contract violation. `eps` must lie in
/// `[1e-6, 1e-3]`.
///
/// Sampling is stratified: every parameter gets at least one coordinate, so
/// `samples` is a lower bound on the total when `samples >= params.len()`.
pub fn grad_check<F>(
    params: &mut [Param],
    build: F,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Param], &mut Tape<f64>) -> Result<(TensorId, Vec<TensorId>)>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(SedrError::Contract(format!(
            "grad_check: eps {eps} outside [1e-6, 1e-3]"
        )));
    }
    if params.is_empty() {
        return Err(SedrError::Contract("grad_check: no parameters".into()));
    }
    if samples == 0 {
        return Err(SedrError::Contract("grad_check: samples must be > 0".into()));
    }

    let eval = |params: &[Param]| -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, _) = build(params, &mut tape)?;
        let (r, c) = tape.shape(loss);
        if (r, c) != (1, 1) {
            return Err(SedrError::Contract(format!(
                "grad_check: function output must be scalar, got {r}x{c}"
            )));
        }
        Ok(tape.scalar_value(loss))
    };

    // Determinism check: identical inputs must give bit-identical outputs.
    let f0 = eval(params)?;
    let f1 = eval(params)?;
    if f0.to_bits() != f1.to_bits() {
        return Err(SedrError::Contract(
            "grad_check: function is not deterministic (two forward passes differ)".into(),
        ));
    }

    // Analytic gradients from one reverse pass.
    let mut tape = Tape::new();
    let (loss, leaves) = build(params, &mut tape)?;
    if leaves.len() != params.len() {
        return Err(SedrError::Contract(format!(
            "grad_check: build returned {} leaves for {} params",
            leaves.len(),
            params.len()
        )));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(params.iter())
        .map(|(id, p)| {
            tape.grad(*id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    // Stratified coordinate sampling: at least one per parameter group.
    let per_group = samples.div_ceil(params.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };

    for p_idx in 0..params.len() {
        let numel = params[p_idx].numel();
        let take = per_group.min(numel);
        let picked = rand::seq::index::sample(&mut rng, numel, take);
        for i in picked.iter() {
            let orig = params[p_idx].data[i];
            params[p_idx].data[i] = orig + eps;
            let f_plus = eval(params)?;
            params[p_idx].data[i] = orig - eps;
            let f_minus = eval(params)?;
            params[p_idx].data[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let err = rel_error(analytic[p_idx][i], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = params[p_idx].name.clone();
                report.worst_index = i;
                report.worst_analytic = analytic[p_idx][i];
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
