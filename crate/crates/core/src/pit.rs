//! Permutation-invariant baseline: K-output forward pass, permutation loss
//! and oracle output selection.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig};
use crate::signal::{log_mse_loss, log_mse_with_grad, si_sdr, Waveform};

/// Largest output count for which the exhaustive permutation search runs.
pub const MAX_PIT_OUTPUTS: usize = 6;

/// Runs the unconditioned network; returns one waveform per output channel.
pub fn pit_forward(model: &Model, y: &Waveform) -> Result<Vec<Waveform>> {
    if !matches!(model.config(), ModelConfig::Pit(_)) {
        return Err(Error::invalid(format!(
            "expected a PIT model, got {}",
            model.config().kind_name()
        )));
    }
    crate::selector::check_rate(model, y)?;
    let outs = model.run(model.params(), y.samples(), None, None)?;
    outs.into_iter()
        .map(|o| Waveform::new(o.into_iter().map(|v| v as f32 as f64).collect(), y.sample_rate()))
        .collect()
}

fn check_lists<A: AsRef<[f64]>, B: AsRef<[f64]>>(refs: &[A], ests: &[B]) -> Result<usize> {
    let k = refs.len();
    if k != ests.len() {
        return Err(Error::invalid(format!(
            "{k} references but {} estimates",
            ests.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("permutation loss needs at least one output"));
    }
    if k > MAX_PIT_OUTPUTS {
        return Err(Error::UnsupportedOutputCount {
            got: k,
            max: MAX_PIT_OUTPUTS,
        });
    }
    Ok(k)
}

/// Pairwise log-MSE, `m[r][e] = log_mse(ref_r, est_e)`.
fn pair_losses<A: AsRef<[f64]>, B: AsRef<[f64]>>(refs: &[A], ests: &[B]) -> Result<Vec<Vec<f64>>> {
    refs.iter()
        .map(|r| ests.iter().map(|e| log_mse_loss(r.as_ref(), e.as_ref())).collect())
        .collect()
}

/// Best assignment: `perm[k]` is the estimate matched to reference `k`.
/// Ties keep the first permutation in lexicographic order.
fn best_permutation(pairs: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let k = pairs.len();
    let mut best = (Vec::new(), f64::INFINITY);
    for perm in (0..k).permutations(k) {
        let total: f64 = perm.iter().enumerate().map(|(r, &e)| pairs[r][e]).sum();
        let loss = total / k as f64;
        if loss < best.1 {
            best = (perm, loss);
        }
    }
    best
}

/// `min_π mean_k log_mse(ref_k, est_π(k))` over all `K!` assignments.
/// References for absent sources are zero signals.
pub fn pit_loss<A: AsRef<[f64]>, B: AsRef<[f64]>>(references: &[A], estimates: &[B]) -> Result<f64> {
    check_lists(references, estimates)?;
    let pairs = pair_losses(references, estimates)?;
    Ok(best_permutation(&pairs).1)
}

/// Loss, gradient with respect to every estimate, and the chosen assignment.
pub fn pit_loss_with_grad<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    references: &[A],
    estimates: &[B],
) -> Result<(f64, Vec<Vec<f64>>, Vec<usize>)> {
    let k = check_lists(references, estimates)?;
    let pairs = pair_losses(references, estimates)?;
    let (perm, loss) = best_permutation(&pairs);
    let mut grads = vec![Vec::new(); k];
    for (r, &e) in perm.iter().enumerate() {
        let (_, g) = log_mse_with_grad(references[r].as_ref(), estimates[e].as_ref())?;
        grads[e] = g.into_iter().map(|v| v / k as f64).collect();
    }
    Ok((loss, grads, perm))
}

/// Index of the output with the highest SI-SDR against `reference`; ties go
/// to the lowest index.
pub fn oracle_select<B: AsRef<[f64]>>(outputs: &[B], reference: &[f64]) -> Result<usize> {
    if outputs.is_empty() {
        return Err(Error::invalid("no outputs to select from"));
    }
    if reference.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroReference);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (k, out) in outputs.iter().enumerate() {
        let score = si_sdr(reference, out.as_ref())?;
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}
