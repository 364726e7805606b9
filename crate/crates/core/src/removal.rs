//! Sound removal: references, subtraction-based removal with a selector and
//! training of a dedicated removal network.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, Model, SelectorConfig};
use crate::scene::SceneSource;
use crate::selector::forward;
use crate::signal::{mix_reference, ClassVector, StemSet, Waveform};
use crate::train::{fit, FitOptions, FitSummary, TrainConfig};

/// `y − Σ_n o_n x_n`. An all-zero `o` returns `y`.
pub fn removal_reference(mixture: &Waveform, stems: &StemSet, o: &ClassVector) -> Result<Waveform> {
    if stems.len() != mixture.len() {
        return Err(Error::invalid(format!(
            "mixture has {} samples, stems have {}",
            mixture.len(),
            stems.len()
        )));
    }
    if o.is_zero() {
        if o.num_classes() != stems.num_classes() {
            return Err(Error::invalid(format!(
                "class vector has {} entries, stems cover {} classes",
                o.num_classes(),
                stems.num_classes()
            )));
        }
        return Ok(mixture.clone());
    }
    mixture.sub(&mix_reference(stems, o)?)
}

/// `y − forward(y, o)`. Because the selector output is rounded to single
/// precision, `forward(y, o) + remove_indirect(y, o)` reproduces any
/// single-precision `y` exactly.
pub fn remove_indirect(selector: &Model, mixture: &Waveform, o: &ClassVector) -> Result<Waveform> {
    if !matches!(selector.config(), ModelConfig::Selector(_)) {
        return Err(Error::invalid(format!(
            "indirect removal needs a selector, got {}",
            selector.config().kind_name()
        )));
    }
    let est = forward(selector, mixture, o)?;
    mixture.sub(&est)
}

/// Estimates `y − Σ_n o_n x_n` with a directly trained removal network.
pub fn remove_direct(model: &Model, mixture: &Waveform, o: &ClassVector) -> Result<Waveform> {
    if !matches!(model.config(), ModelConfig::RemovalDirect(_)) {
        return Err(Error::invalid(format!(
            "direct removal needs a removal-direct model, got {}",
            model.config().kind_name()
        )));
    }
    forward(model, mixture, o)
}

/// Trains the direct removal network; same contract as [`fit`].
pub fn train_removal_direct(
    train: &dyn SceneSource,
    dev: Option<&dyn SceneSource>,
    config: SelectorConfig,
    train_config: &TrainConfig,
    out_dir: &Path,
    options: &FitOptions,
) -> Result<FitSummary> {
    fit(
        train,
        dev,
        ModelConfig::RemovalDirect(config),
        train_config,
        out_dir,
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stems() -> StemSet {
        StemSet::new(vec![
            Waveform::new(vec![1.0, 2.0, 0.0], 8000).unwrap(),
            Waveform::new(vec![0.5, 0.0, -1.0], 8000).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn zero_selection_leaves_mixture() {
        let y = Waveform::new(vec![1.6, 2.1, -0.9], 8000).unwrap();
        let r = removal_reference(&y, &stems(), &ClassVector::zeros(2)).unwrap();
        assert_eq!(r, y);
    }

    #[test]
    fn one_hot_subtracts_one_stem() {
        let y = Waveform::new(vec![1.6, 2.1, -0.9], 8000).unwrap();
        let r = removal_reference(&y, &stems(), &ClassVector::one_hot(2, 1).unwrap()).unwrap();
        assert_eq!(r.samples(), &[1.6 - 0.5, 2.1 - 0.0, -0.9 + 1.0]);
    }

    #[test]
    fn length_mismatch_is_invalid() {
        let y = Waveform::new(vec![1.0, 2.0], 8000).unwrap();
        assert!(removal_reference(&y, &stems(), &ClassVector::one_hot(2, 0).unwrap()).is_err());
    }
}
