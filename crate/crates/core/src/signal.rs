//! Waveforms, class vectors and the losses/metrics shared by every other module.
//!
//! All metric arithmetic is done in `f64`. Losses come in two flavours: the plain
//! value (what gets reported) and a `*_with_grad` variant returning the gradient
//! with respect to the estimate, which the trainer feeds into backpropagation.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Default sample rate used throughout the pipeline (Hz).
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Floor added inside every logarithm so perfect reconstructions and zero
/// targets stay finite.
pub const LOG_EPS: f64 = 1e-8;

/// SI-SDR values are clamped to `[-SI_SDR_CAP_DB, SI_SDR_CAP_DB]`.
pub const SI_SDR_CAP_DB: f64 = 100.0;

const DB_PER_LN: f64 = 10.0 / std::f64::consts::LN_10;

/// Mono time-domain signal at a fixed sample rate.
///
/// Every sample is finite and the signal holds at least one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("waveform must hold at least one sample"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a waveform from samples already known to be finite.
    pub(crate) fn from_trusted(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(!samples.is_empty() && sample_rate > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::from_trusted(vec![0.0; len.max(1)], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }

    /// Samplewise `self - other`.
    pub fn sub(&self, other: &Waveform) -> Result<Waveform> {
        check_same_shape(self, other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a - b)
            .collect();
        Waveform::new(samples, self.sample_rate)
    }

    /// Samplewise `self + other`.
    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        check_same_shape(self, other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Waveform::new(samples, self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Result<Waveform> {
        Waveform::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    /// Copy of `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Waveform> {
        if len == 0 || start + len > self.samples.len() {
            return Err(Error::invalid(format!(
                "slice [{start}, {}) outside waveform of length {}",
                start + len,
                self.samples.len()
            )));
        }
        Ok(Self::from_trusted(
            self.samples[start..start + len].to_vec(),
            self.sample_rate,
        ))
    }

    /// Rounds every sample to the nearest 32-bit float, the precision of every
    /// file the pipeline writes.
    pub fn to_f32_precision(&self) -> Waveform {
        Self::from_trusted(
            self.samples.iter().map(|&s| s as f32 as f64).collect(),
            self.sample_rate,
        )
    }
}

impl Deref for Waveform {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.samples
    }
}

impl AsRef<[f64]> for Waveform {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

fn check_same_shape(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::invalid(format!(
            "sample rate mismatch: {} vs {}",
            a.sample_rate, b.sample_rate
        )));
    }
    Ok(())
}

/// Binary target-class indicator `o` over `N` classes (one-hot or n-hot).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClassVector {
    entries: Vec<bool>,
}

impl ClassVector {
    /// Builds a vector from `{0, 1}` entries.
    pub fn from_entries(entries: &[u8]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("class vector must have at least one entry"));
        }
        let entries = entries
            .iter()
            .enumerate()
            .map(|(i, &e)| match e {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::invalid(format!(
                    "class vector entry {i} is {other}, expected 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    /// n-hot vector with ones at `classes`. Indices are zero-based.
    pub fn from_indices(num_classes: usize, classes: &[usize]) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("number of classes must be positive"));
        }
        let mut entries = vec![false; num_classes];
        for &c in classes {
            if c >= num_classes {
                return Err(Error::invalid(format!(
                    "class index {c} out of range 0..{num_classes}"
                )));
            }
            entries[c] = true;
        }
        Ok(Self { entries })
    }

    pub fn one_hot(num_classes: usize, class: usize) -> Result<Self> {
        Self::from_indices(num_classes, &[class])
    }

    pub fn zeros(num_classes: usize) -> Self {
        Self {
            entries: vec![false; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, class: usize) -> bool {
        self.entries.get(class).copied().unwrap_or(false)
    }

    /// Selected class indices in increasing order.
    pub fn support(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, &e)| e.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }

    pub fn is_zero(&self) -> bool {
        self.count() == 0
    }

    /// Rejects the all-zero vector, which is not a valid selection request.
    pub fn require_selection(&self) -> Result<()> {
        if self.is_zero() {
            Err(Error::invalid(
                "target-class vector selects no class; at least one entry must be 1",
            ))
        } else {
            Ok(())
        }
    }

    /// Entries as `0.0` / `1.0`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.entries.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect()
    }

    /// Elementwise sum of two vectors with disjoint support.
    pub fn disjoint_union(&self, other: &ClassVector) -> Result<ClassVector> {
        if self.num_classes() != other.num_classes() {
            return Err(Error::invalid("class vectors differ in length"));
        }
        if self.entries.iter().zip(&other.entries).any(|(a, b)| *a && *b) {
            return Err(Error::invalid("class vectors overlap"));
        }
        Ok(ClassVector {
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }
}

/// Per-class reference stems `x_n` of one mixture.
///
/// Stems of classes absent from the mixture are exact zero signals.
#[derive(Clone, Debug, PartialEq)]
pub struct StemSet {
    stems: Vec<Waveform>,
}

impl StemSet {
    pub fn new(stems: Vec<Waveform>) -> Result<Self> {
        let first = stems
            .first()
            .ok_or_else(|| Error::invalid("stem set needs at least one class"))?;
        for (n, s) in stems.iter().enumerate().skip(1) {
            if s.len() != first.len() || s.sample_rate() != first.sample_rate() {
                return Err(Error::invalid(format!(
                    "stem {n} has shape ({}, {} Hz), expected ({}, {} Hz)",
                    s.len(),
                    s.sample_rate(),
                    first.len(),
                    first.sample_rate()
                )));
            }
        }
        Ok(Self { stems })
    }

    pub fn num_classes(&self) -> usize {
        self.stems.len()
    }

    pub fn len(&self) -> usize {
        self.stems[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.stems[0].sample_rate()
    }

    pub fn stem(&self, class: usize) -> &Waveform {
        &self.stems[class]
    }

    pub fn stems(&self) -> &[Waveform] {
        &self.stems
    }

    /// Classes with a nonzero stem.
    pub fn active_classes(&self) -> Vec<usize> {
        (0..self.stems.len())
            .filter(|&n| !self.stems[n].is_silent())
            .collect()
    }

    /// Restricts every stem to `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<StemSet> {
        let stems = self
            .stems
            .iter()
            .map(|s| s.slice(start, len))
            .collect::<Result<Vec<_>>>()?;
        StemSet::new(stems)
    }
}

/// Reference for a selection request: `x = Σ_n o_n x_n`.
pub fn mix_reference(stems: &StemSet, o: &ClassVector) -> Result<Waveform> {
    if o.num_classes() != stems.num_classes() {
        return Err(Error::invalid(format!(
            "class vector has {} entries but there are {} stems",
            o.num_classes(),
            stems.num_classes()
        )));
    }
    let mut out = vec![0.0; stems.len()];
    for n in o.support() {
        for (acc, s) in out.iter_mut().zip(stems.stem(n).iter()) {
            *acc += s;
        }
    }
    Ok(Waveform::from_trusted(out, stems.sample_rate()))
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn error_energy(x: &[f64], x_hat: &[f64]) -> f64 {
    x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_len(x: &[f64], x_hat: &[f64]) -> Result<()> {
    if x.len() != x_hat.len() {
        return Err(Error::invalid(format!(
            "length mismatch: reference {} vs estimate {}",
            x.len(),
            x_hat.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("empty signals"));
    }
    Ok(())
}

/// Scale-dependent SNR in dB, `10 log10(‖x‖² / (‖x − x̂‖² + ε))`. Higher is better.
pub fn snr_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_len(x, x_hat)?;
    let ref_energy = energy(x);
    if ref_energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(10.0 * ref_energy.log10() + snr_objective_reduced(x, x_hat)?)
}

/// The parameter-dependent part of [`snr_loss`]: `−10 log10(‖x − x̂‖² + ε)`.
///
/// Differs from `snr_loss` by exactly `10 log10(‖x‖²)`, and is defined for
/// zero references too.
pub fn snr_objective_reduced(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_len(x, x_hat)?;
    Ok(-10.0 * (error_energy(x, x_hat) + LOG_EPS).log10())
}

/// Negative SNR (a quantity to minimise) and its gradient with respect to `x_hat`.
pub fn neg_snr_with_grad(x: &[f64], x_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
    let value = -snr_loss(x, x_hat)?;
    let denom = error_energy(x, x_hat) + LOG_EPS;
    let scale = 2.0 * DB_PER_LN / denom;
    let grad = x.iter().zip(x_hat).map(|(a, b)| scale * (b - a)).collect();
    Ok((value, grad))
}

/// `10 log10(mean((x − x̂)²) + ε)`, finite for zero targets. Lower is better.
pub fn log_mse_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_len(x, x_hat)?;
    let mse = error_energy(x, x_hat) / x.len() as f64;
    Ok(10.0 * (mse + LOG_EPS).log10())
}

/// [`log_mse_loss`] and its gradient with respect to `x_hat`.
pub fn log_mse_with_grad(x: &[f64], x_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
    let value = log_mse_loss(x, x_hat)?;
    let t = x.len() as f64;
    let mse = error_energy(x, x_hat) / t;
    let scale = 2.0 * DB_PER_LN / (t * (mse + LOG_EPS));
    let grad = x.iter().zip(x_hat).map(|(a, b)| scale * (b - a)).collect();
    Ok((value, grad))
}

/// Scale-invariant SDR in dB, clamped to `±SI_SDR_CAP_DB`.
///
/// The estimate is projected onto the reference; the projection is the
/// target component and the remainder is distortion.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_len(reference, estimate)?;
    let ref_energy = energy(reference);
    if ref_energy == 0.0 {
        return Err(Error::UndefinedMetric(
            "SI-SDR needs a reference with nonzero energy".into(),
        ));
    }
    let alpha = dot(estimate, reference) / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let distortion: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    let value = if distortion == 0.0 {
        if target_energy == 0.0 {
            -SI_SDR_CAP_DB
        } else {
            SI_SDR_CAP_DB
        }
    } else if target_energy == 0.0 {
        -SI_SDR_CAP_DB
    } else {
        10.0 * target_energy.log10() - 10.0 * distortion.log10()
    };
    Ok(value.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// `si_sdr(reference, estimate) − si_sdr(reference, mixture)`.
pub fn sdr_improvement(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(reference, estimate)? - si_sdr(reference, mixture)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wave(s: &[f64]) -> Waveform {
        Waveform::new(s.to_vec(), DEFAULT_SAMPLE_RATE).unwrap()
    }

    fn stems3() -> StemSet {
        StemSet::new(vec![
            wave(&[1.0, 2.0, 3.0]),
            wave(&[0.5, -0.25, 0.125]),
            wave(&[-1.0, 4.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 8000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], 8000).is_err());
        assert!(Waveform::new(vec![f64::INFINITY], 8000).is_err());
    }

    #[test]
    fn class_vector_validation() {
        assert!(ClassVector::from_entries(&[0, 2, 1]).is_err());
        assert!(ClassVector::from_indices(3, &[3]).is_err());
        let o = ClassVector::from_entries(&[1, 0, 1]).unwrap();
        assert_eq!(o.support(), vec![0, 2]);
        assert!(ClassVector::zeros(4).require_selection().is_err());
    }

    #[test]
    fn one_hot_reference_is_the_stem() {
        let stems = stems3();
        let o = ClassVector::one_hot(3, 1).unwrap();
        assert_eq!(mix_reference(&stems, &o).unwrap(), *stems.stem(1));
    }

    #[test]
    fn two_hot_reference_is_the_sum() {
        let stems = stems3();
        let o = ClassVector::from_entries(&[1, 0, 1]).unwrap();
        let x = mix_reference(&stems, &o).unwrap();
        assert_eq!(x.samples(), &[0.0, 6.0, 3.0]);
    }

    #[test]
    fn reference_dimension_mismatch() {
        let o = ClassVector::one_hot(4, 0).unwrap();
        assert!(matches!(
            mix_reference(&stems3(), &o),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn snr_perfect_reconstruction_hits_eps_floor() {
        let x = [1.0, 0.0, 0.0, 0.0];
        assert!((snr_loss(&x, &x).unwrap() - 80.0).abs() < 1e-12);
    }

    #[test]
    fn snr_zero_estimate_is_zero_db() {
        let x = [0.6, 0.8];
        let v = snr_loss(&x, &[0.0, 0.0]).unwrap();
        assert!((v - 10.0 * (1.0f64 / (1.0 + LOG_EPS)).log10()).abs() < 1e-12);
        assert!(v.abs() < 1e-7);
    }

    #[test]
    fn snr_twenty_db() {
        // ‖x‖² = 1 and ‖x − x̂‖² = 0.01 by construction.
        let x = [0.6, 0.8, 0.0];
        let x_hat = [0.6, 0.8, 0.1];
        let v = snr_loss(&x, &x_hat).unwrap();
        let expected = 10.0 * (1.0f64 / (0.01 + LOG_EPS)).log10();
        assert!((v - expected).abs() < 1e-9);
        assert!((v - 20.0).abs() < 1e-5);
    }

    #[test]
    fn snr_rejects_zero_reference() {
        assert!(matches!(
            snr_loss(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroReference)
        ));
        assert!(snr_objective_reduced(&[0.0, 0.0], &[1.0, 0.0]).is_ok());
    }

    #[test]
    fn snr_forms_differ_by_reference_energy() {
        let x = [0.3, -1.2, 0.7, 2.0];
        let x_hat = [0.1, -1.0, 0.9, 1.5];
        let full = snr_loss(&x, &x_hat).unwrap();
        let reduced = snr_objective_reduced(&x, &x_hat).unwrap();
        assert!((full - reduced - 10.0 * energy(&x).log10()).abs() < 1e-12);
    }

    #[test]
    fn snr_unit_energy_reference_equals_reduced_form() {
        let x = [0.5, 0.5, 0.5, -0.5];
        let x_hat = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(
            snr_loss(&x, &x_hat).unwrap(),
            snr_objective_reduced(&x, &x_hat).unwrap()
        );
    }

    #[test]
    fn log_mse_values() {
        let zero = [0.0; 8];
        assert_eq!(log_mse_loss(&zero, &zero).unwrap(), 10.0 * LOG_EPS.log10());
        let ones = [1.0; 8];
        assert!(log_mse_loss(&zero, &ones).unwrap().abs() < 1e-7);
        let small = [0.01; 8];
        let v = log_mse_loss(&zero, &small).unwrap();
        assert!((v - 10.0 * (1e-4f64 + LOG_EPS).log10()).abs() < 1e-9);
        assert!((v + 40.0).abs() < 1e-3);
        assert!(log_mse_loss(&zero, &[0.0; 4]).is_err());
    }

    #[test]
    fn si_sdr_caps() {
        let x = [0.3, -0.2, 0.9, 0.1];
        assert_eq!(si_sdr(&x, &x).unwrap(), SI_SDR_CAP_DB);
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&x, &doubled).unwrap(), SI_SDR_CAP_DB);
        assert_eq!(si_sdr(&x, &[0.0; 4]).unwrap(), -SI_SDR_CAP_DB);
        assert!(matches!(
            si_sdr(&[0.0; 4], &x),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn si_sdr_orthogonal_noise() {
        // reference energy 10, noise energy 1, exactly orthogonal.
        let x = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let n = [0.5, -0.5, 0.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let est: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!((si_sdr(&x, &est).unwrap() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn sdr_improvement_examples() {
        let x = [1.0, 0.5, -0.5, 0.25];
        let y = [0.2, 1.0, 0.3, -0.7];
        assert_eq!(sdr_improvement(&x, &y, &y).unwrap(), 0.0);
        let base = si_sdr(&x, &y).unwrap();
        assert!((sdr_improvement(&x, &x, &y).unwrap() - (SI_SDR_CAP_DB - base)).abs() < 1e-12);
    }

    fn finite_difference(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
        (0..at.len())
            .map(|i| {
                let mut p = at.to_vec();
                let mut m = at.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = energy(a).sqrt().max(energy(b).sqrt()).max(1e-12);
        diff / scale
    }

    fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, len)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mix_reference_is_linear(
            a in signal(16), b in signal(16), c in signal(16), d in signal(16),
            mask in proptest::collection::vec(0u8..3, 4)
        ) {
            let stems = StemSet::new(vec![wave(&a), wave(&b), wave(&c), wave(&d)]).unwrap();
            let left: Vec<usize> = (0..4).filter(|&i| mask[i] == 1).collect();
            let right: Vec<usize> = (0..4).filter(|&i| mask[i] == 2).collect();
            let oa = ClassVector::from_indices(4, &left).unwrap();
            let ob = ClassVector::from_indices(4, &right).unwrap();
            let sum = mix_reference(&stems, &oa).unwrap().add(&mix_reference(&stems, &ob).unwrap()).unwrap();
            let joint = mix_reference(&stems, &oa.disjoint_union(&ob).unwrap()).unwrap();
            for (p, q) in sum.iter().zip(joint.iter()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }

        #[test]
        fn si_sdr_scale_invariant(x in signal(32), e in signal(32), alpha in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            prop_assume!(energy(&x) > 1e-3 && energy(&e) > 1e-3);
            let base = si_sdr(&x, &e).unwrap();
            prop_assume!(base.abs() < SI_SDR_CAP_DB);
            let scaled: Vec<f64> = e.iter().map(|v| v * alpha).collect();
            prop_assert!((si_sdr(&x, &scaled).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn si_sdr_cap_only_for_multiples(x in signal(32), e in signal(32), alpha in 0.01f64..50.0) {
            prop_assume!(energy(&x) > 1e-3);
            let multiple: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            prop_assert_eq!(si_sdr(&x, &multiple).unwrap(), SI_SDR_CAP_DB);
            // a random estimate is almost surely not collinear with x
            prop_assume!(energy(&e) > 1e-3);
            prop_assert!(si_sdr(&x, &e).unwrap() < SI_SDR_CAP_DB);
        }

        #[test]
        fn neg_snr_gradient_matches_finite_differences(x in signal(64), e in signal(64)) {
            prop_assume!(energy(&x) > 1e-2 && error_energy(&x, &e) > 1e-2);
            let (_, g) = neg_snr_with_grad(&x, &e).unwrap();
            let fd = finite_difference(|p| -snr_loss(&x, p).unwrap(), &e, 1e-4);
            prop_assert!(rel_err(&g, &fd) < 1e-4, "rel err {}", rel_err(&g, &fd));
        }

        #[test]
        fn log_mse_gradient_matches_finite_differences(x in signal(64), e in signal(64)) {
            prop_assume!(error_energy(&x, &e) > 1e-2);
            let (_, g) = log_mse_with_grad(&x, &e).unwrap();
            let fd = finite_difference(|p| log_mse_loss(&x, p).unwrap(), &e, 1e-4);
            prop_assert!(rel_err(&g, &fd) < 1e-4, "rel err {}", rel_err(&g, &fd));
        }
    }
}
