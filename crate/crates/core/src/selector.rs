//! Public inference surface of the class-conditioned selector.

use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig};
use crate::signal::{ClassVector, Waveform};

/// A channel-major feature map: `channels` rows of `frames` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    frames: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * frames {
            return Err(Error::invalid(format!(
                "feature map of {channels}×{frames} needs {} values, got {}",
                channels * frames,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            frames,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Value of channel `d` at frame `f`.
    pub fn get(&self, d: usize, f: usize) -> f64 {
        self.data[d * self.frames + f]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// `c = Σ_n o_n e_n` over the model's embedding table.
pub fn embed_classes(model: &Model, o: &ClassVector) -> Result<Vec<f64>> {
    model.embedding_sum(o)
}

/// `z_f = h_f ⊙ c` for every frame.
pub fn integrate(h: &FeatureMap, c: &[f64]) -> Result<FeatureMap> {
    if c.len() != h.channels {
        return Err(Error::invalid(format!(
            "embedding has {} dimensions, feature map has {} channels",
            c.len(),
            h.channels
        )));
    }
    Ok(FeatureMap {
        channels: h.channels,
        frames: h.frames,
        data: crate::nn::net::integrate_frames(&h.data, c, h.frames),
    })
}

fn require_conditioned(model: &Model) -> Result<()> {
    match model.config() {
        ModelConfig::Selector(_) | ModelConfig::RemovalDirect(_) => Ok(()),
        ModelConfig::Pit(_) => Err(Error::invalid(
            "a PIT checkpoint cannot be driven by a class vector",
        )),
    }
}

/// Unrounded network output for `(y, o)`.
pub fn forward_exact(model: &Model, y: &Waveform, o: &ClassVector) -> Result<Vec<f64>> {
    require_conditioned(model)?;
    check_rate(model, y)?;
    let mut out = model.run(model.params(), y.samples(), Some(o), None)?;
    Ok(out.swap_remove(0))
}

/// `x̂ = DNN(y, o)`, rounded to single precision so that the estimate and
/// `y − x̂` are both exactly representable when `y` is.
pub fn forward(model: &Model, y: &Waveform, o: &ClassVector) -> Result<Waveform> {
    let x = forward_exact(model, y, o)?;
    let snapped = x.into_iter().map(|v| v as f32 as f64).collect();
    Waveform::new(snapped, y.sample_rate())
}

pub(crate) fn check_rate(model: &Model, y: &Waveform) -> Result<()> {
    let rate = model.trunk().sample_rate;
    if y.sample_rate() != rate {
        return Err(Error::invalid(format!(
            "input is {} Hz but the model runs at {rate} Hz",
            y.sample_rate()
        )));
    }
    Ok(())
}

/// Bottleneck stream at the integration site before conditioning, mostly
/// for inspection and tests.
pub fn integration_features(model: &Model, y: &Waveform, o: &ClassVector) -> Result<FeatureMap> {
    require_conditioned(model)?;
    let (_, tape) = model.run_recording(y.samples(), Some(o))?;
    let data = tape.pre_integration_features().to_vec();
    FeatureMap::new(model.trunk().bottleneck_channels, tape.frames(), data)
}
