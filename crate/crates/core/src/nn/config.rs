use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters shared by the selector and the PIT baseline: encoder,
/// stacked dilated convolution separator, mask head and decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkConfig {
    /// Encoder basis size.
    pub encoder_filters: usize,
    /// Encoder/decoder window length in samples; the stride is half of it.
    pub frame_length: usize,
    pub bottleneck_channels: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
    pub blocks_per_repeat: usize,
    pub repeats: usize,
    pub sample_rate: u32,
}

impl TrunkConfig {
    /// The full-size trunk: 256 filters of 20 samples, B = 256, H = 512,
    /// P = 3, X = 8, R = 4.
    pub fn paper() -> Self {
        Self {
            encoder_filters: 256,
            frame_length: 20,
            bottleneck_channels: 256,
            conv_channels: 512,
            kernel_size: 3,
            blocks_per_repeat: 8,
            repeats: 4,
            sample_rate: crate::signal::DEFAULT_SAMPLE_RATE,
        }
    }

    /// Tiny trunk for gradient checks.
    pub fn miniature() -> Self {
        Self {
            encoder_filters: 8,
            frame_length: 20,
            bottleneck_channels: 8,
            conv_channels: 16,
            kernel_size: 3,
            blocks_per_repeat: 2,
            repeats: 2,
            sample_rate: crate::signal::DEFAULT_SAMPLE_RATE,
        }
    }

    /// Small trunk that trains in minutes on a CPU.
    pub fn toy() -> Self {
        Self {
            encoder_filters: 32,
            frame_length: 20,
            bottleneck_channels: 24,
            conv_channels: 48,
            kernel_size: 3,
            blocks_per_repeat: 4,
            repeats: 2,
            sample_rate: crate::signal::DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn stride(&self) -> usize {
        self.frame_length / 2
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("encoder_filters", self.encoder_filters),
            ("frame_length", self.frame_length),
            ("bottleneck_channels", self.bottleneck_channels),
            ("conv_channels", self.conv_channels),
            ("kernel_size", self.kernel_size),
            ("blocks_per_repeat", self.blocks_per_repeat),
            ("repeats", self.repeats),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.frame_length % 2 != 0 {
            return Err(Error::Config(format!(
                "frame_length must be even, got {}",
                self.frame_length
            )));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub num_classes: usize,
    pub trunk: TrunkConfig,
    pub embedding_dim: usize,
    /// The class embedding multiplies the stream after this many repeats.
    pub integration_after_repeat: usize,
}

impl SelectorConfig {
    pub fn paper(num_classes: usize) -> Self {
        Self {
            num_classes,
            trunk: TrunkConfig::paper(),
            embedding_dim: 256,
            integration_after_repeat: 1,
        }
    }

    pub fn miniature(num_classes: usize) -> Self {
        Self {
            num_classes,
            trunk: TrunkConfig::miniature(),
            embedding_dim: 8,
            integration_after_repeat: 1,
        }
    }

    pub fn toy(num_classes: usize) -> Self {
        let trunk = TrunkConfig::toy();
        Self {
            num_classes,
            embedding_dim: trunk.bottleneck_channels,
            trunk,
            integration_after_repeat: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        if self.num_classes == 0 || self.embedding_dim == 0 {
            return Err(Error::Config(
                "num_classes and embedding_dim must be positive".into(),
            ));
        }
        if self.integration_after_repeat == 0 || self.integration_after_repeat > self.trunk.repeats {
            return Err(Error::Config(format!(
                "integration_after_repeat must lie in 1..={}, got {}",
                self.trunk.repeats, self.integration_after_repeat
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PitConfig {
    pub trunk: TrunkConfig,
    pub output_channels: usize,
}

impl PitConfig {
    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        if self.output_channels < 2 {
            return Err(Error::Config(format!(
                "PIT needs at least 2 output channels, got {}",
                self.output_channels
            )));
        }
        Ok(())
    }
}

/// Which network a checkpoint holds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    /// Class-conditioned extraction of the selected classes.
    Selector(SelectorConfig),
    /// Same architecture, trained to output the mixture minus the selected classes.
    RemovalDirect(SelectorConfig),
    /// Unconditioned K-output separation.
    Pit(PitConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Selector(c) | ModelConfig::RemovalDirect(c) => c.validate(),
            ModelConfig::Pit(c) => c.validate(),
        }
    }

    pub fn trunk(&self) -> &TrunkConfig {
        match self {
            ModelConfig::Selector(c) | ModelConfig::RemovalDirect(c) => &c.trunk,
            ModelConfig::Pit(c) => &c.trunk,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelConfig::Selector(_) => "selector",
            ModelConfig::RemovalDirect(_) => "removal-direct",
            ModelConfig::Pit(_) => "pit",
        }
    }

    pub fn conditioning(&self) -> Option<&SelectorConfig> {
        match self {
            ModelConfig::Selector(c) | ModelConfig::RemovalDirect(c) => Some(c),
            ModelConfig::Pit(_) => None,
        }
    }

    pub fn num_outputs(&self) -> usize {
        match self {
            ModelConfig::Pit(c) => c.output_channels,
            _ => 1,
        }
    }

    /// Lists fields that differ from `other`, as `path: ours vs theirs`.
    pub fn differences(&self, other: &ModelConfig) -> Vec<String> {
        let a = serde_json::to_value(self).unwrap_or_default();
        let b = serde_json::to_value(other).unwrap_or_default();
        let mut out = Vec::new();
        diff_values("", &a, &b, &mut out);
        out
    }
}

fn diff_values(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let mut keys: Vec<&String> = ma.keys().chain(mb.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let sub = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                let null = Value::Null;
                diff_values(&sub, ma.get(k).unwrap_or(&null), mb.get(k).unwrap_or(&null), out);
            }
        }
        _ if a != b => out.push(format!("{path}: {a} vs {b}")),
        _ => {}
    }
}
