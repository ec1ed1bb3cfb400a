use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::patterns::Template;

fn one() -> usize {
    1
}
fn four() -> usize {
    4
}
fn sixteen() -> usize {
    16
}

/// Shape and width choices of the encoder-decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Observed frames T.
    pub input_len: usize,
    /// Predicted frames K.
    pub target_len: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub in_channels: usize,
    #[serde(default = "one")]
    pub out_channels: usize,
    /// Channel width per hierarchy level, finest first.
    pub channels: Vec<usize>,
    /// Blocks per hierarchy level.
    pub depth: Vec<usize>,
    /// Encoder pattern; the decoder always uses axial.
    pub pattern: Template,
    #[serde(default)]
    pub globals: usize,
    /// Spatial factor of the convolutional stem.
    pub init_downsample: usize,
    #[serde(default = "four")]
    pub heads: usize,
    /// Width of the stem and head convolutions; defaults to `channels[0]`.
    #[serde(default)]
    pub cnn_channels: Option<usize>,
    #[serde(default = "four")]
    pub ffn_ratio: usize,
    #[serde(default = "one")]
    pub global_ffn_ratio: usize,
    #[serde(default = "sixteen")]
    pub norm_groups: usize,
}

impl ModelConfig {
    /// 64x64 digits, 10 in / 10 out, two levels of 64 and 128 channels,
    /// four axial blocks per level.
    pub fn moving_mnist(globals: usize) -> Self {
        Self {
            input_len: 10,
            target_len: 10,
            height: 64,
            width: 64,
            in_channels: 1,
            out_channels: 1,
            channels: vec![64, 128],
            depth: vec![4, 4],
            pattern: Template::Axial,
            globals,
            init_downsample: 2,
            heads: 4,
            cnn_channels: None,
            ffn_ratio: 4,
            global_ffn_ratio: 1,
            norm_groups: 16,
        }
    }

    /// Desk-scale model for 32x32 frames.
    pub fn tiny(globals: usize) -> Self {
        Self {
            height: 32,
            width: 32,
            channels: vec![32, 64],
            depth: vec![1, 1],
            init_downsample: 2,
            cnn_channels: Some(16),
            ..Self::moving_mnist(globals)
        }
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn cnn_width(&self) -> usize {
        self.cnn_channels.unwrap_or(self.channels[0])
    }

    /// Spatial extent of level `m`.
    pub fn level_hw(&self, m: usize) -> (usize, usize) {
        let f = self.init_downsample << m;
        (self.height / f, self.width / f)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.levels();
        if m == 0 || self.depth.len() != m {
            return config(format!("channels ({}) and depth ({}) must list the same non-zero number of levels", m, self.depth.len()));
        }
        if self.input_len == 0 || self.target_len == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return config("sequence lengths and channel counts must be positive");
        }
        if self.init_downsample == 0 {
            return config("init_downsample must be >= 1");
        }
        let total = self.init_downsample << (m - 1);
        for (axis, extent) in [("height", self.height), ("width", self.width)] {
            if extent == 0 || extent % total != 0 {
                return config(format!("{axis} {extent} is not divisible by the cumulative downsample factor {total}"));
            }
        }
        for &c in &self.channels {
            if c == 0 || self.heads == 0 || c % self.heads != 0 {
                return config(format!("{} heads do not divide {c} channels", self.heads));
            }
        }
        let cnn = self.cnn_width();
        if self.norm_groups == 0 || cnn % self.norm_groups != 0 {
            return config(format!("{} norm groups do not divide {cnn} convolution channels", self.norm_groups));
        }
        for lvl in 0..m {
            let (h, w) = self.level_hw(lvl);
            self.pattern.build([self.input_len, h, w])?;
        }
        Ok(())
    }
}
