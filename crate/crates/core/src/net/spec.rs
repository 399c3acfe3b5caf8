//! Network architecture description.
//!
//! The input to the net is a context window of stacked feature frames laid
//! out time-major: element index f*D + d is band d of context frame f.
//! The optional head applies one-dimensional convolutions over time and/or
//! frequency, each followed by max pooling and a sigmoid; branch outputs
//! are concatenated. Dense sigmoid hidden layers follow, then a softmax
//! output. Activation taps address dense hidden layers only (1-based).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub num_filters: usize,
    pub kernel_width: usize,
    pub pool_width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Head {
    None,
    /// Convolution over frequency only.
    Freq {
        conv: ConvSpec,
    },
    /// Parallel convolutions over time and over frequency.
    TimeFreq {
        time: ConvSpec,
        freq: ConvSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    /// Context window length in frames (odd, so a center frame exists).
    pub input_frames: usize,
    /// Feature bands per frame.
    pub input_bands: usize,
    pub head: Head,
    /// Dense hidden layer widths, in forward order.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

/// Valid positions of a width-k kernel over an extent.
pub(crate) fn conv_positions(extent: usize, kernel: usize) -> usize {
    extent - kernel + 1
}

/// Pooled output positions (floor division; a trailing partial pool window
/// is dropped).
pub(crate) fn pooled_positions(positions: usize, pool: usize) -> usize {
    positions / pool
}

impl ConvSpec {
    fn validate(&self, branch: &str, extent: usize) -> Result<()> {
        if self.num_filters == 0 {
            return Err(Error::config(format!(
                "net.head.{branch}.num_filters must be positive"
            )));
        }
        if self.kernel_width == 0 || self.kernel_width > extent {
            return Err(Error::config(format!(
                "net.head.{branch}.kernel_width ({}) must be in 1..={extent}",
                self.kernel_width
            )));
        }
        let positions = conv_positions(extent, self.kernel_width);
        if self.pool_width == 0 || self.pool_width > positions {
            return Err(Error::config(format!(
                "net.head.{branch}.pool_width ({}) must be in 1..={positions}",
                self.pool_width
            )));
        }
        Ok(())
    }

    pub(crate) fn output_dim(&self, extent: usize) -> usize {
        self.num_filters
            * pooled_positions(conv_positions(extent, self.kernel_width), self.pool_width)
    }
}

impl NetworkSpec {
    /// Width of a stacked input row.
    pub fn input_dim(&self) -> usize {
        self.input_frames * self.input_bands
    }

    /// Context frames on each side of the center frame.
    pub fn context(&self) -> usize {
        self.input_frames / 2
    }

    /// Width of the vector entering the first dense layer.
    pub fn head_output_dim(&self) -> usize {
        match &self.head {
            Head::None => self.input_dim(),
            Head::Freq { conv } => conv.output_dim(self.input_bands),
            Head::TimeFreq { time, freq } => {
                time.output_dim(self.input_frames) + freq.output_dim(self.input_bands)
            }
        }
    }

    /// Number of dense hidden layers (the tappable layers).
    pub fn num_hidden(&self) -> usize {
        self.hidden.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_frames == 0 || self.input_frames % 2 == 0 {
            return Err(Error::config(format!(
                "net.input_frames must be odd and positive, got {}",
                self.input_frames
            )));
        }
        if self.input_bands == 0 {
            return Err(Error::config(
                "net.input_bands must be positive".to_string(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "net.num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.hidden.is_empty() {
            return Err(Error::config(
                "net.hidden must list at least one layer".to_string(),
            ));
        }
        if let Some(bad) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::config(format!("net.hidden[{bad}] must be positive")));
        }
        match &self.head {
            Head::None => {}
            Head::Freq { conv } => conv.validate("conv", self.input_bands)?,
            Head::TimeFreq { time, freq } => {
                time.validate("time", self.input_frames)?;
                freq.validate("freq", self.input_bands)?;
            }
        }
        Ok(())
    }

    /// Checks a 1-based dense-layer tap index.
    pub fn validate_tap(&self, layer_index: usize) -> Result<()> {
        if layer_index == 0 || layer_index > self.hidden.len() {
            return Err(Error::input(format!(
                "layer_index {layer_index} is out of range; dense hidden layers are 1..={}",
                self.hidden.len()
            )));
        }
        Ok(())
    }

    /// Desk-scale default: time and frequency convolutions over a 17-frame,
    /// 40-band window, then four dense layers of 128 units, 8 classes.
    pub fn desk_default() -> Self {
        NetworkSpec {
            input_frames: 17,
            input_bands: 40,
            head: Head::TimeFreq {
                time: ConvSpec {
                    num_filters: 16,
                    kernel_width: 8,
                    pool_width: 5,
                },
                freq: ConvSpec {
                    num_filters: 32,
                    kernel_width: 8,
                    pool_width: 3,
                },
            },
            hidden: vec![128, 128, 128, 128],
            num_classes: 8,
        }
    }
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::desk_default()
    }
}
