use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_out_len, transpose_axis, Padding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

const fn conv(filters: usize, kernel: usize, stride: usize) -> ConvSpec {
    ConvSpec { filters, kernel, stride }
}

/// Architecture of the split-latent VAE.
///
/// The decoder's dense chain ends in a layer sized to the encoder's final
/// feature grid, which is then reshaped and upsampled by the transposed
/// convolutions; the last of those must emit `channels` filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub padding: Padding,
    pub encoder_convs: Vec<ConvSpec>,
    pub encoder_dense: Vec<usize>,
    pub z1_dim: usize,
    pub z2_dim: usize,
    pub decoder_dense: Vec<usize>,
    pub decoder_convs: Vec<ConvSpec>,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl VaeConfig {
    /// 64×64×3 with every stride set to 2 and `same` padding.
    pub fn desk() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 3,
            padding: Padding::Same,
            encoder_convs: vec![conv(16, 4, 2), conv(32, 6, 2), conv(16, 4, 2), conv(16, 3, 2)],
            encoder_dense: vec![128, 16],
            z1_dim: 4,
            z2_dim: 3,
            decoder_dense: vec![16, 128],
            decoder_convs: vec![conv(16, 3, 2), conv(32, 4, 2), conv(16, 6, 2), conv(3, 4, 2)],
        }
    }

    /// 224×224×3 with strides (2, 3, 2, 2) and `valid` padding.
    pub fn full() -> Self {
        Self {
            height: 224,
            width: 224,
            padding: Padding::Valid,
            encoder_convs: vec![conv(16, 4, 2), conv(32, 6, 3), conv(16, 4, 2), conv(16, 3, 2)],
            decoder_convs: vec![conv(16, 3, 2), conv(32, 4, 2), conv(16, 6, 3), conv(3, 4, 2)],
            ..Self::desk()
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.z1_dim + self.z2_dim
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// Spatial grid and channel count after the encoder convolutions.
    pub fn feature_grid(&self) -> [usize; 3] {
        let (mut h, mut w, mut c) = (self.height, self.width, self.channels);
        for s in &self.encoder_convs {
            h = conv_out_len(h, s.kernel, s.stride, self.padding);
            w = conv_out_len(w, s.kernel, s.stride, self.padding);
            c = s.filters;
        }
        [h, w, c]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad("image dimensions must be positive".into());
        }
        if self.z1_dim == 0 || self.z2_dim == 0 {
            return bad("both latent blocks need at least one dimension".into());
        }
        if self.encoder_convs.is_empty() || self.decoder_convs.is_empty() {
            return bad("encoder and decoder need at least one convolution".into());
        }
        let (mut h, mut w) = (self.height, self.width);
        for s in &self.encoder_convs {
            if s.kernel == 0 || s.stride == 0 || s.filters == 0 {
                return bad(format!("degenerate convolution {s:?}"));
            }
            if self.padding == Padding::Valid && (h < s.kernel || w < s.kernel) {
                return bad(format!("kernel {} does not fit a {h}×{w} grid", s.kernel));
            }
            h = conv_out_len(h, s.kernel, s.stride, self.padding);
            w = conv_out_len(w, s.kernel, s.stride, self.padding);
        }
        for s in &self.decoder_convs {
            h = transpose_axis(h, s.kernel, s.stride, self.padding);
            w = transpose_axis(w, s.kernel, s.stride, self.padding);
        }
        if (h, w) != (self.height, self.width) {
            return bad(format!("decoder produces {h}×{w}, expected {}×{}", self.height, self.width));
        }
        if self.decoder_convs.last().map(|s| s.filters) != Some(self.channels) {
            return bad("last decoder convolution must emit one filter per image channel".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        let d = VaeConfig::desk();
        d.validate().unwrap();
        assert_eq!(d.feature_grid(), [4, 4, 16]);
        assert_eq!(d.latent_dim(), 7);
        let f = VaeConfig::full();
        f.validate().unwrap();
        assert_eq!(f.feature_grid(), [8, 8, 16]);
    }

    #[test]
    fn mismatched_decoder_is_rejected() {
        let mut c = VaeConfig::desk();
        c.decoder_convs.pop();
        assert!(c.validate().is_err());
        let mut c = VaeConfig::desk();
        c.decoder_convs[3].filters = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = VaeConfig::full();
        let s = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<VaeConfig>(&s).unwrap(), c);
    }
}
