use serde::{Deserialize, Serialize};

use crate::autodiff::ConvGeom;
use crate::error::{config_err, Result};
use crate::targets::{DEPTH_COLS, DEPTH_ROWS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Conv encoder and a fully connected layer.
    Ff,
    /// One LSTM on top of the encoder features.
    Lstm1,
    /// Two stacked LSTMs fed with reward, velocity and previous action.
    Nav2lstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Rgb,
    Rgbd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Depth from the encoder features.
    D1,
    /// Depth from the top recurrent layer.
    D2,
    /// Loop closure from the top recurrent layer.
    L,
    /// Reward class from the encoder features, trained on replayed frames.
    R,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    Classify8,
    Regress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    pub input_mode: InputMode,
    pub heads: Vec<Head>,
    pub depth_mode: DepthMode,
    pub lstm1_width: usize,
    pub lstm2_width: usize,
    pub fc_width: usize,
    pub aux_hidden: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub conv: Vec<ConvLayer>,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Nav2lstm,
            input_mode: InputMode::Rgb,
            heads: Vec::new(),
            depth_mode: DepthMode::Classify8,
            lstm1_width: 64,
            lstm2_width: 256,
            fc_width: 256,
            aux_hidden: 128,
            image_width: 84,
            image_height: 84,
            conv: vec![
                ConvLayer { channels: 16, kernel: 8, stride: 4 },
                ConvLayer { channels: 32, kernel: 4, stride: 2 },
            ],
        }
    }
}

impl ArchitectureSpec {
    pub fn has(&self, h: Head) -> bool {
        self.heads.contains(&h)
    }

    pub fn in_channels(&self) -> usize {
        match self.input_mode {
            InputMode::Rgb => 3,
            InputMode::Rgbd => 4,
        }
    }

    pub fn recurrent(&self) -> bool {
        self.variant != Variant::Ff
    }

    /// Widths of the recurrent layers, bottom first.
    pub fn lstm_widths(&self) -> Vec<usize> {
        match self.variant {
            Variant::Ff => Vec::new(),
            Variant::Lstm1 => vec![self.lstm2_width],
            Variant::Nav2lstm => vec![self.lstm1_width, self.lstm2_width],
        }
    }

    /// Width of the layer the policy and value read from.
    pub fn top_width(&self) -> usize {
        self.lstm_widths().last().copied().unwrap_or(self.fc_width)
    }

    /// Output geometry of every conv layer.
    pub fn conv_geoms(&self) -> Result<Vec<ConvGeom>> {
        let (mut c, mut h, mut w) = (self.in_channels(), self.image_height, self.image_width);
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, l) in self.conv.iter().enumerate() {
            let g = ConvGeom::new(c, h, w, l.channels, l.kernel, l.stride)
                .map_err(|e| crate::NavError::Config(format!("conv{}: {}", i + 1, e.detail())))?;
            [c, h, w] = g.output_shape();
            out.push(g);
        }
        Ok(out)
    }

    /// Length of the flattened encoder output.
    pub fn conv_out_len(&self) -> Result<usize> {
        let geoms = self.conv_geoms()?;
        Ok(match geoms.last() {
            Some(g) => g.output_shape().iter().product(),
            None => self.in_channels() * self.image_height * self.image_width,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.recurrent() && (self.has(Head::D2) || self.has(Head::L)) {
            return config_err("heads d2 and l need a recurrent variant (lstm1 or nav2lstm)");
        }
        let mut sorted = self.heads.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.heads.len() {
            return config_err("heads must not repeat");
        }
        if self.fc_width == 0 || self.aux_hidden == 0 || self.lstm2_width == 0 {
            return config_err("layer widths must be positive");
        }
        if self.variant == Variant::Nav2lstm && self.lstm1_width == 0 {
            return config_err("lstm1_width must be positive");
        }
        if self.input_mode == InputMode::Rgbd && (self.image_height < 2 * DEPTH_ROWS || self.image_width < DEPTH_COLS) {
            return config_err("image too small for depth input");
        }
        self.conv_geoms()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_conv_shapes() {
        let s = ArchitectureSpec::default();
        let g = s.conv_geoms().unwrap();
        assert_eq!(g[0].output_shape(), [16, 20, 20]);
        assert_eq!(g[1].output_shape(), [32, 9, 9]);
        assert_eq!(s.conv_out_len().unwrap(), 2592);
    }

    #[test]
    fn head_variant_rules() {
        let mut s = ArchitectureSpec { variant: Variant::Ff, heads: vec![Head::D1, Head::R], ..Default::default() };
        assert!(s.validate().is_ok());
        s.heads = vec![Head::D2];
        assert!(s.validate().is_err());
        s.heads = vec![Head::L];
        assert!(s.validate().is_err());
        s.variant = Variant::Lstm1;
        assert!(s.validate().is_ok());
        s.heads = vec![Head::L, Head::L];
        assert!(s.validate().is_err());
    }

    #[test]
    fn tiny_images_are_rejected() {
        let s = ArchitectureSpec { image_width: 6, image_height: 6, ..Default::default() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn serde_names() {
        let s: ArchitectureSpec =
            toml::from_str("variant = \"ff\"\nheads = [\"d1\", \"r\"]\ninput_mode = \"rgbd\"").unwrap();
        assert_eq!(s.variant, Variant::Ff);
        assert_eq!(s.heads, vec![Head::D1, Head::R]);
        assert!(toml::from_str::<ArchitectureSpec>("varient = \"ff\"").is_err());
    }
}
