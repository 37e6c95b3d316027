use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aggregator::check_grid_sizes;
use crate::geometry::DEFAULT_VOXEL_SIZE;
use crate::sparse::DEFAULT_KERNEL_SIZE;
use crate::{Error, Result};

pub const MAX_STAGES: usize = 4;
pub const DEFAULT_CHANNELS: [usize; 4] = [64, 64, 128, 256];
pub const DEFAULT_SEED: u64 = 0;

/// Named model sizes. `Micro` is the toy model used for quick experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    S,
    B,
    L,
    Micro,
}

impl Variant {
    pub fn blocks(self) -> [usize; 4] {
        match self {
            Variant::S => [2, 2, 2, 2],
            Variant::B => [3, 3, 9, 3],
            Variant::L => [3, 3, 9, 8],
            Variant::Micro => [1, 1, 2, 1],
        }
    }

    pub fn channels(self) -> [usize; 4] {
        match self {
            Variant::Micro => [16, 16, 32, 64],
            _ => DEFAULT_CHANNELS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::S => "S",
            Variant::B => "B",
            Variant::L => "L",
            Variant::Micro => "micro",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(Variant::S),
            "B" | "b" => Ok(Variant::B),
            "L" | "l" => Ok(Variant::L),
            "micro" | "Micro" => Ok(Variant::Micro),
            _ => Err(Error::Config(format!("unknown model variant {s:?}; expected S, B, L or micro"))),
        }
    }
}

/// Grid sizes per stage in units of that stage's voxels.
pub fn default_grid_sizes() -> Vec<Vec<u32>> {
    vec![vec![6, 12, 24], vec![4, 8, 16], vec![3, 6, 12], vec![2, 4, 8]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub blocks_per_stage: Vec<usize>,
    pub channels_per_stage: Vec<usize>,
    /// Per stage, strictly increasing grid sizes in that stage's voxel units.
    pub grid_sizes_per_stage: Vec<Vec<u32>>,
    pub in_channels: usize,
    pub num_classes: usize,
    pub voxel_size: f64,
    pub seed: u64,
    /// Identity shortcut around each block.
    pub residual: bool,
    /// With `false` each block uses only the middle grid size of its stage,
    /// with no learned preference.
    pub adaptive_aggregator: bool,
}

impl ModelConfig {
    pub fn variant(v: Variant, num_classes: usize) -> Self {
        Self {
            blocks_per_stage: v.blocks().to_vec(),
            channels_per_stage: v.channels().to_vec(),
            grid_sizes_per_stage: default_grid_sizes(),
            in_channels: 3,
            num_classes,
            voxel_size: DEFAULT_VOXEL_SIZE,
            seed: DEFAULT_SEED,
            residual: true,
            adaptive_aggregator: true,
        }
    }

    /// Multiplies every grid size by `factor`, rounding to the nearest
    /// positive integer.
    pub fn with_grid_scale(mut self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Config(format!("grid scale must be positive, got {factor}")));
        }
        for stage in &mut self.grid_sizes_per_stage {
            for g in stage.iter_mut() {
                *g = num_traits::Float::round(*g as f64 * factor).max(1.0) as u32;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn stages(&self) -> usize {
        self.blocks_per_stage.len()
    }

    /// Stride of stage `s` relative to the input voxels.
    pub fn stride(&self, s: usize) -> u32 {
        1 << s
    }

    /// Grid sizes actually used by the blocks of stage `s`, in stage units.
    pub fn effective_grid_sizes(&self, s: usize) -> Vec<u32> {
        let g = &self.grid_sizes_per_stage[s];
        if self.adaptive_aggregator {
            g.clone()
        } else {
            vec![g[g.len() / 2]]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages();
        let bad = |m: String| Err(Error::Config(m));
        if n == 0 || n > MAX_STAGES {
            return bad(format!("stage count must be 1..={MAX_STAGES}, got {n}"));
        }
        if self.channels_per_stage.len() != n || self.grid_sizes_per_stage.len() != n {
            return bad(format!(
                "per-stage lists disagree: {} block counts, {} channel widths, {} grid lists",
                n,
                self.channels_per_stage.len(),
                self.grid_sizes_per_stage.len()
            ));
        }
        if self.channels_per_stage.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        for g in &self.grid_sizes_per_stage {
            check_grid_sizes(g)?;
        }
        if self.in_channels == 0 || self.num_classes < 2 {
            return bad(format!(
                "need at least one input channel and two classes, got {} and {}",
                self.in_channels, self.num_classes
            ));
        }
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return bad(format!("voxel size must be positive, got {}", self.voxel_size));
        }
        Ok(())
    }

    /// Trainable parameter count derived from the configuration alone.
    /// Running normalization statistics are not counted.
    pub fn analytic_param_count(&self) -> usize {
        let v = (DEFAULT_KERNEL_SIZE as usize).pow(3);
        let c = &self.channels_per_stage;
        let norm = |d: usize| 2 * d;
        let mut total = v * self.in_channels * c[0] + norm(c[0]);
        for s in 0..self.stages() {
            let d = c[s];
            let k = self.effective_grid_sizes(s).len();
            let scales = k * (2 * d * d + 4 * d);
            let adp = if self.adaptive_aggregator { d * k + k } else { 0 };
            let proj = d * d + d + norm(d);
            let out = 2 * d * d + d + norm(d);
            let convs = 2 * (v * d * d + norm(d));
            total += self.blocks_per_stage[s] * (scales + adp + proj + out + convs);
            if s + 1 < self.stages() {
                let e = c[s + 1];
                total += 8 * d * e + norm(e);
                total += (e + d) * d + d;
            }
        }
        total + c[0] * self.num_classes + self.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_validate() {
        for v in [Variant::S, Variant::B, Variant::L, Variant::Micro] {
            ModelConfig::variant(v, 4).validate().unwrap();
        }
        assert_eq!(Variant::L.blocks(), [3, 3, 9, 8]);
        assert_eq!("micro".parse::<Variant>().unwrap(), Variant::Micro);
        assert!("XL".parse::<Variant>().is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = ModelConfig::variant(Variant::S, 4);
        let mut c = base.clone();
        c.blocks_per_stage.push(1);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.grid_sizes_per_stage[1] = vec![8, 4];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.num_classes = 1;
        assert!(c.validate().is_err());
        let mut c = base;
        c.voxel_size = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sizes_are_ordered() {
        let p = |v| ModelConfig::variant(v, 20).analytic_param_count();
        assert!(p(Variant::S) < p(Variant::B));
        assert!(p(Variant::B) < p(Variant::L));
    }

    #[test]
    fn grid_scale() {
        let c = ModelConfig::variant(Variant::S, 4).with_grid_scale(0.5).unwrap();
        assert_eq!(c.grid_sizes_per_stage[0], vec![3, 6, 12]);
        assert_eq!(c.grid_sizes_per_stage[3], vec![1, 2, 4]);
        assert!(ModelConfig::variant(Variant::S, 4).with_grid_scale(0.1).is_err());
        assert!(ModelConfig::variant(Variant::S, 4).with_grid_scale(-1.0).is_err());
    }

    #[test]
    fn ablation_uses_middle_scale() {
        let mut c = ModelConfig::variant(Variant::Micro, 4);
        c.adaptive_aggregator = false;
        assert_eq!(c.effective_grid_sizes(0), vec![12]);
        assert_eq!(c.effective_grid_sizes(3), vec![4]);
    }
}
