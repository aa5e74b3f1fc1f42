use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive rational applied to every channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelScale {
    num: u32,
    den: u32,
}

impl ChannelScale {
    pub const ONE: Self = Self { num: 1, den: 1 };
    pub const DESK: Self = Self { num: 1, den: 8 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidSpec(format!("channel_scale {num}/{den} must be positive")));
        }
        Ok(Self { num, den })
    }

    pub fn is_one(self) -> bool {
        self.num == self.den
    }

    /// Scaled channel count; any scale other than 1 rounds up to a multiple of 4.
    pub fn apply(self, width: u32) -> u32 {
        if self.is_one() {
            return width;
        }
        let scaled = (width as u64 * self.num as u64).div_ceil(self.den as u64);
        (scaled.div_ceil(4) * 4) as u32
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for ChannelScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for ChannelScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("channel_scale {s:?} is not of the form a/b"));
        match s.split_once('/') {
            Some((a, b)) => Self::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => Self::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

impl TryFrom<String> for ChannelScale {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ChannelScale> for String {
    fn from(c: ChannelScale) -> Self {
        c.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Plain k x k convolution + norm + ReLU.
    Stem,
    /// Searchable stack of separable-convolution layers.
    SepConv,
    /// Plain 1x1 convolution without norm or activation.
    Head,
}

/// One row of the search-space table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    #[serde(rename = "block")]
    pub name: String,
    pub kind: BlockKind,
    #[serde(rename = "width")]
    pub widths: Vec<u32>,
    #[serde(rename = "depth")]
    pub depths: Vec<u32>,
    #[serde(rename = "kernel_size")]
    pub kernels: Vec<u32>,
    #[serde(rename = "expansion_ratio", default = "one")]
    pub expansions: Vec<u32>,
    pub stride: u32,
}

fn one() -> Vec<u32> {
    vec![1]
}

impl BlockSpec {
    pub fn fixed(&self) -> bool {
        self.kind != BlockKind::SepConv
    }

    fn sepconv(name: &str, widths: &[u32], depths: &[u32], kernels: &[u32], expansions: &[u32], stride: u32) -> Self {
        Self {
            name: name.into(),
            kind: BlockKind::SepConv,
            widths: widths.to_vec(),
            depths: depths.to_vec(),
            kernels: kernels.to_vec(),
            expansions: expansions.to_vec(),
            stride,
        }
    }

    fn plain(name: &str, kind: BlockKind, width: u32, kernel: u32, stride: u32) -> Self {
        Self {
            name: name.into(),
            kind,
            widths: vec![width],
            depths: vec![1],
            kernels: vec![kernel],
            expansions: vec![1],
            stride,
        }
    }

    pub fn max_width(&self) -> u32 {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn max_depth(&self) -> u32 {
        *self.depths.last().expect("validated non-empty")
    }

    pub fn max_kernel(&self) -> u32 {
        *self.kernels.last().expect("validated non-empty")
    }

    pub fn max_expansion(&self) -> u32 {
        *self.expansions.last().expect("validated non-empty")
    }
}

/// Ordered block table plus the channel scale used to instantiate it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpaceSpec {
    pub blocks: Vec<BlockSpec>,
    #[serde(default = "unit_scale")]
    pub channel_scale: ChannelScale,
}

fn unit_scale() -> ChannelScale {
    ChannelScale::ONE
}

/// Input channels of the encoder (RGB).
pub const IMAGE_CHANNELS: u32 = 3;

impl SearchSpaceSpec {
    /// The eight-row encoder table: a 7x7 stem, six separable-convolution
    /// blocks, and a 1x1 output convolution, at full channel scale.
    pub fn table_s1() -> Self {
        use BlockKind::*;
        Self {
            blocks: vec![
                BlockSpec::plain("First Conv2d", Stem, 64, 7, 2),
                BlockSpec::sepconv("SepConv-1", &[56, 64], &[1, 2], &[3, 5], &[1], 1),
                BlockSpec::sepconv("SepConv-2", &[64, 72], &[1, 2, 3], &[3, 5], &[1, 2, 4], 1),
                BlockSpec::sepconv("SepConv-3", &[88, 96], &[1, 2, 3], &[3, 5], &[4, 5, 6], 2),
                BlockSpec::sepconv("SepConv-4", &[96, 104, 112], &[1, 2, 3], &[3, 5], &[4, 5, 6], 1),
                BlockSpec::sepconv("SepConv-5", &[112, 120, 128], &[2, 3, 4], &[3, 5], &[6], 2),
                BlockSpec::sepconv("SepConv-6", &[128, 136], &[1, 2], &[3, 5], &[6], 1),
                BlockSpec::plain("Last Conv2d", Head, 128, 1, 1),
            ],
            channel_scale: ChannelScale::ONE,
        }
    }

    /// The same table at the default desk-scale channel factor of 1/8.
    pub fn desk() -> Self {
        Self::table_s1().with_channel_scale(ChannelScale::DESK)
    }

    pub fn with_channel_scale(mut self, scale: ChannelScale) -> Self {
        self.channel_scale = scale;
        self
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.check()?;
        Ok(spec)
    }

    /// Structural validation of the table itself.
    pub fn check(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidSpec(m));
        let n = self.blocks.len();
        if n < 3 {
            return err(format!("need a stem, at least one searchable block and a head, got {n} blocks"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let expected = match i {
                0 => BlockKind::Stem,
                i if i == n - 1 => BlockKind::Head,
                _ => BlockKind::SepConv,
            };
            if b.kind != expected {
                return err(format!("block {} has kind {:?}, expected {expected:?}", b.name, b.kind));
            }
            for (field, list) in [
                ("width", &b.widths),
                ("depth", &b.depths),
                ("kernel_size", &b.kernels),
                ("expansion_ratio", &b.expansions),
            ] {
                if list.is_empty() || list.contains(&0) || list.windows(2).any(|w| w[0] >= w[1]) {
                    return err(format!(
                        "block {} {field} choices {list:?} must be non-empty, positive and strictly ascending",
                        b.name
                    ));
                }
            }
            if b.kernels.iter().any(|k| k % 2 == 0) {
                return err(format!("block {} kernel sizes {:?} must be odd", b.name, b.kernels));
            }
            if b.stride != 1 && b.stride != 2 {
                return err(format!("block {} stride {} must be 1 or 2", b.name, b.stride));
            }
            if b.fixed() && [&b.widths, &b.depths, &b.kernels].iter().any(|l| l.len() != 1) {
                return err(format!("fixed block {} must have singleton choices", b.name));
            }
            if b.fixed() && b.depths != [1] {
                return err(format!("fixed block {} must have depth 1", b.name));
            }
        }
        let total: u32 = self.blocks.iter().map(|b| b.stride).product();
        if total != 8 {
            return err(format!("product of strides is {total}, expected 8"));
        }
        if self.blocks[n - 1].stride != 1 || self.blocks[n - 1].kernels != [1] {
            return err("head block must be a stride-1 1x1 convolution".into());
        }
        Ok(())
    }

    /// Indices of searchable blocks, in order.
    pub fn searchable(&self) -> impl Iterator<Item = (usize, &BlockSpec)> {
        self.blocks.iter().enumerate().filter(|(_, b)| !b.fixed())
    }

    pub fn scaled(&self, width: u32) -> u32 {
        self.channel_scale.apply(width)
    }

    /// Scaled output width of the stem.
    pub fn stem_width(&self) -> u32 {
        self.scaled(self.blocks[0].widths[0])
    }

    /// Scaled output width of the head.
    pub fn head_width(&self) -> u32 {
        self.scaled(self.blocks[self.blocks.len() - 1].widths[0])
    }

    /// Distinct scaled widths block `i` can emit.
    pub fn scaled_widths(&self, i: usize) -> Vec<u32> {
        let mut v: Vec<u32> = self.blocks[i].widths.iter().map(|&w| self.scaled(w)).collect();
        v.dedup();
        v
    }

    /// Whether the first layer of block `i` carries a 1x1 projection shortcut.
    ///
    /// Decided per block rather than per genome so the super-network has one
    /// fixed parameter layout: identity only when the block keeps resolution
    /// and both its input and output widths are the same single value.
    pub fn has_projection(&self, i: usize) -> bool {
        let b = &self.blocks[i];
        if b.fixed() {
            return false;
        }
        let inputs = self.scaled_widths(i - 1);
        let outputs = self.scaled_widths(i);
        !(b.stride == 1 && inputs.len() == 1 && inputs == outputs)
    }

    /// Cumulative stride after each block.
    pub fn cumulative_strides(&self) -> Vec<u32> {
        self.blocks
            .iter()
            .scan(1, |acc, b| {
                *acc *= b.stride;
                Some(*acc)
            })
            .collect()
    }

    /// Block indices whose outputs form the feature pyramid: the last block
    /// at each of the cumulative strides 2, 4 and 8.
    pub fn pyramid_taps(&self) -> [usize; 3] {
        let cum = self.cumulative_strides();
        [2, 4, 8].map(|s| {
            cum.iter()
                .rposition(|&c| c == s)
                .unwrap_or_else(|| panic!("search space never reaches stride {s}"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_valid_and_taps_follow_strides() {
        let spec = SearchSpaceSpec::table_s1();
        spec.check().unwrap();
        assert_eq!(spec.blocks.len(), 8);
        assert_eq!(spec.cumulative_strides(), vec![2, 2, 2, 4, 4, 8, 8, 8]);
        // SepConv-2, SepConv-4, Last Conv2d
        assert_eq!(spec.pyramid_taps(), [2, 4, 7]);
    }

    #[test]
    fn desk_scale_rounds_up_to_multiples_of_four() {
        let s = ChannelScale::DESK;
        let got: Vec<u32> = [56, 64, 72, 88, 96, 104, 112, 120, 128, 136].map(|w| s.apply(w)).to_vec();
        assert_eq!(got, vec![8, 8, 12, 12, 12, 16, 16, 16, 16, 20]);
        assert_eq!(ChannelScale::ONE.apply(56), 56);
    }

    #[test]
    fn projection_rule() {
        let full = SearchSpaceSpec::table_s1();
        assert!((1..7).all(|i| full.has_projection(i)));
        let desk = SearchSpaceSpec::desk();
        // stem 8 -> SepConv-1 {8}: identity; everything else changes width or stride
        assert!(!desk.has_projection(1));
        assert!((2..7).all(|i| desk.has_projection(i)));
    }

    #[test]
    fn json_uses_table_column_names() {
        let spec = SearchSpaceSpec::desk();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kernel_size\"") && text.contains("\"expansion_ratio\""));
        assert!(text.contains("\"channel_scale\":\"1/8\""));
        let back: SearchSpaceSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rejects_bad_tables() {
        let mut spec = SearchSpaceSpec::table_s1();
        spec.blocks[3].stride = 1;
        assert!(spec.check().is_err());
        let mut spec = SearchSpaceSpec::table_s1();
        spec.blocks[2].kernels = vec![5, 3];
        assert!(spec.check().is_err());
        let mut spec = SearchSpaceSpec::table_s1();
        spec.blocks[2].kernels = vec![4];
        assert!(spec.check().is_err());
    }
}
