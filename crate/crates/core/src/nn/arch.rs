use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcSpec {
    pub in_features: usize,
    pub out_features: usize,
}

/// Layer shapes of a stride-1, unpadded 1D CNN followed by dense layers.
///
/// Every convolution shortens the sequence by `kernel - 1`; the first dense
/// layer consumes the flattened `(channel, position)` output of the last
/// convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    input_length: usize,
    conv: Vec<ConvSpec>,
    fc: Vec<FcSpec>,
}

/// Output length of an unpadded stride-1 convolution.
pub fn conv_output_length(input_length: usize, kernel: usize) -> Option<usize> {
    if kernel == 0 || kernel > input_length {
        None
    } else {
        Some(input_length - kernel + 1)
    }
}

impl ArchSpec {
    pub fn new(input_length: usize, conv: Vec<ConvSpec>, fc: Vec<FcSpec>) -> Result<Self> {
        if input_length == 0 {
            return Err(Error::Arch("input length must be positive".into()));
        }
        let mut channels = 1;
        let mut length = input_length;
        for (i, c) in conv.iter().enumerate() {
            if c.in_channels != channels {
                return Err(Error::Arch(alloc::format!(
                    "conv {i} expects {} input channels but receives {channels}",
                    c.in_channels
                )));
            }
            if c.out_channels == 0 {
                return Err(Error::Arch(alloc::format!("conv {i} has no output channels")));
            }
            length = conv_output_length(length, c.kernel).ok_or_else(|| {
                Error::Arch(alloc::format!("conv {i} with kernel {} does not fit length {length}", c.kernel))
            })?;
            channels = c.out_channels;
        }
        let mut features = channels * length;
        for (i, f) in fc.iter().enumerate() {
            if f.in_features != features {
                return Err(Error::Arch(alloc::format!(
                    "fc {i} expects {} input features but receives {features}",
                    f.in_features
                )));
            }
            if f.out_features == 0 {
                return Err(Error::Arch(alloc::format!("fc {i} has no outputs")));
            }
            features = f.out_features;
        }
        Ok(Self { input_length, conv, fc })
    }

    /// Builds a conv stack from `(channels, kernel)` pairs and a dense stack
    /// from hidden widths, ending in `output_dim` outputs.
    pub fn from_widths(input_length: usize, conv: &[(usize, usize)], hidden: &[usize], output_dim: usize) -> Result<Self> {
        let mut convs = Vec::with_capacity(conv.len());
        let mut ch = 1;
        let mut len = input_length;
        for &(out, k) in conv {
            convs.push(ConvSpec { in_channels: ch, out_channels: out, kernel: k });
            ch = out;
            len = conv_output_length(len, k)
                .ok_or_else(|| Error::Arch(alloc::format!("kernel {k} does not fit length {len}")))?;
        }
        let mut fcs = Vec::with_capacity(hidden.len() + 1);
        let mut features = ch * len;
        for &h in hidden.iter().chain(core::iter::once(&output_dim)) {
            fcs.push(FcSpec { in_features: features, out_features: h });
            features = h;
        }
        Self::new(input_length, convs, fcs)
    }

    /// Desk-scale member of the five-conv, three-dense family
    /// (kernels 13, 11, 9, 7, 7; about 1.06 M parameters).
    pub fn desk_default() -> Self {
        Self::from_widths(crate::INPUT_LENGTH, &DESK_CONV, &DESK_HIDDEN, OUTPUT_DIM).expect("default architecture is valid")
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn conv_layers(&self) -> &[ConvSpec] {
        &self.conv
    }

    pub fn fc_layers(&self) -> &[FcSpec] {
        &self.fc
    }

    /// Sequence length after each convolution, starting with the input length.
    pub fn lengths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.conv.len() + 1);
        let mut len = self.input_length;
        out.push(len);
        for c in &self.conv {
            len = len - c.kernel + 1;
            out.push(len);
        }
        out
    }

    pub fn conv_out_channels(&self) -> usize {
        self.conv.last().map_or(1, |c| c.out_channels)
    }

    pub fn flattened_features(&self) -> usize {
        self.conv_out_channels() * self.lengths().last().copied().unwrap_or(self.input_length)
    }

    pub fn output_dim(&self) -> usize {
        self.fc.last().map_or_else(|| self.flattened_features(), |f| f.out_features)
    }

    /// Exact trainable parameter count: kernels plus biases of every layer.
    pub fn param_count(&self) -> usize {
        self.conv.iter().map(|c| c.in_channels * c.out_channels * c.kernel + c.out_channels).sum::<usize>()
            + self.fc.iter().map(|f| f.in_features * f.out_features + f.out_features).sum::<usize>()
    }

    /// Checks the published family rules: five convolutions with kernels in
    /// 7..=13, three dense layers, ten outputs.
    pub fn check_family(&self) -> Result<()> {
        if self.conv.len() != 5 || self.fc.len() != 3 {
            return Err(Error::Arch(alloc::format!(
                "family has 5 conv + 3 fc layers, got {} + {}",
                self.conv.len(),
                self.fc.len()
            )));
        }
        if let Some(c) = self.conv.iter().find(|c| !(7..=13).contains(&c.kernel)) {
            return Err(Error::Arch(alloc::format!("kernel {} outside 7..=13", c.kernel)));
        }
        self.check_regressor()
    }

    /// The network head must emit five means and five log-variances.
    pub fn check_regressor(&self) -> Result<()> {
        if self.input_length != crate::INPUT_LENGTH {
            return Err(Error::Arch(alloc::format!("input length must be {}, got {}", crate::INPUT_LENGTH, self.input_length)));
        }
        if self.fc.is_empty() || self.output_dim() != OUTPUT_DIM {
            return Err(Error::Arch(alloc::format!("head must have {OUTPUT_DIM} outputs, got {}", self.output_dim())));
        }
        Ok(())
    }
}

/// Five means followed by five log-variances.
pub const OUTPUT_DIM: usize = 10;
pub const DESK_CONV: [(usize, usize); 5] = [(16, 13), (32, 11), (32, 9), (32, 7), (32, 7)];
pub const DESK_HIDDEN: [usize; 2] = [512, 128];

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hand_counts() {
        let a = ArchSpec::new(101, vec![ConvSpec { in_channels: 1, out_channels: 4, kernel: 7 }], vec![]).unwrap();
        assert_eq!(a.param_count(), 32);
        let b = ArchSpec::new(10, vec![], vec![FcSpec { in_features: 10, out_features: 3 }]).unwrap();
        assert_eq!(b.param_count(), 33);
        assert_eq!(conv_output_length(101, 13), Some(89));
    }

    #[test]
    fn desk_default_is_family_member() {
        let a = ArchSpec::desk_default();
        a.check_family().unwrap();
        assert_eq!(a.lengths(), vec![101, 89, 79, 71, 65, 59]);
        assert_eq!(a.flattened_features(), 32 * 59);
        let p = a.param_count();
        assert!((1_000_000..=2_000_000).contains(&p), "{p}");
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ArchSpec::from_widths(101, &[(8, 60), (8, 60)], &[], 10).is_err());
        assert!(ArchSpec::new(101, vec![ConvSpec { in_channels: 2, out_channels: 4, kernel: 3 }], vec![]).is_err());
        assert!(ArchSpec::new(20, vec![], vec![FcSpec { in_features: 10, out_features: 3 }]).is_err());
        let small = ArchSpec::from_widths(101, &[(4, 5)], &[8], 10).unwrap();
        assert!(small.check_family().is_err());
        small.check_regressor().unwrap();
    }
}
