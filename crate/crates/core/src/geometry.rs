use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorDims;

/// Kernel, stride, zero-padding and channel counts of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    #[serde(default = "one")]
    pub stride_h: usize,
    #[serde(default = "one")]
    pub stride_w: usize,
    #[serde(default)]
    pub pad_h: usize,
    #[serde(default)]
    pub pad_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

fn one() -> usize {
    1
}

impl ConvGeometry {
    /// Stride-1 convolution with `(k - 1) / 2` padding, preserving spatial size
    /// for odd `k`.
    pub const fn same(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: 1,
            stride_w: 1,
            pad_h: (kernel - 1) / 2,
            pad_w: (kernel - 1) / 2,
            in_channels,
            out_channels,
        }
    }

    pub const fn with_stride(mut self, stride: usize) -> Self {
        self.stride_h = stride;
        self.stride_w = stride;
        self
    }

    pub const fn with_pad(mut self, pad: usize) -> Self {
        self.pad_h = pad;
        self.pad_w = pad;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::geometry("kernel extent must be at least 1"));
        }
        if self.stride_h == 0 || self.stride_w == 0 {
            return Err(Error::geometry("stride must be at least 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::geometry("channel counts must be at least 1"));
        }
        Ok(())
    }

    /// Output height and width for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let span_h = h + 2 * self.pad_h;
        let span_w = w + 2 * self.pad_w;
        if span_h < self.kernel_h || span_w < self.kernel_w {
            return Err(Error::geometry(format!(
                "{}x{} kernel does not fit a {h}x{w} input padded by ({}, {})",
                self.kernel_h, self.kernel_w, self.pad_h, self.pad_w
            )));
        }
        Ok((
            (span_h - self.kernel_h) / self.stride_h + 1,
            (span_w - self.kernel_w) / self.stride_w + 1,
        ))
    }

    pub fn output_dims(&self, input: TensorDims) -> Result<TensorDims> {
        if input.channels != self.in_channels {
            return Err(Error::shape(format!(
                "input has {} channels, geometry expects {}",
                input.channels, self.in_channels
            )));
        }
        let (h, w) = self.output_hw(input.height, input.width)?;
        Ok(TensorDims::new(self.out_channels, h, w))
    }

    /// Rows of the patch matrix: `|C_in|·h_k·w_k`.
    pub const fn patch_rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub const fn param_count(&self) -> usize {
        self.out_channels * self.patch_rows() + self.out_channels
    }

    /// Multiply-accumulates needed for one output pixel across all output channels.
    pub const fn macs_per_pixel(&self) -> usize {
        self.out_channels * self.patch_rows()
    }

    /// Inclusive range of output coordinates whose receptive field along one
    /// axis contains input coordinate `y`, clipped to `[0, out_len)`.
    pub(crate) fn affected_range(
        y: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_len: usize,
    ) -> Option<(usize, usize)> {
        // Output o covers inputs [o·s − p, o·s − p + k − 1].
        let hi_num = y + pad;
        let hi = (hi_num / stride).min(out_len.checked_sub(1)?);
        let lo = if hi_num + 1 >= kernel {
            (hi_num + 1 - kernel).div_ceil(stride)
        } else {
            0
        };
        (lo <= hi).then_some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims() {
        let g = ConvGeometry::same(3, 2, 4).with_stride(2);
        assert_eq!(g.output_hw(5, 5).unwrap(), (3, 3));
        assert_eq!(g.patch_rows(), 18);
        let g = ConvGeometry::same(7, 1, 1);
        assert_eq!(g.output_hw(10, 12).unwrap(), (10, 12));
        let valid = ConvGeometry::same(7, 1, 1).with_pad(0);
        assert!(valid.output_hw(6, 10).is_err());
        assert!(ConvGeometry::same(3, 1, 1).with_stride(0).validate().is_err());
    }

    #[test]
    fn affected_range_matches_brute_force() {
        for kernel in 1..6 {
            for stride in 1..4 {
                for pad in 0..kernel {
                    let len = 9;
                    let g = ConvGeometry {
                        kernel_h: kernel,
                        kernel_w: 1,
                        stride_h: stride,
                        stride_w: 1,
                        pad_h: pad,
                        pad_w: 0,
                        in_channels: 1,
                        out_channels: 1,
                    };
                    let Ok((out_len, _)) = g.output_hw(len, 1) else {
                        continue;
                    };
                    for y in 0..len {
                        let expected: Vec<usize> = (0..out_len)
                            .filter(|&o| {
                                let start = (o * stride) as isize - pad as isize;
                                (start..start + kernel as isize).contains(&(y as isize))
                            })
                            .collect();
                        let got = ConvGeometry::affected_range(y, kernel, stride, pad, out_len)
                            .map(|(lo, hi)| (lo..=hi).collect::<Vec<_>>())
                            .unwrap_or_default();
                        assert_eq!(got, expected, "k={kernel} s={stride} p={pad} y={y}");
                    }
                }
            }
        }
    }
}
