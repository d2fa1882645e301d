// SPDX-License-Identifier: Apache-2.0

//! Strided 2-D convolution and its adjoint (transposed convolution).
//!
//! A [`Kernel`] relates a "small" feature map (`c_small` channels) and a
//! "large" one (`c_large` channels): the transposed convolution expands small
//! to large, `out = (in - 1) * stride - 2 * pad + k`, and the convolution
//! reduces large back to small. The two are exact adjoints for the same
//! weights, which is also how their input gradients are computed.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major feature map, `data[(c * h + i) * w + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::Dimension {
                context: "feature map",
                expected: c * h * w,
                got: data.len(),
            });
        }
        Ok(Self { c, h, w, data })
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.h + i) * self.w + j]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dot(&self, other: &FeatureMap) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Output size of a transposed convolution.
pub fn deconv_out(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let full = (input.max(1) - 1) * stride + k;
    if input == 0 || stride == 0 || full <= 2 * pad {
        return Err(Error::Config(format!(
            "invalid transposed-conv shape: in {input}, kernel {k}, stride {stride}, pad {pad}"
        )));
    }
    Ok(full - 2 * pad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub c_small: usize,
    pub c_large: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `w[((a * c_large + b) * k + ki) * k + kj]`, `a` small channel, `b` large.
    pub w: Vec<f64>,
}

impl Kernel {
    pub fn zeros(c_small: usize, c_large: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            c_small,
            c_large,
            k,
            stride,
            pad,
            w: vec![0.0; c_small * c_large * k * k],
        }
    }

    #[inline]
    fn idx(&self, a: usize, b: usize, ki: usize, kj: usize) -> usize {
        ((a * self.c_large + b) * self.k + ki) * self.k + kj
    }

    /// Large-map position touched by small position `i` and tap `ki`.
    #[inline]
    fn target(&self, i: usize, ki: usize, size: usize) -> Option<usize> {
        let p = (i * self.stride + ki) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < size).then_some(p as usize)
    }

    /// Visits every (small index, large index, weight index) triple.
    fn for_each_tap(&self, sh: usize, sw: usize, lh: usize, lw: usize, mut f: impl FnMut(usize, usize, usize)) {
        for a in 0..self.c_small {
            for i in 0..sh {
                for j in 0..sw {
                    let s_idx = (a * sh + i) * sw + j;
                    for ki in 0..self.k {
                        let Some(oi) = self.target(i, ki, lh) else { continue };
                        for kj in 0..self.k {
                            let Some(oj) = self.target(j, kj, lw) else { continue };
                            for b in 0..self.c_large {
                                f(s_idx, (b * lh + oi) * lw + oj, self.idx(a, b, ki, kj));
                            }
                        }
                    }
                }
            }
        }
    }

    fn check_small(&self, m: &FeatureMap) -> Result<()> {
        if m.c != self.c_small {
            return Err(Error::Dimension {
                context: "kernel small side channels",
                expected: self.c_small,
                got: m.c,
            });
        }
        Ok(())
    }

    fn check_large(&self, m: &FeatureMap) -> Result<()> {
        if m.c != self.c_large {
            return Err(Error::Dimension {
                context: "kernel large side channels",
                expected: self.c_large,
                got: m.c,
            });
        }
        Ok(())
    }

    /// Transposed convolution of `small` into a map of the standard output size.
    pub fn deconv(&self, small: &FeatureMap) -> Result<FeatureMap> {
        let h = deconv_out(small.h, self.k, self.stride, self.pad)?;
        let w = deconv_out(small.w, self.k, self.stride, self.pad)?;
        self.expand(small, h, w)
    }

    /// Transposed convolution into an explicit `h x w` output.
    pub fn expand(&self, small: &FeatureMap, h: usize, w: usize) -> Result<FeatureMap> {
        self.check_small(small)?;
        let mut out = FeatureMap::zeros(self.c_large, h, w);
        self.for_each_tap(small.h, small.w, h, w, |s, l, k| out.data[l] += small.data[s] * self.w[k]);
        Ok(out)
    }

    /// Convolution of `large` down to an `h x w` small map (adjoint of expand).
    pub fn conv(&self, large: &FeatureMap, h: usize, w: usize) -> Result<FeatureMap> {
        self.check_large(large)?;
        let mut out = FeatureMap::zeros(self.c_small, h, w);
        self.for_each_tap(h, w, large.h, large.w, |s, l, k| out.data[s] += large.data[l] * self.w[k]);
        Ok(out)
    }

    /// Output size of [`Kernel::conv`] for a large input of size `large`.
    pub fn conv_out(&self, large: usize) -> Result<usize> {
        let span = large + 2 * self.pad;
        if self.stride == 0 || span < self.k {
            return Err(Error::Config(format!("kernel {} does not fit input {large}", self.k)));
        }
        Ok((span - self.k) / self.stride + 1)
    }

    /// d<large, expand(small)>/dw, which is the weight gradient of both
    /// operations (small is input and large the output gradient for deconv,
    /// and the other way round for conv).
    pub fn weight_grad(&self, small: &FeatureMap, large: &FeatureMap) -> Vec<f64> {
        let mut g = vec![0.0; self.w.len()];
        self.for_each_tap(small.h, small.w, large.h, large.w, |s, l, k| g[k] += small.data[s] * large.data[l]);
        g
    }

    /// Transposed convolution as an explicit (large len) x (small len) matrix.
    pub fn unrolled(&self, sh: usize, sw: usize) -> Result<Array2<f64>> {
        let lh = deconv_out(sh, self.k, self.stride, self.pad)?;
        let lw = deconv_out(sw, self.k, self.stride, self.pad)?;
        let mut m = Array2::zeros((self.c_large * lh * lw, self.c_small * sh * sw));
        self.for_each_tap(sh, sw, lh, lw, |s, l, k| m[[l, s]] += self.w[k]);
        Ok(m)
    }
}
