//! Dense `channels × height × width` tensors and the handful of kernels the
//! denoiser needs.
//!
//! Every kernel here is deterministic: the convolution accumulates each
//! output pixel in a fixed order (input channel outermost, then kernel rows,
//! then kernel columns, bias last), so two call sites that convolve the same
//! values get the same bits. The streaming and offline executors rely on this
//! to compare their outputs with zero tolerance.

use crate::error::{config, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    /// Wraps `data` (channel-major, then row-major). Rejects length
    /// mismatches and non-finite entries.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return config(format!(
                "tensor data has {} entries, expected {}x{}x{} = {}",
                data.len(),
                channels,
                height,
                width,
                channels * height * width
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Applies `f` to every entry. The result must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Largest absolute elementwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.dims(), other.dims(), "max_abs_diff on mismatched tensors");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// True when both tensors have the same shape and identical bit patterns.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// A tensor tagged with its temporal index and the number of buffer blocks
/// it has passed through.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub index: i64,
    pub layer: usize,
}

impl FeatureMap {
    pub fn new(tensor: Tensor, index: i64, layer: usize) -> Self {
        Self {
            tensor,
            index,
            layer,
        }
    }
}

/// Convolution parameters for one layer. Kernel layout is
/// `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    out_channels: usize,
    in_channels: usize,
    kernel_size: usize,
    stride: usize,
    padding: usize,
    kernel: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvWeights {
    /// Builds a convolution with "same" padding (`kernel_size / 2`).
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        stride: usize,
        kernel: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        Self::with_padding(
            out_channels,
            in_channels,
            kernel_size,
            stride,
            kernel_size / 2,
            kernel,
            bias,
        )
    }

    pub fn with_padding(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        kernel: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return config("convolution needs at least one input and output channel");
        }
        if kernel_size != 1 && kernel_size != 3 {
            return config(format!("unsupported kernel size {kernel_size}"));
        }
        if stride != 1 && stride != 2 {
            return config(format!("unsupported stride {stride}"));
        }
        if padding > kernel_size / 2 {
            return config(format!(
                "padding {padding} too large for a {kernel_size}x{kernel_size} kernel"
            ));
        }
        let expected = out_channels * in_channels * kernel_size * kernel_size;
        if kernel.len() != expected {
            return config(format!(
                "kernel has {} entries, expected {expected}",
                kernel.len()
            ));
        }
        if bias.len() != out_channels {
            return config(format!(
                "bias has {} entries, expected {out_channels}",
                bias.len()
            ));
        }
        if kernel.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("convolution weights"));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_size,
            stride,
            padding,
            kernel,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn kernel(&self) -> &[f32] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn kernel_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    /// Output spatial size for an input of `height × width`.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let span = |n: usize| {
            (n + 2 * self.padding)
                .checked_sub(self.kernel_size)
                .map(|v| v / self.stride + 1)
        };
        match (span(height), span(width)) {
            (Some(h), Some(w)) if h > 0 && w > 0 => Some((h, w)),
            _ => None,
        }
    }
}

/// 2-D cross-correlation with zero padding.
///
/// Each output pixel is `sum_ic sum_ky sum_kx w * x` accumulated in exactly
/// that order (taps that fall in the padding are skipped, which yields the
/// same bits as adding `+0.0`), then the bias is added.
pub fn conv2d(input: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    if input.channels != w.in_channels {
        return config(format!(
            "conv2d: input has {} channels, weights expect {}",
            input.channels, w.in_channels
        ));
    }
    if input.height == 0 || input.width == 0 {
        return config("conv2d: zero-sized spatial input");
    }
    let (oh, ow) = w
        .output_size(input.height, input.width)
        .ok_or_else(|| Error::Config("conv2d: output would be empty".into()))?;

    let (ih, iw) = (input.height as isize, input.width as isize);
    let (k, s, p) = (w.kernel_size, w.stride as isize, w.padding as isize);
    // Valid output-column range for each kernel column.
    let col_ranges: Vec<(usize, usize)> = (0..k)
        .map(|kx| {
            let valid = |ox: usize| {
                let ix = ox as isize * s + kx as isize - p;
                ix >= 0 && ix < iw
            };
            let lo = (0..ow).find(|&ox| valid(ox)).unwrap_or(ow);
            let hi = (0..ow).rev().find(|&ox| valid(ox)).map_or(lo, |v| v + 1);
            (lo, hi)
        })
        .collect();

    let mut out = Vec::with_capacity(w.out_channels * oh * ow);
    let mut acc = vec![0f32; ow];
    for oc in 0..w.out_channels {
        let bias = w.bias[oc];
        let w_oc = &w.kernel[oc * w.in_channels * k * k..(oc + 1) * w.in_channels * k * k];
        for oy in 0..oh {
            acc.fill(0.0);
            for ic in 0..w.in_channels {
                let plane = input.channel(ic);
                for ky in 0..k {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= ih {
                        continue;
                    }
                    let row = &plane[iy as usize * input.width..(iy as usize + 1) * input.width];
                    for (kx, &(lo, hi)) in col_ranges.iter().enumerate() {
                        let wv = w_oc[(ic * k + ky) * k + kx];
                        let off = kx as isize - p;
                        if s == 1 {
                            let start = (lo as isize + off) as usize;
                            let src = &row[start..start + (hi - lo)];
                            for (a, &x) in acc[lo..hi].iter_mut().zip(src) {
                                *a += wv * x;
                            }
                        } else {
                            for (ox, a) in acc.iter_mut().enumerate().take(hi).skip(lo) {
                                let ix = (ox as isize * s + off) as usize;
                                *a += wv * row[ix];
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&a| a + bias));
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conv2d"));
    }
    Ok(Tensor {
        channels: w.out_channels,
        height: oh,
        width: ow,
        data: out,
    })
}

/// Elementwise clamp to `[0, 6]`.
pub fn relu6(input: &Tensor) -> Tensor {
    Tensor {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data: input.data.iter().map(|&v| v.clamp(0.0, 6.0)).collect(),
    }
}

/// Channel-to-space rearrangement:
/// `out(c, y·r + dy, x·r + dx) = in(c·r² + dy·r + dx, y, x)`.
pub fn pixel_shuffle(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return config("pixel_shuffle: factor must be positive");
    }
    let r2 = factor * factor;
    if !input.channels.is_multiple_of(r2) {
        return config(format!(
            "pixel_shuffle: {} channels not divisible by {r2}",
            input.channels
        ));
    }
    let (oc, oh, ow) = (input.channels / r2, input.height * factor, input.width * factor);
    let mut data = vec![0f32; oc * oh * ow];
    for c in 0..oc {
        for dy in 0..factor {
            for dx in 0..factor {
                let src = input.channel(c * r2 + dy * factor + dx);
                for y in 0..input.height {
                    let dst_row = (c * oh + y * factor + dy) * ow;
                    for x in 0..input.width {
                        data[dst_row + x * factor + dx] = src[y * input.width + x];
                    }
                }
            }
        }
    }
    Ok(Tensor {
        channels: oc,
        height: oh,
        width: ow,
        data,
    })
}

/// Stacks tensors along the channel axis in list order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Config("concat_channels: empty list".into()))?;
    let (h, w) = (first.height, first.width);
    if let Some(bad) = parts.iter().find(|t| t.height != h || t.width != w) {
        return config(format!(
            "concat_channels: spatial mismatch {}x{} vs {}x{}",
            bad.height, bad.width, h, w
        ));
    }
    let channels = parts.iter().map(|t| t.channels).sum();
    let mut data = Vec::with_capacity(channels * h * w);
    for t in parts {
        data.extend_from_slice(&t.data);
    }
    Ok(Tensor {
        channels,
        height: h,
        width: w,
        data,
    })
}

/// Copies channels `[start, end)`.
pub fn slice_channels(input: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    if start >= end || end > input.channels {
        return config(format!(
            "slice_channels: range [{start}, {end}) invalid for {} channels",
            input.channels
        ));
    }
    let n = input.plane_len();
    Ok(Tensor {
        channels: end - start,
        height: input.height,
        width: input.width,
        data: input.data[start * n..end * n].to_vec(),
    })
}

/// Elementwise sum of two tensors of identical shape.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return config(format!(
            "add: shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        ));
    }
    let data: Vec<f32> = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("add"));
    }
    Ok(Tensor {
        channels: a.channels,
        height: a.height,
        width: a.width,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let input = Tensor::filled(1, 3, 3, 1.0);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = ConvWeights::new(1, 1, 3, 1, k, vec![0.0]).unwrap();
        assert!(conv2d(&input, &w).unwrap().bitwise_eq(&input));
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&mut rng, 2, 5, 7);
        let w = ConvWeights::new(3, 2, 3, 1, vec![0.0; 54], vec![0.25, -1.5, 2.0]).unwrap();
        let out = conv2d(&input, &w).unwrap();
        assert_eq!(out.dims(), (3, 5, 7));
        for c in 0..3 {
            assert!(out.channel(c).iter().all(|&v| v == w.bias()[c]));
        }
    }

    #[test]
    fn stride_two_output_size() {
        let w = ConvWeights::new(1, 1, 3, 2, vec![0.0; 9], vec![0.0]).unwrap();
        assert_eq!(w.output_size(8, 8), Some((4, 4)));
        assert_eq!(w.output_size(7, 5), Some((4, 3)));
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_empty_input() {
        let w = ConvWeights::new(1, 2, 3, 1, vec![0.0; 18], vec![0.0]).unwrap();
        assert!(matches!(
            conv2d(&Tensor::zeros(3, 4, 4), &w),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            conv2d(&Tensor::zeros(2, 0, 4), &w),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_weights_validation() {
        assert!(ConvWeights::new(1, 1, 5, 1, vec![0.0; 25], vec![0.0]).is_err());
        assert!(ConvWeights::new(1, 1, 3, 3, vec![0.0; 9], vec![0.0]).is_err());
        assert!(ConvWeights::new(1, 1, 3, 1, vec![0.0; 8], vec![0.0]).is_err());
        assert!(ConvWeights::new(2, 1, 3, 1, vec![0.0; 18], vec![0.0]).is_err());
        assert!(ConvWeights::new(1, 1, 3, 1, vec![f32::NAN; 9], vec![0.0]).is_err());
    }

    #[test]
    fn relu6_clamps() {
        let t = Tensor::new(3, 1, 1, vec![7.0, -1.0, 3.5]).unwrap();
        assert_eq!(relu6(&t).data(), &[6.0, 0.0, 3.5]);
    }

    #[test]
    fn pixel_shuffle_unit_spatial() {
        let t = Tensor::new(4, 1, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = pixel_shuffle(&t, 2).unwrap();
        assert_eq!(out.dims(), (1, 2, 2));
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_shuffle_factor_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_tensor(&mut rng, 3, 4, 5);
        assert!(pixel_shuffle(&t, 1).unwrap().bitwise_eq(&t));
    }

    #[test]
    fn pixel_shuffle_matches_index_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_tensor(&mut rng, 8, 2, 2);
        let out = pixel_shuffle(&t, 2).unwrap();
        assert_eq!(out.dims(), (2, 4, 4));
        for c in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            assert_eq!(
                                out.get(c, y * 2 + dy, x * 2 + dx).to_bits(),
                                t.get(c * 4 + dy * 2 + dx, y, x).to_bits()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible_channels() {
        assert!(pixel_shuffle(&Tensor::zeros(6, 2, 2), 2).is_err());
    }

    #[test]
    fn concat_and_slice_basics() {
        let a = Tensor::filled(2, 2, 2, 1.0);
        let b = Tensor::filled(3, 2, 2, 2.0);
        let ab = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.channels(), 5);
        assert!(slice_channels(&ab, 0, 2).unwrap().bitwise_eq(&a));
        assert!(slice_channels(&ab, 2, 5).unwrap().bitwise_eq(&b));
        assert!(concat_channels(&[&a]).unwrap().bitwise_eq(&a));
        assert!(concat_channels(&[&a, &Tensor::zeros(1, 3, 2)]).is_err());
        assert!(slice_channels(&a, 1, 1).is_err());
        assert!(slice_channels(&a, 0, 3).is_err());
    }

    #[test]
    fn slice_with_shift_ratio_eight() {
        let t = Tensor::from_fn(64, 1, 1, |c, _, _| c as f32).unwrap();
        let f = 64 / 8;
        assert_eq!(f, 8);
        assert_eq!(slice_channels(&t, 0, f).unwrap().data(), &(0..8).map(|v| v as f32).collect::<Vec<_>>()[..]);
        assert_eq!(
            slice_channels(&t, 64 - f, 64).unwrap().data(),
            &(56..64).map(|v| v as f32).collect::<Vec<_>>()[..]
        );
    }

    #[test]
    fn add_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_tensor(&mut rng, 2, 3, 3);
        let b = random_tensor(&mut rng, 2, 3, 3);
        assert!(add(&a, &Tensor::zeros(2, 3, 3)).unwrap().bitwise_eq(&a));
        let neg = a.map(|v| -v).unwrap();
        assert!(add(&a, &neg).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(add(&a, &b).unwrap().bitwise_eq(&add(&b, &a).unwrap()));
        assert!(add(&a, &Tensor::zeros(1, 3, 3)).is_err());
    }

    #[test]
    fn tensor_rejects_bad_data() {
        assert!(Tensor::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor::new(1, 1, 1, vec![f32::INFINITY]).is_err());
    }

    proptest! {
        #[test]
        fn concat_slice_partition(c in 2usize..12, split in 1usize..11, seed in any::<u64>()) {
            prop_assume!(split < c);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, c, 3, 2);
            let lo = slice_channels(&x, 0, split).unwrap();
            let hi = slice_channels(&x, split, c).unwrap();
            prop_assert!(concat_channels(&[&lo, &hi]).unwrap().bitwise_eq(&x));
        }

        #[test]
        fn pixel_shuffle_inverse_mapping(cout in 1usize..4, factor in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_tensor(&mut rng, cout * factor * factor, h, w);
            let y = pixel_shuffle(&x, factor).unwrap();
            let back = Tensor::from_fn(x.channels(), h, w, |c, yy, xx| {
                let (co, rem) = (c / (factor * factor), c % (factor * factor));
                y.get(co, yy * factor + rem / factor, xx * factor + rem % factor)
            }).unwrap();
            prop_assert!(back.bitwise_eq(&x));
        }
    }
}
