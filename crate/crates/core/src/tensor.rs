//! Dense 3-D tensors and the forward kernels every architecture is built from.
//!
//! Tensors are stored row-major in `(time, freq, channels)` order. Two
//! convolution paths exist: [`conv2d_valid`] is the direct reference loop and
//! [`conv2d_optimized`] reorders the loops so the innermost work is a
//! contiguous axpy over output channels. Both accumulate every output in the
//! same `(i, j, c)` order, so they agree to the last bit up to the sign of zero.

use std::borrow::Cow;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Axis, KwsError, Result};

/// Floating point element type of tensors (`f32` for storage and inference,
/// `f64` for gradient verification).
pub trait Scalar:
    Float + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Receives one tick per scalar multiply executed by a counted kernel.
pub trait MacCounter {
    fn tick(&mut self);
}

/// Counter that discards ticks; compiles away entirely.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCount;

impl MacCounter for NoCount {
    #[inline(always)]
    fn tick(&mut self) {}
}

impl MacCounter for u64 {
    #[inline(always)]
    fn tick(&mut self) {
        *self += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3 {
    pub time: usize,
    pub freq: usize,
    pub channels: usize,
}

impl Dims3 {
    pub const fn new(time: usize, freq: usize, channels: usize) -> Self {
        Dims3 { time, freq, channels }
    }

    pub const fn len(&self) -> usize {
        self.time * self.freq * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.time, self.freq, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T = f32> {
    dims: Dims3,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(dims: Dims3, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(KwsError::Shape {
                op: "tensor",
                axis: Axis::Length,
                expected: dims.len(),
                found: data.len(),
            });
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn zeros(dims: Dims3) -> Self {
        Tensor3 {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn from_fn(dims: Dims3, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.time {
            for q in 0..dims.freq {
                for c in 0..dims.channels {
                    data.push(f(t, q, c));
                }
            }
        }
        Tensor3 { dims, data }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, t: usize, f: usize, c: usize) -> usize {
        (t * self.dims.freq + f) * self.dims.channels + c
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize, c: usize) -> T {
        self.data[self.index(t, f, c)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Convolution strides: `time` is the step in frames, `freq` in bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StridePair {
    pub time: usize,
    pub freq: usize,
}

impl StridePair {
    pub const UNIT: StridePair = StridePair { time: 1, freq: 1 };

    pub fn new(time: usize, freq: usize) -> Result<Self> {
        if time == 0 || freq == 0 {
            return Err(KwsError::InvalidConfig(format!(
                "strides must be >= 1 (got time {time}, freq {freq})"
            )));
        }
        Ok(StridePair { time, freq })
    }
}

/// Non-overlapping pooling region; a size of 1 leaves that axis untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolPair {
    pub time: usize,
    pub freq: usize,
}

impl PoolPair {
    pub const NONE: PoolPair = PoolPair { time: 1, freq: 1 };

    pub fn new(time: usize, freq: usize) -> Result<Self> {
        if time == 0 || freq == 0 {
            return Err(KwsError::InvalidConfig(format!(
                "pool sizes must be >= 1 (got time {time}, freq {freq})"
            )));
        }
        Ok(PoolPair { time, freq })
    }

    pub fn is_identity(&self) -> bool {
        self.time == 1 && self.freq == 1
    }
}

/// `n` convolution kernels of `m` frames by `r` bins over `c_in` channels.
///
/// Weights are laid out `[m][r][c_in][n]`, so the `n` output-channel weights
/// for one tap are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<'a, T: Clone = f32> {
    pub m: usize,
    pub r: usize,
    pub c_in: usize,
    pub n: usize,
    weights: Cow<'a, [T]>,
    bias: Cow<'a, [T]>,
}

impl<'a, T: Scalar> FilterBank<'a, T> {
    pub fn new(
        m: usize,
        r: usize,
        c_in: usize,
        n: usize,
        weights: impl Into<Cow<'a, [T]>>,
        bias: impl Into<Cow<'a, [T]>>,
    ) -> Result<Self> {
        if m == 0 || r == 0 || c_in == 0 || n == 0 {
            return Err(KwsError::InvalidConfig(format!(
                "filter bank sizes must be >= 1 (m {m}, r {r}, c_in {c_in}, n {n})"
            )));
        }
        let weights = weights.into();
        let bias = bias.into();
        if weights.len() != m * r * c_in * n {
            return Err(KwsError::Shape {
                op: "filter bank weights",
                axis: Axis::Length,
                expected: m * r * c_in * n,
                found: weights.len(),
            });
        }
        if bias.len() != n {
            return Err(KwsError::Shape {
                op: "filter bank bias",
                axis: Axis::Length,
                expected: n,
                found: bias.len(),
            });
        }
        Ok(FilterBank {
            m,
            r,
            c_in,
            n,
            weights,
            bias,
        })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    #[inline]
    pub fn weight_index(&self, i: usize, j: usize, c: usize, k: usize) -> usize {
        ((i * self.r + j) * self.c_in + c) * self.n + k
    }
}

/// Row-major `rows x cols` matrix (`out x in` for a dense layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<'a, T: Clone = f32> {
    pub rows: usize,
    pub cols: usize,
    data: Cow<'a, [T]>,
}

impl<'a, T: Scalar> Matrix<'a, T> {
    pub fn new(rows: usize, cols: usize, data: impl Into<Cow<'a, [T]>>) -> Result<Self> {
        let data = data.into();
        if data.len() != rows * cols {
            return Err(KwsError::Shape {
                op: "matrix",
                axis: Axis::Length,
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
    Softmax,
}

/// Output dimensions of a valid convolution, or the first axis that fails.
pub fn conv_output_dims(input: Dims3, m: usize, r: usize, n: usize, strides: StridePair) -> Result<Dims3> {
    if m > input.time {
        return Err(KwsError::Shape {
            op: "conv2d",
            axis: Axis::Time,
            expected: m,
            found: input.time,
        });
    }
    if r > input.freq {
        return Err(KwsError::Shape {
            op: "conv2d",
            axis: Axis::Freq,
            expected: r,
            found: input.freq,
        });
    }
    Ok(Dims3::new(
        (input.time - m) / strides.time + 1,
        (input.freq - r) / strides.freq + 1,
        n,
    ))
}

fn check_conv<T: Scalar>(input: &Tensor3<T>, filters: &FilterBank<'_, T>, strides: StridePair) -> Result<Dims3> {
    if strides.time == 0 || strides.freq == 0 {
        return Err(KwsError::InvalidConfig("conv2d strides must be >= 1".into()));
    }
    if input.dims.channels != filters.c_in {
        return Err(KwsError::Shape {
            op: "conv2d",
            axis: Axis::Channels,
            expected: filters.c_in,
            found: input.dims.channels,
        });
    }
    conv_output_dims(input.dims, filters.m, filters.r, filters.n, strides)
}

/// Valid 2-D cross-correlation, direct loop. Reference for every other path.
pub fn conv2d_valid<T: Scalar>(
    input: &Tensor3<T>,
    filters: &FilterBank<'_, T>,
    strides: StridePair,
) -> Result<Tensor3<T>> {
    conv2d_valid_counted(input, filters, strides, &mut NoCount)
}

pub(crate) fn conv2d_valid_counted<T: Scalar, C: MacCounter>(
    input: &Tensor3<T>,
    filters: &FilterBank<'_, T>,
    strides: StridePair,
    macs: &mut C,
) -> Result<Tensor3<T>> {
    let out_dims = check_conv(input, filters, strides)?;
    let w = filters.weights();
    let b = filters.bias();
    let mut out = Tensor3::zeros(out_dims);
    for t in 0..out_dims.time {
        for f in 0..out_dims.freq {
            for k in 0..filters.n {
                let mut acc = b[k];
                for i in 0..filters.m {
                    for j in 0..filters.r {
                        for c in 0..filters.c_in {
                            let x = input.get(t * strides.time + i, f * strides.freq + j, c);
                            acc += x * w[filters.weight_index(i, j, c, k)];
                            macs.tick();
                        }
                    }
                }
                let idx = out.index(t, f, k);
                out.data[idx] = acc;
            }
        }
    }
    Ok(out)
}

/// Same result as [`conv2d_valid`], computed as one contiguous axpy over the
/// output channels per input tap. Zero inputs (common after ReLU) are skipped.
pub fn conv2d_optimized<T: Scalar>(
    input: &Tensor3<T>,
    filters: &FilterBank<'_, T>,
    strides: StridePair,
) -> Result<Tensor3<T>> {
    let out_dims = check_conv(input, filters, strides)?;
    let n = filters.n;
    let tap_len = filters.r * filters.c_in;
    let in_row = input.dims.freq * input.dims.channels;
    let w = filters.weights();
    let mut out = vec![T::zero(); out_dims.len()];

    for (t, out_row) in out.chunks_exact_mut(out_dims.freq * n).enumerate() {
        for (f, acc) in out_row.chunks_exact_mut(n).enumerate() {
            acc.copy_from_slice(filters.bias());
            for i in 0..filters.m {
                let start = (t * strides.time + i) * in_row + f * strides.freq * filters.c_in;
                let patch = &input.data[start..start + tap_len];
                let taps = &w[i * tap_len * n..(i + 1) * tap_len * n];
                for (&x, wk) in patch.iter().zip(taps.chunks_exact(n)) {
                    if x == T::zero() {
                        continue;
                    }
                    for (a, &wv) in acc.iter_mut().zip(wk) {
                        *a += x * wv;
                    }
                }
            }
        }
    }
    Tensor3::new(out_dims, out)
}

fn check_pool(dims: Dims3, pool: PoolPair) -> Result<Dims3> {
    if pool.time == 0 || pool.freq == 0 {
        return Err(KwsError::InvalidConfig("pool size must be >= 1".into()));
    }
    if pool.time > dims.time {
        return Err(KwsError::Shape {
            op: "maxpool",
            axis: Axis::Time,
            expected: pool.time,
            found: dims.time,
        });
    }
    if pool.freq > dims.freq {
        return Err(KwsError::Shape {
            op: "maxpool",
            axis: Axis::Freq,
            expected: pool.freq,
            found: dims.freq,
        });
    }
    Ok(Dims3::new(dims.time / pool.time, dims.freq / pool.freq, dims.channels))
}

/// Output dimensions of non-overlapping pooling (remainders dropped).
pub fn pool_output_dims(dims: Dims3, pool: PoolPair) -> Result<Dims3> {
    check_pool(dims, pool)
}

/// Non-overlapping max pooling; trailing frames/bins that do not fill a
/// window are dropped.
pub fn maxpool<T: Scalar>(input: &Tensor3<T>, pool: PoolPair) -> Result<Tensor3<T>> {
    maxpool_with_argmax(input, pool).map(|(out, _)| out)
}

/// Max pooling that also returns, for every output element, the flat input
/// index it was taken from. Ties resolve to the earliest index.
pub fn maxpool_with_argmax<T: Scalar>(input: &Tensor3<T>, pool: PoolPair) -> Result<(Tensor3<T>, Vec<usize>)> {
    let out_dims = check_pool(input.dims, pool)?;
    let mut out = Vec::with_capacity(out_dims.len());
    let mut arg = Vec::with_capacity(out_dims.len());
    for t in 0..out_dims.time {
        for f in 0..out_dims.freq {
            for c in 0..out_dims.channels {
                let mut best_idx = input.index(t * pool.time, f * pool.freq, c);
                let mut best = input.data[best_idx];
                for i in 0..pool.time {
                    for j in 0..pool.freq {
                        let idx = input.index(t * pool.time + i, f * pool.freq + j, c);
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor3::new(out_dims, out)?, arg))
}

/// Flattens in `(time, freq, channels)` order.
pub fn flatten<T: Scalar>(input: &Tensor3<T>) -> Vec<T> {
    input.data.clone()
}

/// Inverse of [`flatten`] for known dimensions.
pub fn unflatten<T: Scalar>(dims: Dims3, data: Vec<T>) -> Result<Tensor3<T>> {
    Tensor3::new(dims, data)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `act(W x + b)`.
pub fn dense<T: Scalar>(input: &[T], weights: &Matrix<'_, T>, bias: &[T], activation: Activation) -> Result<Vec<T>> {
    dense_counted(input, weights, Some(bias), activation, &mut NoCount)
}

/// Bias-free linear map `W x` (the low-rank bottleneck).
pub fn linear<T: Scalar>(input: &[T], weights: &Matrix<'_, T>) -> Result<Vec<T>> {
    dense_counted(input, weights, None, Activation::None, &mut NoCount)
}

pub(crate) fn dense_counted<T: Scalar, C: MacCounter>(
    input: &[T],
    weights: &Matrix<'_, T>,
    bias: Option<&[T]>,
    activation: Activation,
    macs: &mut C,
) -> Result<Vec<T>> {
    if weights.cols != input.len() {
        return Err(KwsError::Shape {
            op: "dense input",
            axis: Axis::Length,
            expected: weights.cols,
            found: input.len(),
        });
    }
    if let Some(b) = bias {
        if b.len() != weights.rows {
            return Err(KwsError::Shape {
                op: "dense bias",
                axis: Axis::Length,
                expected: weights.rows,
                found: b.len(),
            });
        }
    }
    let mut out: Vec<T> = (0..weights.rows)
        .map(|o| {
            let mut acc = bias.map_or(T::zero(), |b| b[o]);
            for (&w, &x) in weights.row(o).iter().zip(input) {
                acc += w * x;
                macs.tick();
            }
            acc
        })
        .collect();
    match activation {
        Activation::Relu => out.iter_mut().for_each(|y| *y = y.max(T::zero())),
        Activation::None => {}
        Activation::Softmax => out = softmax(&out),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, dims: Dims3) -> Tensor3<f32> {
        Tensor3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_bank(rng: &mut ChaCha8Rng, m: usize, r: usize, c: usize, n: usize) -> FilterBank<'static, f32> {
        let w: Vec<f32> = (0..m * r * c * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        FilterBank::new(m, r, c, n, w, b).unwrap()
    }

    fn max_rel_dev(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = (x as f64 - y as f64).abs();
                let s = (x as f64).abs().max((y as f64).abs());
                if s == 0.0 {
                    d
                } else {
                    d / s
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_shape_for_trad_first_layer() {
        let input = Tensor3::<f32>::zeros(Dims3::new(32, 40, 1));
        let bank = FilterBank::new(21, 9, 1, 64, vec![0.0; 21 * 9 * 64], vec![0.0; 64]).unwrap();
        let out = conv2d_valid(&input, &bank, StridePair::UNIT).unwrap();
        assert_eq!(out.dims(), Dims3::new(12, 32, 64));
    }

    #[test]
    fn conv_two_by_two_diagonal() {
        let input = Tensor3::new(Dims3::new(2, 2, 1), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let bank = FilterBank::new(2, 2, 1, 1, vec![1.0f32, 0.0, 0.0, 1.0], vec![0.0]).unwrap();
        let out = conv2d_valid(&input, &bank, StridePair::UNIT).unwrap();
        assert_eq!(out.dims(), Dims3::new(1, 1, 1));
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn identity_kernel_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&mut rng, Dims3::new(5, 7, 1));
        let bank = FilterBank::new(1, 1, 1, 1, vec![1.0f32], vec![0.0]).unwrap();
        assert_eq!(conv2d_valid(&input, &bank, StridePair::UNIT).unwrap(), input);
        assert_eq!(conv2d_optimized(&input, &bank, StridePair::UNIT).unwrap(), input);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor3::<f32>::zeros(Dims3::new(4, 4, 2));
        let bank = FilterBank::new(2, 2, 1, 1, vec![0.0f32; 4], vec![0.0]).unwrap();
        match conv2d_valid(&input, &bank, StridePair::UNIT) {
            Err(KwsError::Shape { axis: Axis::Channels, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let small = Tensor3::<f32>::zeros(Dims3::new(1, 4, 1));
        match conv2d_optimized(&small, &bank, StridePair::UNIT) {
            Err(KwsError::Shape { axis: Axis::Time, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn optimized_matches_naive_on_trad_conv1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = random_tensor(&mut rng, Dims3::new(32, 40, 1));
        let bank = random_bank(&mut rng, 21, 9, 1, 64);
        let a = conv2d_valid(&input, &bank, StridePair::UNIT).unwrap();
        let b = conv2d_optimized(&input, &bank, StridePair::UNIT).unwrap();
        assert_eq!(b.dims(), Dims3::new(12, 32, 64));
        assert!(max_rel_dev(a.data(), b.data()) < 1e-5);
    }

    #[test]
    fn maxpool_drops_trailing_bins() {
        let input = Tensor3::new(Dims3::new(1, 7, 1), vec![1.0f32, 5.0, 3.0, 2.0, 2.0, 2.0, 9.0]).unwrap();
        let (out, arg) = maxpool_with_argmax(&input, PoolPair::new(1, 3).unwrap()).unwrap();
        assert_eq!(out.data(), &[5.0, 2.0]);
        // tie among the three 2.0s resolves to the first
        assert_eq!(arg, vec![1, 3]);
    }

    #[test]
    fn maxpool_shapes_and_errors() {
        let input = Tensor3::<f32>::zeros(Dims3::new(12, 32, 64));
        let out = maxpool(&input, PoolPair::new(1, 3).unwrap()).unwrap();
        assert_eq!(out.dims(), Dims3::new(12, 10, 64));
        assert!(PoolPair::new(0, 3).is_err());
        assert!(maxpool(&input, PoolPair { time: 0, freq: 1 }).is_err());
        assert!(maxpool(&input, PoolPair { time: 13, freq: 1 }).is_err());
    }

    #[test]
    fn dense_examples() {
        let w = Matrix::new(1, 2, vec![1.0f32, 1.0]).unwrap();
        assert_eq!(dense(&[2.0, 3.0], &w, &[1.0], Activation::None).unwrap(), vec![6.0]);

        let eye = Matrix::new(2, 2, vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense(&[-1.0, 2.0], &eye, &[0.0, 0.0], Activation::Relu).unwrap(), vec![0.0, 2.0]);

        let p = dense(&[0.0f32, 0.0], &eye, &[0.0, 0.0], Activation::Softmax).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        assert!(matches!(
            dense(&[1.0f32], &w, &[0.0], Activation::None),
            Err(KwsError::Shape { .. })
        ));
    }

    #[test]
    fn linear_has_no_bias() {
        let w = Matrix::new(2, 3, vec![1.0f64, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(linear(&[1.0, 1.0, 1.0], &w).unwrap(), vec![6.0, 0.0]);
    }

    #[test]
    fn counted_kernels_tick_once_per_multiply() {
        let input = Tensor3::<f32>::zeros(Dims3::new(6, 5, 2));
        let bank = FilterBank::new(3, 2, 2, 4, vec![0.0f32; 48], vec![0.0; 4]).unwrap();
        let mut macs = 0u64;
        let out = conv2d_valid_counted(&input, &bank, StridePair::new(2, 1).unwrap(), &mut macs).unwrap();
        assert_eq!(out.dims(), Dims3::new(2, 4, 4));
        assert_eq!(macs, (2 * 4 * 3 * 2 * 2 * 4) as u64);

        let w = Matrix::new(3, 5, vec![0.0f32; 15]).unwrap();
        let mut macs = 0u64;
        dense_counted(&[0.0; 5], &w, None, Activation::None, &mut macs).unwrap();
        assert_eq!(macs, 15);
    }

    #[test]
    fn flatten_roundtrip() {
        let t = Tensor3::new(Dims3::new(1, 2, 1), vec![4.0f32, 7.0]).unwrap();
        assert_eq!(flatten(&t), vec![4.0, 7.0]);
        let big = Tensor3::<f32>::zeros(Dims3::new(3, 7, 64));
        assert_eq!(flatten(&big).len(), 1344);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_tensor(&mut rng, Dims3::new(3, 4, 2));
        assert_eq!(unflatten(r.dims(), flatten(&r)).unwrap(), r);
    }

    #[test]
    fn optimized_agrees_on_1000_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let dims = Dims3::new(rng.random_range(1..16), rng.random_range(1..16), rng.random_range(1..4));
            let m = rng.random_range(1..=dims.time);
            let r = rng.random_range(1..=dims.freq);
            let n = rng.random_range(1..9);
            let strides = StridePair::new(rng.random_range(1..4), rng.random_range(1..4)).unwrap();
            let input = random_tensor(&mut rng, dims);
            let bank = random_bank(&mut rng, m, r, dims.channels, n);
            let a = conv2d_valid(&input, &bank, strides).unwrap();
            let b = conv2d_optimized(&input, &bank, strides).unwrap();
            assert_eq!(a.dims(), b.dims());
            assert!(max_rel_dev(a.data(), b.data()) < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn conv_shape_law(
            time in 1usize..24, freq in 1usize..24, c in 1usize..3,
            m_frac in 0.0f64..1.0, r_frac in 0.0f64..1.0,
            s in 1usize..5, v in 1usize..5, n in 1usize..4,
        ) {
            let m = 1 + ((time - 1) as f64 * m_frac) as usize;
            let r = 1 + ((freq - 1) as f64 * r_frac) as usize;
            let input = Tensor3::<f32>::zeros(Dims3::new(time, freq, c));
            let bank = FilterBank::new(m, r, c, n, vec![0.0f32; m * r * c * n], vec![0.0; n]).unwrap();
            let out = conv2d_optimized(&input, &bank, StridePair::new(s, v).unwrap()).unwrap();
            prop_assert_eq!(out.dims(), Dims3::new((time - m) / s + 1, (freq - r) / v + 1, n));
        }

        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in proptest::collection::vec(-30.0f32..30.0, 2..12),
            shift in -50.0f32..50.0,
        ) {
            let p = softmax(&logits);
            let sum: f64 = p.iter().map(|&x| x as f64).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&x| x.is_finite() && (0.0..=1.0).contains(&x)));
            let p64 = softmax(&logits.iter().map(|&x| x as f64).collect::<Vec<_>>());
            let shifted = softmax(&logits.iter().map(|&x| x as f64 + shift as f64).collect::<Vec<_>>());
            for (a, b) in p64.iter().zip(&shifted) {
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-300));
            }
        }

        #[test]
        fn maxpool_identity_and_positive_scaling(
            time in 1usize..10, freq in 1usize..10, p in 1usize..4, q in 1usize..4,
            lambda in 0.01f64..20.0, seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor3::from_fn(Dims3::new(time, freq, 2), |_, _, _| rng.random_range(-5.0..5.0f64));
            prop_assert_eq!(maxpool(&x, PoolPair::NONE).unwrap(), x.clone());
            if p <= time && q <= freq {
                let pool = PoolPair::new(p, q).unwrap();
                let a = maxpool(&x.map(|v| v * lambda), pool).unwrap();
                let b = maxpool(&x, pool).unwrap().map(|v| v * lambda);
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn finite_inputs_give_finite_outputs(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor3::from_fn(Dims3::new(8, 9, 2), |_, _, _| rng.random_range(-1e3..1e3f32));
            let bank = random_bank(&mut rng, 3, 4, 2, 3);
            let y = conv2d_optimized(&x, &bank, StridePair::UNIT).unwrap();
            prop_assert!(y.is_finite());
            let pooled = maxpool(&y, PoolPair::new(2, 2).unwrap()).unwrap();
            prop_assert!(pooled.is_finite());
            let flat = flatten(&pooled);
            let w = Matrix::new(2, flat.len(), vec![0.5f32; 2 * flat.len()]).unwrap();
            let p = dense(&flat, &w, &[0.0, 1e4], Activation::Softmax).unwrap();
            prop_assert!(p.iter().all(|v| v.is_finite()));
        }
    }
}
