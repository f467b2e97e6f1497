//! Strided 1-D convolution over raw samples.
//!
//! A layer holds `K` kernels of length `L` that slide over the input with
//! stride `S`. Window `m` (1-based) covers samples `(m-1)·S .. (m-1)·S + L`
//! and produces the frame `y_m`, the vector of all `K` kernel responses at
//! that position. Convolution here is cross-correlation: kernels are not
//! flipped.
//!
//! Two evaluation routes exist. [`conv1d_forward`] and [`conv1d_backward`]
//! work on a single segment with explicit loops and return kernel-major
//! [`FeatureMaps`]. [`KernelBank::forward_batch`] and
//! [`KernelBank::backward_batch`] lay windows out as rows of a matrix and use
//! matrix products; the model and trainer use these, and the tests hold the
//! two routes against each other.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::Scalar;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Number of windows of length `kernel_len` and hop `stride` that fit in `span` samples.
pub fn output_map_size(span: usize, kernel_len: usize, stride: usize) -> Result<usize> {
    if kernel_len == 0 || stride == 0 {
        return Err(Error::InvalidGeometry(format!(
            "kernel length {kernel_len} and stride {stride} must be at least 1"
        )));
    }
    if span < kernel_len {
        return Err(Error::InvalidGeometry(format!(
            "span {span} shorter than kernel length {kernel_len}"
        )));
    }
    Ok((span - kernel_len) / stride + 1)
}

/// Smallest input span producing `map_size` windows: `(M-1)·S + L`.
///
/// # Panics
/// If any argument is zero.
pub fn required_span(map_size: usize, stride: usize, kernel_len: usize) -> usize {
    assert!(
        map_size >= 1 && stride >= 1 && kernel_len >= 1,
        "map size, stride and kernel length must all be at least 1"
    );
    (map_size - 1) * stride + kernel_len
}

/// Converts a sample count into milliseconds.
pub fn samples_to_ms(samples: usize, sample_rate: u32) -> f64 {
    samples as f64 * 1000.0 / sample_rate as f64
}

/// A mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Scalar> Signal<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidGeometry("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidGeometry("signal must hold at least one sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// A 16 kHz signal.
    pub fn from_samples(samples: Vec<T>) -> Result<Self> {
        Self::new(samples, DEFAULT_SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [T] {
        &mut self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// The trainable parameters of one strided convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank<T> {
    /// `K × L`, row `k` is kernel `w_k`.
    weights: Array2<T>,
    biases: Array1<T>,
    stride: usize,
}

impl<T: Scalar> KernelBank<T> {
    pub fn new(weights: Array2<T>, biases: Array1<T>, stride: usize) -> Result<Self> {
        let (k, l) = weights.dim();
        if k == 0 || l == 0 {
            return Err(Error::InvalidGeometry(format!(
                "kernel bank must be at least 1 x 1, got {k} x {l}"
            )));
        }
        if biases.len() != k {
            return Err(Error::Shape(format!(
                "{} biases for {k} kernels",
                biases.len()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidGeometry("stride must be at least 1".into()));
        }
        Ok(Self {
            weights,
            biases,
            stride,
        })
    }

    pub fn zeros(num_kernels: usize, kernel_len: usize, stride: usize) -> Result<Self> {
        Self::new(
            Array2::zeros((num_kernels, kernel_len)),
            Array1::zeros(num_kernels),
            stride,
        )
    }

    /// Glorot-uniform weights treating each window as an `L → K` dense map; zero biases.
    pub fn random<R: Rng + ?Sized>(
        num_kernels: usize,
        kernel_len: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weights = glorot_uniform(num_kernels, kernel_len, kernel_len, num_kernels, rng);
        Self::new(weights, Array1::zeros(num_kernels), stride)
    }

    pub fn num_kernels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn kernel_len(&self) -> usize {
        self.weights.ncols()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<T> {
        &mut self.weights
    }

    pub fn biases(&self) -> &Array1<T> {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut Array1<T> {
        &mut self.biases
    }

    pub fn parts_mut(&mut self) -> (&mut Array2<T>, &mut Array1<T>) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn kernel(&self, k: usize) -> ArrayView1<'_, T> {
        self.weights.row(k)
    }

    /// Map size for an input of `span` samples.
    pub fn map_size(&self, span: usize) -> Result<usize> {
        output_map_size(span, self.kernel_len(), self.stride)
    }

    /// Forward pass over a batch of equal-length inputs (`B × T`).
    ///
    /// Returns the window matrix (needed by the backward pass) and the outputs
    /// as `B × (M·K)` in frame-major order, before any activation.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, T>) -> Result<BankForward<T>> {
        let (batch, span) = inputs.dim();
        let map_size = self.map_size(span)?;
        let windows = im2col(inputs, self.kernel_len(), self.stride, map_size);
        let mut out = windows.dot(&self.weights.t());
        out += &self.biases;
        let outputs = standard_layout(out)
            .into_shape_with_order((batch, map_size * self.num_kernels()))
            .expect("contiguous matmul output");
        Ok(BankForward {
            windows,
            outputs,
            map_size,
        })
    }

    /// Backward pass matching [`KernelBank::forward_batch`].
    ///
    /// `d_outputs` is `B × (M·K)` frame-major; the input gradient, when
    /// requested, is `B × input_len`.
    pub fn backward_batch(
        &self,
        windows: &Array2<T>,
        d_outputs: ArrayView2<'_, T>,
        input_len: usize,
        want_input_grad: bool,
    ) -> Result<BankGradients<T>> {
        let (batch, width) = d_outputs.dim();
        let k = self.num_kernels();
        let map_size = self.map_size(input_len)?;
        if width != map_size * k || windows.nrows() != batch * map_size {
            return Err(Error::Shape(format!(
                "upstream gradient {batch} x {width} does not match {map_size} frames of {k} kernels"
            )));
        }
        let d_rows = standard_layout(d_outputs.to_owned())
            .into_shape_with_order((batch * map_size, k))
            .expect("contiguous upstream gradient");
        let weights = d_rows.t().dot(windows);
        let biases = d_rows.sum_axis(Axis(0));
        let inputs = want_input_grad.then(|| {
            let d_windows = d_rows.dot(&self.weights);
            col2im(&d_windows, batch, input_len, self.stride, map_size)
        });
        Ok(BankGradients {
            weights,
            biases,
            inputs,
        })
    }
}

/// Cached result of [`KernelBank::forward_batch`].
#[derive(Debug, Clone)]
pub struct BankForward<T> {
    /// `(B·M) × L`, one row per window.
    pub windows: Array2<T>,
    /// `B × (M·K)`, frame-major.
    pub outputs: Array2<T>,
    pub map_size: usize,
}

#[derive(Debug, Clone)]
pub struct BankGradients<T> {
    pub weights: Array2<T>,
    pub biases: Array1<T>,
    pub inputs: Option<Array2<T>>,
}

pub(crate) fn standard_layout<T: Scalar>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Copies every window of every batch row into its own matrix row.
fn im2col<T: Scalar>(
    inputs: ArrayView2<'_, T>,
    kernel_len: usize,
    stride: usize,
    map_size: usize,
) -> Array2<T> {
    let batch = inputs.nrows();
    let mut windows = Array2::zeros((batch * map_size, kernel_len));
    for (b, input) in inputs.outer_iter().enumerate() {
        for m in 0..map_size {
            let start = m * stride;
            windows
                .row_mut(b * map_size + m)
                .assign(&input.slice(ndarray::s![start..start + kernel_len]));
        }
    }
    windows
}

/// Scatter-adds window gradients back onto the input positions they were read from.
fn col2im<T: Scalar>(
    d_windows: &Array2<T>,
    batch: usize,
    input_len: usize,
    stride: usize,
    map_size: usize,
) -> Array2<T> {
    let kernel_len = d_windows.ncols();
    let mut d_inputs = Array2::zeros((batch, input_len));
    for b in 0..batch {
        let mut row = d_inputs.row_mut(b);
        for m in 0..map_size {
            let start = m * stride;
            let mut dst = row.slice_mut(ndarray::s![start..start + kernel_len]);
            dst += &d_windows.row(b * map_size + m);
        }
    }
    d_inputs
}

/// Kernel-major output of one layer: row `k` is the output feature map of kernel `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps<T> {
    maps: Array2<T>,
}

impl<T: Scalar> FeatureMaps<T> {
    pub fn new(maps: Array2<T>) -> Self {
        Self { maps }
    }

    pub fn maps(&self) -> &Array2<T> {
        &self.maps
    }

    pub fn num_kernels(&self) -> usize {
        self.maps.nrows()
    }

    pub fn map_size(&self) -> usize {
        self.maps.ncols()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.maps
    }
}

/// The `K` responses at one window position.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVector<T>(Array1<T>);

impl<T: Scalar> FrameVector<T> {
    pub fn values(&self) -> &Array1<T> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Array1<T> {
        self.0
    }
}

/// Convolves every kernel of `bank` over `segment`.
///
/// `maps[k][m] = b_k + Σ_j w_k[j] · x[m·S + j]` with `m` counted from zero.
pub fn conv1d_forward<T: Scalar>(segment: &[T], bank: &KernelBank<T>) -> Result<FeatureMaps<T>> {
    let map_size = bank.map_size(segment.len())?;
    let stride = bank.stride();
    let mut maps = Array2::zeros((bank.num_kernels(), map_size));
    for (k, mut row) in maps.outer_iter_mut().enumerate() {
        let kernel = bank.kernel(k);
        let bias = bank.biases()[k];
        for (m, out) in row.iter_mut().enumerate() {
            let offset = m * stride;
            let mut acc = bias;
            for (j, &w) in kernel.iter().enumerate() {
                acc += w * segment[offset + j];
            }
            *out = acc;
        }
    }
    Ok(FeatureMaps::new(maps))
}

/// Column `frame` (1-based) of the feature maps.
pub fn extract_frame<T: Scalar>(maps: &FeatureMaps<T>, frame: usize) -> Result<FrameVector<T>> {
    let len = maps.map_size();
    if frame == 0 || frame > len {
        return Err(Error::Index { index: frame, len });
    }
    Ok(FrameVector(maps.maps.column(frame - 1).to_owned()))
}

/// One CNN layer over a flat input: `[y_1, …, y_M]` concatenated frame-major,
/// optionally rectified.
pub fn cnn_layer_forward<T: Scalar>(
    input: &[T],
    bank: &KernelBank<T>,
    apply_relu: bool,
) -> Result<Vec<T>> {
    let view = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let mut out = bank.forward_batch(view)?.outputs;
    if apply_relu {
        relu_inplace(&mut out);
    }
    Ok(out.into_raw_vec_and_offset().0)
}

pub(crate) fn relu_inplace<T: Scalar, D: ndarray::Dimension>(values: &mut ndarray::Array<T, D>) {
    values.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes gradient entries whose forward activation was clamped by ReLU.
pub(crate) fn relu_backward<T: Scalar>(grad: &mut Array2<T>, activated: &Array2<T>) {
    ndarray::Zip::from(grad)
        .and(activated)
        .for_each(|g, &a| {
            if a <= T::zero() {
                *g = T::zero();
            }
        });
}

/// Exact gradients of [`conv1d_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients<T> {
    /// `K × L`
    pub weights: Array2<T>,
    pub biases: Array1<T>,
    pub inputs: Array1<T>,
}

/// Back-propagates a kernel-major upstream gradient (`K × M`) through [`conv1d_forward`].
pub fn conv1d_backward<T: Scalar>(
    segment: &[T],
    bank: &KernelBank<T>,
    upstream: ArrayView2<'_, T>,
) -> Result<ConvGradients<T>> {
    let map_size = bank.map_size(segment.len())?;
    let (k_count, l) = bank.weights().dim();
    if upstream.dim() != (k_count, map_size) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} but feature maps are {k_count} x {map_size}",
            upstream.dim()
        )));
    }
    let stride = bank.stride();
    let mut weights = Array2::zeros((k_count, l));
    let mut biases = Array1::zeros(k_count);
    let mut inputs = Array1::zeros(segment.len());
    for k in 0..k_count {
        let kernel = bank.kernel(k);
        for m in 0..map_size {
            let g = upstream[[k, m]];
            if g == T::zero() {
                continue;
            }
            biases[k] += g;
            let offset = m * stride;
            for j in 0..l {
                weights[[k, j]] += g * segment[offset + j];
                inputs[offset + j] += g * kernel[j];
            }
        }
    }
    Ok(ConvGradients {
        weights,
        biases,
        inputs,
    })
}
