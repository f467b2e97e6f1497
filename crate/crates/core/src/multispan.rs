//! Single- and multi-span waveform front-ends.
//!
//! A stream stacks two rectified strided convolution layers over its own
//! span of the waveform and optionally projects the result linearly. A
//! multi-span front-end runs several streams centred on the same sample and
//! concatenates their outputs in stream order.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{output_map_size, relu_backward, relu_inplace, required_span, BankForward, KernelBank, Signal};
use crate::error::{Error, Result};
use crate::init::glorot_uniform;
use crate::Scalar;

/// Geometry of one stream. Only the first-layer stride and kernel length
/// differ between the streams of a model; the rest defaults to the
/// reference architecture (`M=200`, `K=64`, second layer `S=1024, L=2560,
/// M=11, K=128`, projection to 150 dimensions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub first_stride: usize,
    pub first_kernel_len: usize,
    pub first_map_size: usize,
    pub first_num_kernels: usize,
    pub second_stride: usize,
    pub second_kernel_len: usize,
    pub second_map_size: usize,
    pub second_num_kernels: usize,
    pub projection_dim: usize,
}

impl StreamConfig {
    pub const DEFAULT_FIRST_MAP_SIZE: usize = 200;
    pub const DEFAULT_FIRST_NUM_KERNELS: usize = 64;
    pub const DEFAULT_SECOND_STRIDE: usize = 1024;
    pub const DEFAULT_SECOND_KERNEL_LEN: usize = 2560;
    pub const DEFAULT_SECOND_MAP_SIZE: usize = 11;
    pub const DEFAULT_SECOND_NUM_KERNELS: usize = 128;
    pub const DEFAULT_PROJECTION_DIM: usize = 150;

    pub fn new(first_stride: usize, first_kernel_len: usize) -> Self {
        Self {
            first_stride,
            first_kernel_len,
            first_map_size: Self::DEFAULT_FIRST_MAP_SIZE,
            first_num_kernels: Self::DEFAULT_FIRST_NUM_KERNELS,
            second_stride: Self::DEFAULT_SECOND_STRIDE,
            second_kernel_len: Self::DEFAULT_SECOND_KERNEL_LEN,
            second_map_size: Self::DEFAULT_SECOND_MAP_SIZE,
            second_num_kernels: Self::DEFAULT_SECOND_NUM_KERNELS,
            projection_dim: Self::DEFAULT_PROJECTION_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("first_stride", self.first_stride),
            ("first_kernel_len", self.first_kernel_len),
            ("first_map_size", self.first_map_size),
            ("first_num_kernels", self.first_num_kernels),
            ("second_stride", self.second_stride),
            ("second_kernel_len", self.second_kernel_len),
            ("second_map_size", self.second_map_size),
            ("second_num_kernels", self.second_num_kernels),
            ("projection_dim", self.projection_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidGeometry(format!("{name} must be at least 1")));
        }
        let produced = output_map_size(self.first_output_len(), self.second_kernel_len, self.second_stride)?;
        if produced != self.second_map_size {
            return Err(Error::InvalidGeometry(format!(
                "second layer over {} inputs with L={} S={} yields {produced} frames, configured {}",
                self.first_output_len(),
                self.second_kernel_len,
                self.second_stride,
                self.second_map_size
            )));
        }
        Ok(())
    }

    /// Raw samples the stream reads per frame: `(M-1)·S + L`.
    pub fn input_span(&self) -> usize {
        required_span(self.first_map_size, self.first_stride, self.first_kernel_len)
    }

    /// Length of the flattened first-layer output `y`.
    pub fn first_output_len(&self) -> usize {
        self.first_map_size * self.first_num_kernels
    }

    /// Length of the unprojected stream output `o`.
    pub fn output_len(&self) -> usize {
        self.second_map_size * self.second_num_kernels
    }
}

pub fn stream_input_span(config: &StreamConfig) -> usize {
    config.input_span()
}

/// The parameters of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream<T> {
    config: StreamConfig,
    first: KernelBank<T>,
    second: KernelBank<T>,
    /// `projection_dim × output_len`, bias-free. Absent for single-span models.
    projection: Option<Array2<T>>,
}

impl<T: Scalar> Stream<T> {
    pub fn new(
        config: StreamConfig,
        first: KernelBank<T>,
        second: KernelBank<T>,
        projection: Option<Array2<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let expect = |what: &str, got: (usize, usize, usize), want: (usize, usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{what} has (kernels, length, stride) {got:?}, config requires {want:?}"
                )))
            }
        };
        expect(
            "first layer",
            (first.num_kernels(), first.kernel_len(), first.stride()),
            (config.first_num_kernels, config.first_kernel_len, config.first_stride),
        )?;
        expect(
            "second layer",
            (second.num_kernels(), second.kernel_len(), second.stride()),
            (config.second_num_kernels, config.second_kernel_len, config.second_stride),
        )?;
        if let Some(p) = &projection {
            if p.dim() != (config.projection_dim, config.output_len()) {
                return Err(Error::Shape(format!(
                    "projection is {:?}, expected {} x {}",
                    p.dim(),
                    config.projection_dim,
                    config.output_len()
                )));
            }
        }
        Ok(Self {
            config,
            first,
            second,
            projection,
        })
    }

    pub fn random<R: Rng + ?Sized>(config: StreamConfig, projected: bool, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let first = KernelBank::random(config.first_num_kernels, config.first_kernel_len, config.first_stride, rng)?;
        let second = KernelBank::random(config.second_num_kernels, config.second_kernel_len, config.second_stride, rng)?;
        let projection = projected.then(|| {
            glorot_uniform(config.projection_dim, config.output_len(), config.output_len(), config.projection_dim, rng)
        });
        Self::new(config, first, second, projection)
    }

    pub fn zeros(config: StreamConfig, projected: bool) -> Result<Self> {
        let first = KernelBank::zeros(config.first_num_kernels, config.first_kernel_len, config.first_stride)?;
        let second = KernelBank::zeros(config.second_num_kernels, config.second_kernel_len, config.second_stride)?;
        let projection = projected.then(|| Array2::zeros((config.projection_dim, config.output_len())));
        Self::new(config, first, second, projection)
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn input_span(&self) -> usize {
        self.config.input_span()
    }

    pub fn first_layer(&self) -> &KernelBank<T> {
        &self.first
    }

    pub fn first_layer_mut(&mut self) -> &mut KernelBank<T> {
        &mut self.first
    }

    pub fn second_layer(&self) -> &KernelBank<T> {
        &self.second
    }

    pub fn second_layer_mut(&mut self) -> &mut KernelBank<T> {
        &mut self.second
    }

    pub fn projection(&self) -> Option<&Array2<T>> {
        self.projection.as_ref()
    }

    pub fn projection_mut(&mut self) -> Option<&mut Array2<T>> {
        self.projection.as_mut()
    }

    pub fn parts_mut(&mut self) -> (&mut KernelBank<T>, &mut KernelBank<T>, Option<&mut Array2<T>>) {
        (&mut self.first, &mut self.second, self.projection.as_mut())
    }

    /// Dimension this stream contributes to the concatenated feature.
    pub fn output_dim(&self) -> usize {
        match &self.projection {
            Some(p) => p.nrows(),
            None => self.config.output_len(),
        }
    }

    /// Runs a batch of windows (`B × T_i`) through both layers and the projection.
    pub fn forward_batch(&self, windows: ArrayView2<'_, T>) -> Result<StreamForward<T>> {
        if windows.ncols() != self.input_span() {
            return Err(Error::InvalidGeometry(format!(
                "window of {} samples, stream span is {}",
                windows.ncols(),
                self.input_span()
            )));
        }
        let mut first = self.first.forward_batch(windows)?;
        relu_inplace(&mut first.outputs);
        let mut second = self.second.forward_batch(first.outputs.view())?;
        relu_inplace(&mut second.outputs);
        let projected = self.projection.as_ref().map(|p| second.outputs.dot(&p.t()));
        Ok(StreamForward {
            first,
            second,
            projected,
        })
    }

    /// Gradients of the stream parameters given `d_output` (`B × output_dim`).
    pub fn backward_batch(&self, cache: &StreamForward<T>, d_output: ArrayView2<'_, T>) -> Result<StreamGradients<T>> {
        let batch = cache.second.outputs.nrows();
        if d_output.dim() != (batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "stream output gradient {:?}, expected {batch} x {}",
                d_output.dim(),
                self.output_dim()
            )));
        }
        let (projection, mut d_o) = match &self.projection {
            Some(p) => (Some(d_output.t().dot(&cache.second.outputs)), d_output.dot(p)),
            None => (None, d_output.to_owned()),
        };
        relu_backward(&mut d_o, &cache.second.outputs);
        let second = self.second.backward_batch(
            &cache.second.windows,
            d_o.view(),
            self.config.first_output_len(),
            true,
        )?;
        let mut d_y = second.inputs.expect("requested input gradient");
        relu_backward(&mut d_y, &cache.first.outputs);
        let first = self
            .first
            .backward_batch(&cache.first.windows, d_y.view(), self.input_span(), false)?;
        Ok(StreamGradients {
            first_weights: first.weights,
            first_biases: first.biases,
            second_weights: second.weights,
            second_biases: second.biases,
            projection,
        })
    }
}

/// Activations cached by [`Stream::forward_batch`].
#[derive(Debug, Clone)]
pub struct StreamForward<T> {
    /// First layer, outputs rectified (`y`).
    pub first: BankForward<T>,
    /// Second layer, outputs rectified (`o`).
    pub second: BankForward<T>,
    pub projected: Option<Array2<T>>,
}

impl<T> StreamForward<T> {
    /// Projected output when the stream has a projection, `o` otherwise.
    pub fn output(&self) -> &Array2<T> {
        self.projected.as_ref().unwrap_or(&self.second.outputs)
    }
}

#[derive(Debug, Clone)]
pub struct StreamGradients<T> {
    pub first_weights: Array2<T>,
    pub first_biases: Array1<T>,
    pub second_weights: Array2<T>,
    pub second_biases: Array1<T>,
    pub projection: Option<Array2<T>>,
}

/// Concatenated output of all streams for one centre sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSpanFeature<T>(Array1<T>);

impl<T: Scalar> MultiSpanFeature<T> {
    pub fn values(&self) -> &Array1<T> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Array1<T> {
        self.0
    }
}

/// First sample of the `span`-long window centred on `center`.
///
/// The window is `[c - ⌈T/2⌉, c - ⌈T/2⌉ + T)`; odd spans get the extra sample on the past side.
pub fn window_start(center: usize, span: usize) -> isize {
    center as isize - span.div_ceil(2) as isize
}

/// Copies the centred window out of `samples`, reading zeros beyond either edge.
pub fn centered_window<T: Scalar>(samples: &[T], center: usize, span: usize) -> Vec<T> {
    let mut out = vec![T::zero(); span];
    fill_centered_window(samples, center, &mut out);
    out
}

/// In-place variant of [`centered_window`]; the span is `out.len()`.
pub fn fill_centered_window<T: Scalar>(samples: &[T], center: usize, out: &mut [T]) {
    let start = window_start(center, out.len());
    for (i, slot) in out.iter_mut().enumerate() {
        let src = start + i as isize;
        *slot = if src >= 0 && (src as usize) < samples.len() {
            samples[src as usize]
        } else {
            T::zero()
        };
    }
}

/// `o^i` for one window of exactly the stream's span.
pub fn stream_forward<T: Scalar>(stream: &Stream<T>, window: &[T]) -> Result<Array1<T>> {
    let view = ArrayView2::from_shape((1, window.len()), window).map_err(|e| Error::Shape(e.to_string()))?;
    let cache = stream.forward_batch(view)?;
    Ok(cache.second.outputs.row(0).to_owned())
}

/// Runs every stream on its own span around `center` and concatenates the
/// (projected) outputs in stream order.
pub fn multispan_forward<T: Scalar>(
    streams: &[Stream<T>],
    waveform: &Signal<T>,
    center: usize,
) -> Result<MultiSpanFeature<T>> {
    let windows: Vec<Array2<T>> = streams
        .iter()
        .map(|s| {
            let span = s.input_span();
            Array2::from_shape_vec((1, span), centered_window(waveform.samples(), center, span))
                .expect("window length equals span")
        })
        .collect();
    let (_, features) = streams_forward_batch(streams, &windows)?;
    Ok(MultiSpanFeature(features.row(0).to_owned()))
}

/// `o` of a single stream around `center`, never projected.
pub fn single_span_forward<T: Scalar>(stream: &Stream<T>, waveform: &Signal<T>, center: usize) -> Result<Array1<T>> {
    let window = centered_window(waveform.samples(), center, stream.input_span());
    stream_forward(stream, &window)
}

/// Batched forward over all streams: `windows[i]` is `B × T_i`.
///
/// Streams are evaluated in parallel and joined in stream order.
pub fn streams_forward_batch<T: Scalar>(
    streams: &[Stream<T>],
    windows: &[Array2<T>],
) -> Result<(Vec<StreamForward<T>>, Array2<T>)> {
    if streams.len() != windows.len() || streams.is_empty() {
        return Err(Error::Shape(format!(
            "{} window batches for {} streams",
            windows.len(),
            streams.len()
        )));
    }
    let caches = streams
        .par_iter()
        .zip(windows.par_iter())
        .map(|(s, w)| s.forward_batch(w.view()))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<_> = caches.iter().map(|c| c.output().view()).collect();
    let features = concatenate(Axis(1), &outputs).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((caches, features))
}

/// Splits `d_features` into per-stream column blocks and back-propagates each.
pub fn streams_backward_batch<T: Scalar>(
    streams: &[Stream<T>],
    caches: &[StreamForward<T>],
    d_features: ArrayView2<'_, T>,
) -> Result<Vec<StreamGradients<T>>> {
    let mut offsets = Vec::with_capacity(streams.len());
    let mut offset = 0;
    for s in streams {
        offsets.push(offset);
        offset += s.output_dim();
    }
    if d_features.ncols() != offset {
        return Err(Error::Shape(format!(
            "feature gradient has {} columns, streams produce {offset}",
            d_features.ncols()
        )));
    }
    streams
        .par_iter()
        .zip(caches.par_iter())
        .zip(offsets.par_iter())
        .map(|((s, c), &start)| {
            let block = d_features.slice(ndarray::s![.., start..start + s.output_dim()]);
            s.backward_batch(c, block)
        })
        .collect()
}
