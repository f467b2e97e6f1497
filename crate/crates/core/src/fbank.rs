//! Log Mel-filterbank (FBANK) features for the `F_160^400` baseline.
//!
//! Per frame: Hamming window, zero-pad to `fft_size`, magnitude spectrum,
//! triangular Mel filterbank, natural log floored at [`LOG_FLOOR`].

use std::io::Write;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::conv::{output_map_size, Signal};
use crate::error::{Error, Result};
use crate::multispan::fill_centered_window;
use crate::Scalar;

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FbankConfig {
    pub frame_shift: usize,
    pub frame_size: usize,
    pub num_filters: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            frame_shift: 160,
            frame_size: 400,
            num_filters: 40,
            fft_size: 512,
            sample_rate: 16_000,
        }
    }
}

impl FbankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_shift == 0 || self.frame_size == 0 {
            return Err(Error::config("fbank.frame_shift", "frame shift and size must be positive"));
        }
        if self.num_filters == 0 {
            return Err(Error::config("fbank.num_filters", "need at least one filter"));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.frame_size {
            return Err(Error::config(
                "fbank.fft_size",
                format!("{} is not a power of two >= frame size {}", self.fft_size, self.frame_size),
            ));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("fbank.sample_rate", "must be positive"));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `count + 2` edge frequencies in Hz, equally spaced in Mel from 0 Hz to Nyquist.
fn mel_edges(count: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..count + 2)
        .map(|i| mel_to_hz(top * i as f64 / (count + 1) as f64))
        .collect()
}

/// Centre frequency in Hz of each of `count` Mel filters spanning 0 Hz to Nyquist.
pub fn mel_center_frequencies(count: usize, sample_rate: u32) -> Vec<f64> {
    let edges = mel_edges(count, sample_rate);
    edges[1..=count].to_vec()
}

/// Triangular filters, `num_filters × (fft_size/2 + 1)`.
pub fn mel_filterbank<T: Scalar>(config: &FbankConfig) -> Result<Array2<T>> {
    config.validate()?;
    let edges = mel_edges(config.num_filters, config.sample_rate);
    let bin_hz = config.sample_rate as f64 / config.fft_size as f64;
    let mut bank = Array2::zeros((config.num_filters, config.num_bins()));
    for (i, mut row) in bank.outer_iter_mut().enumerate() {
        let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
        for (b, w) in row.iter_mut().enumerate() {
            let f = b as f64 * bin_hz;
            let v = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            *w = T::of(v);
        }
    }
    Ok(bank)
}

/// Reusable FBANK extractor holding the FFT plan, window and filterbank.
pub struct FbankExtractor<T: Scalar> {
    config: FbankConfig,
    fft: Arc<dyn Fft<T>>,
    window: Vec<T>,
    filterbank: Array2<T>,
}

impl<T: Scalar> FbankExtractor<T> {
    pub fn new(config: FbankConfig) -> Result<Self> {
        let filterbank = mel_filterbank(&config)?;
        let n = config.frame_size;
        let window = (0..n)
            .map(|i| {
                let phase = if n > 1 {
                    2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64
                } else {
                    0.0
                };
                T::of(0.54 - 0.46 * phase.cos())
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            config,
            fft,
            window,
            filterbank,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Array2<T> {
        &self.filterbank
    }

    /// Log filterbank energies of one `frame_size`-sample frame.
    pub fn frame(&self, samples: &[T]) -> Array1<T> {
        debug_assert_eq!(samples.len(), self.config.frame_size);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.config.fft_size];
        for ((slot, &x), &w) in buf.iter_mut().zip(samples).zip(&self.window) {
            slot.re = x * w;
        }
        self.fft.process(&mut buf);
        let magnitude: Array1<T> = buf[..self.config.num_bins()].iter().map(|c| c.norm()).collect();
        let floor = T::of(LOG_FLOOR);
        self.filterbank.dot(&magnitude).mapv(|e| e.max(floor).ln())
    }

    /// Frames at hop `frame_shift` from the start of the signal; `⌊(T−400)/160⌋+1` of them.
    pub fn compute(&self, samples: &[T]) -> Result<Array2<T>> {
        let count = output_map_size(samples.len(), self.config.frame_size, self.config.frame_shift)?;
        let mut out = Array2::zeros((count, self.config.num_filters));
        for (n, mut row) in out.outer_iter_mut().enumerate() {
            let start = n * self.config.frame_shift;
            row.assign(&self.frame(&samples[start..start + self.config.frame_size]));
        }
        Ok(out)
    }

    /// `count` frames whose windows are centred on samples `0, shift, 2·shift, …`,
    /// zero-padded past either end, so frame `n` lines up with label `n`.
    pub fn compute_centered(&self, samples: &[T], count: usize) -> Array2<T> {
        let mut out = Array2::zeros((count, self.config.num_filters));
        let mut window = vec![T::zero(); self.config.frame_size];
        for (n, mut row) in out.outer_iter_mut().enumerate() {
            fill_centered_window(samples, n * self.config.frame_shift, &mut window);
            row.assign(&self.frame(&window));
        }
        out
    }
}

/// FBANK features of a whole signal, one row per frame.
pub fn compute_fbank<T: Scalar>(signal: &Signal<T>, config: &FbankConfig) -> Result<Array2<T>> {
    FbankExtractor::new(*config)?.compute(signal.samples())
}

/// Concatenates each frame with its `(num_frames−1)/2` neighbours on each
/// side, replicating the first and last frames at the edges.
pub fn stack_context<T: Scalar>(features: &Array2<T>, num_frames: usize) -> Result<Array2<T>> {
    if num_frames % 2 == 0 {
        return Err(Error::InvalidGeometry(format!(
            "context width {num_frames} must be odd"
        )));
    }
    let (count, dim) = features.dim();
    let half = (num_frames / 2) as isize;
    let last = count as isize - 1;
    let mut out = Array2::zeros((count, dim * num_frames));
    for (n, mut row) in out.outer_iter_mut().enumerate() {
        for (slot, offset) in (-half..=half).enumerate() {
            let src = (n as isize + offset).clamp(0, last.max(0)) as usize;
            row.slice_mut(ndarray::s![slot * dim..(slot + 1) * dim])
                .assign(&features.row(src));
        }
    }
    Ok(out)
}

/// Writes one frame per line, comma-separated.
pub fn write_csv<T: Scalar, W: Write>(features: &Array2<T>, mut out: W) -> std::io::Result<()> {
    for row in features.outer_iter() {
        write_row(row, &mut out)?;
    }
    Ok(())
}

fn write_row<T: Scalar, W: Write>(row: ArrayView1<'_, T>, out: &mut W) -> std::io::Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            out.write_all(b",")?;
        }
        write!(out, "{v}")?;
        first = false;
    }
    out.write_all(b"\n")
}
