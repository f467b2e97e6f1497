//! Diagnostics for learned first-layer kernels: magnitude spectra, ordering by
//! peak frequency and effective kernel length.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::conv::DEFAULT_SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::fbank::{hz_to_mel, mel_center_frequencies};
use crate::model::AcousticModel;
use crate::Scalar;

pub const DEFAULT_FFT_SIZE: usize = 512;
pub const DEFAULT_ENERGY_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpectrum {
    pub kernel_index: usize,
    /// `fft_size/2 + 1` non-negative-frequency magnitudes.
    pub magnitudes: Vec<f64>,
    pub peak_bin: usize,
    pub peak_frequency: f64,
    pub sample_rate: u32,
}

impl KernelSpectrum {
    pub fn fft_size(&self) -> usize {
        (self.magnitudes.len() - 1) * 2
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.fft_size() as f64
    }
}

/// Magnitude spectrum of a zero-padded kernel; peak frequency at `sample_rate`.
pub fn kernel_spectrum_at<T: Scalar>(
    kernel: &[T],
    kernel_index: usize,
    fft_size: usize,
    sample_rate: u32,
) -> Result<KernelSpectrum> {
    if kernel.is_empty() {
        return Err(Error::Shape("empty kernel".into()));
    }
    if fft_size < kernel.len() || fft_size < 2 || fft_size % 2 != 0 {
        return Err(Error::Shape(format!(
            "fft size {fft_size} must be even and at least the kernel length {}",
            kernel.len()
        )));
    }
    let mut buf: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v.as_f64(), 0.0)).collect();
    buf.resize(fft_size, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(fft_size).process(&mut buf);
    let magnitudes: Vec<f64> = buf[..=fft_size / 2].iter().map(|c| c.norm()).collect();
    let mut peak_bin = 0;
    for (i, &m) in magnitudes.iter().enumerate() {
        if m > magnitudes[peak_bin] {
            peak_bin = i;
        }
    }
    Ok(KernelSpectrum {
        kernel_index,
        peak_frequency: peak_bin as f64 * sample_rate as f64 / fft_size as f64,
        magnitudes,
        peak_bin,
        sample_rate,
    })
}

/// [`kernel_spectrum_at`] at 16 kHz.
pub fn kernel_spectrum<T: Scalar>(kernel: &[T], fft_size: usize) -> Result<KernelSpectrum> {
    kernel_spectrum_at(kernel, 0, fft_size, DEFAULT_SAMPLE_RATE)
}

/// Kernel indices ordered by ascending peak frequency, ties by index.
pub fn sort_by_peak(spectra: &[KernelSpectrum]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..spectra.len()).collect();
    order.sort_by(|&a, &b| {
        spectra[a]
            .peak_frequency
            .total_cmp(&spectra[b].peak_frequency)
            .then(spectra[a].kernel_index.cmp(&spectra[b].kernel_index))
    });
    order.into_iter().map(|i| spectra[i].kernel_index).collect()
}

/// Shortest contiguous run of taps holding at least `energy_fraction` of the
/// kernel's squared magnitude.
pub fn effective_kernel_length<T: Scalar>(kernel: &[T], energy_fraction: f64) -> Result<usize> {
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(Error::config("energy_fraction", "must lie in (0, 1]"));
    }
    let energy: Vec<f64> = kernel.iter().map(|v| v.as_f64().powi(2)).collect();
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateInput("kernel has no energy".into()));
    }
    // slack for summation order
    let target = energy_fraction * total * (1.0 - 1e-12);
    let mut best = kernel.len();
    let mut start = 0;
    let mut window = 0.0;
    for (end, &e) in energy.iter().enumerate() {
        window += e;
        while start < end && window - energy[start] >= target {
            window -= energy[start];
            start += 1;
        }
        if window >= target {
            best = best.min(end - start + 1);
        }
    }
    Ok(best)
}

/// Writes per-stream spectra and effective lengths plus a Mel reference curve.
///
/// Files: `stream{i}_spectra.csv`, `stream{i}_lengths.csv`, `mel_reference.csv`.
pub fn export_analysis<T: Scalar>(model: &AcousticModel<T>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    export_analysis_with(model, out_dir, DEFAULT_FFT_SIZE, DEFAULT_ENERGY_FRACTION)
}

pub fn export_analysis_with<T: Scalar>(
    model: &AcousticModel<T>,
    out_dir: impl AsRef<Path>,
    fft_size: usize,
    energy_fraction: f64,
) -> Result<Vec<PathBuf>> {
    let streams = model.streams();
    if streams.is_empty() {
        return Err(Error::NoWaveformKernels);
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let sample_rate = model.config().fbank.sample_rate;
    let mut written = Vec::new();
    let mut write = |name: String, text: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::file(&path, e))?;
        written.push(path);
        Ok(())
    };

    for (i, stream) in streams.iter().enumerate() {
        let bank = stream.first_layer();
        let spectra = (0..bank.num_kernels())
            .map(|k| {
                let kernel = bank.kernel(k).to_vec();
                kernel_spectrum_at(&kernel, k, fft_size.max(kernel.len().next_power_of_two()), sample_rate)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut csv = String::from("kernel,peak_hz");
        for b in 0..spectra[0].magnitudes.len() {
            write!(csv, ",{}", spectra[0].bin_frequency(b)).expect("write to string");
        }
        csv.push('\n');
        for k in sort_by_peak(&spectra) {
            let s = &spectra[k];
            write!(csv, "{},{}", s.kernel_index, s.peak_frequency).expect("write to string");
            for m in &s.magnitudes {
                write!(csv, ",{m}").expect("write to string");
            }
            csv.push('\n');
        }
        write(format!("stream{i}_spectra.csv"), csv)?;

        let mut csv = String::from("kernel,peak_hz,effective_length,kernel_length\n");
        for s in &spectra {
            let kernel = bank.kernel(s.kernel_index).to_vec();
            // dead kernels have no energy and are reported with length 0
            let len = effective_kernel_length(&kernel, energy_fraction).unwrap_or(0);
            writeln!(csv, "{},{},{},{}", s.kernel_index, s.peak_frequency, len, kernel.len()).expect("write to string");
        }
        write(format!("stream{i}_lengths.csv"), csv)?;
    }

    let count = streams[0].first_layer().num_kernels();
    let mut csv = String::from("index,center_hz,mel\n");
    for (i, hz) in mel_center_frequencies(count, sample_rate).into_iter().enumerate() {
        writeln!(csv, "{i},{hz},{}", hz_to_mel(hz)).expect("write to string");
    }
    write("mel_reference.csv".into(), csv)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn dft_oracle(kernel: &[f64], n: usize) -> Vec<f64> {
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &x) in kernel.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn window_oracle(kernel: &[f64], fraction: f64) -> usize {
        let total: f64 = kernel.iter().map(|v| v * v).sum();
        (1..=kernel.len())
            .find(|&len| {
                (0..=kernel.len() - len).any(|s| {
                    kernel[s..s + len].iter().map(|v| v * v).sum::<f64>() >= fraction * total * (1.0 - 1e-12)
                })
            })
            .unwrap()
    }

    #[test]
    fn delta_kernel_is_flat() {
        let mut k = vec![0.0f64; 50];
        k[0] = 1.0;
        let s = kernel_spectrum(&k, 512).unwrap();
        assert_eq!(s.magnitudes.len(), 257);
        assert!(s.magnitudes.iter().all(|&m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bin_aligned_cosine_peaks_at_its_bin() {
        let bin = 20;
        let k: Vec<f64> = (0..512).map(|t| (2.0 * PI * (bin * t) as f64 / 512.0).cos()).collect();
        let s = kernel_spectrum(&k, 512).unwrap();
        assert_eq!(s.peak_bin, bin);
        assert_eq!(s.peak_frequency, 625.0);
        let second = s
            .magnitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != bin)
            .map(|(_, &m)| m)
            .fold(0.0, f64::max);
        assert!(second < 1e-9 * s.magnitudes[bin]);
    }

    #[test]
    fn fft_shorter_than_kernel_is_rejected() {
        assert!(kernel_spectrum(&[1.0f64; 64], 32).is_err());
    }

    proptest! {
        #[test]
        fn matches_direct_dft(kernel in proptest::collection::vec(-1.0f64..1.0, 1..64)) {
            let s = kernel_spectrum(&kernel, 128).unwrap();
            for (a, b) in s.magnitudes.iter().zip(dft_oracle(&kernel, 128)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn reversal_preserves_magnitudes(kernel in proptest::collection::vec(-1.0f64..1.0, 1..64)) {
            let rev: Vec<f64> = kernel.iter().rev().copied().collect();
            let a = kernel_spectrum(&kernel, 64).unwrap();
            let b = kernel_spectrum(&rev, 64).unwrap();
            for (x, y) in a.magnitudes.iter().zip(&b.magnitudes) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn effective_length_matches_scan(kernel in proptest::collection::vec(-1.0f64..1.0, 1..60), fraction in 0.05f64..1.0) {
            prop_assume!(kernel.iter().any(|&v| v != 0.0));
            prop_assert_eq!(effective_kernel_length(&kernel, fraction).unwrap(), window_oracle(&kernel, fraction));
        }

        #[test]
        fn effective_length_monotone(kernel in proptest::collection::vec(-1.0f64..1.0, 1..60), a in 0.05f64..1.0, b in 0.05f64..1.0) {
            prop_assume!(kernel.iter().any(|&v| v != 0.0));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(effective_kernel_length(&kernel, lo).unwrap() <= effective_kernel_length(&kernel, hi).unwrap());
        }

        #[test]
        fn sort_matches_reference(peaks in proptest::collection::vec(0usize..8, 1..40)) {
            let spectra: Vec<KernelSpectrum> = peaks
                .iter()
                .enumerate()
                .map(|(i, &p)| KernelSpectrum {
                    kernel_index: i,
                    magnitudes: vec![0.0; 9],
                    peak_bin: p,
                    peak_frequency: p as f64 * 1000.0,
                    sample_rate: 16_000,
                })
                .collect();
            let order = sort_by_peak(&spectra);
            let mut reference: Vec<(usize, usize)> = peaks.iter().copied().zip(0..).collect();
            reference.sort();
            prop_assert_eq!(&order, &reference.iter().map(|&(_, i)| i).collect::<Vec<_>>());
            let mut seen = order.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..peaks.len()).collect::<Vec<_>>());
        }
    }

    fn spectrum_with_peak(index: usize, hz: f64) -> KernelSpectrum {
        KernelSpectrum {
            kernel_index: index,
            magnitudes: vec![0.0; 3],
            peak_bin: 0,
            peak_frequency: hz,
            sample_rate: 16_000,
        }
    }

    #[test]
    fn sort_identity_and_reverse() {
        let sorted: Vec<_> = (0..5).map(|i| spectrum_with_peak(i, i as f64 * 100.0)).collect();
        assert_eq!(sort_by_peak(&sorted), vec![0, 1, 2, 3, 4]);
        let reversed: Vec<_> = (0..5).map(|i| spectrum_with_peak(i, (4 - i) as f64 * 100.0)).collect();
        assert_eq!(sort_by_peak(&reversed), vec![4, 3, 2, 1, 0]);
    }

    #[test]
    fn effective_length_examples() {
        let mut one = vec![0.0f64; 50];
        one[17] = -3.0;
        assert_eq!(effective_kernel_length(&one, 0.99).unwrap(), 1);
        assert_eq!(effective_kernel_length(&[1.0f64; 50], 0.99).unwrap(), 50);
        let mut block = vec![0.0f64; 50];
        for (i, v) in block.iter_mut().enumerate().take(20).skip(10) {
            *v = 1.0 + i as f64 * 0.1;
        }
        assert_eq!(effective_kernel_length(&block, 1.0).unwrap(), 10);
        assert!(effective_kernel_length(&[0.0f64; 5], 0.99).is_err());
    }
}
