//! Waveform ingestion, corpus normalisation, 10 ms label alignment and a
//! synthetic corpus for desk-scale experiments.
//!
//! Labels are aligned to frame centres at samples `0, 160, 320, …`; an
//! utterance of `N` samples therefore carries `⌈N/160⌉` labels.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conv::{Signal, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::multispan::fill_centered_window;
use crate::Scalar;

/// Samples between consecutive label frames (10 ms at 16 kHz).
pub const FRAME_SHIFT: usize = 160;

/// Number of label frames covering `len` samples.
pub fn frame_count(len: usize) -> usize {
    len.div_ceil(FRAME_SHIFT)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<T> {
    pub id: String,
    pub signal: Signal<T>,
    pub labels: Vec<usize>,
    pub meeting_id: Option<String>,
}

impl<T: Scalar> Utterance<T> {
    pub fn new(id: impl Into<String>, signal: Signal<T>, labels: Vec<usize>, meeting_id: Option<String>) -> Result<Self> {
        let id = id.into();
        let expected = frame_count(signal.len());
        if labels.len() != expected {
            return Err(Error::Shape(format!(
                "utterance {id}: {} labels for {} samples, expected {expected}",
                labels.len(),
                signal.len()
            )));
        }
        Ok(Self {
            id,
            signal,
            labels,
            meeting_id,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.labels.len()
    }
}

/// Which normalisation scheme to apply to a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    None,
    #[default]
    Global,
    UtteranceMeeting,
}

impl NormalizationKind {
    pub fn apply<T: Scalar>(self, corpus: &mut Corpus<T>) -> Result<()> {
        match self {
            NormalizationKind::None => Ok(()),
            NormalizationKind::Global => normalize_global(corpus),
            NormalizationKind::UtteranceMeeting => normalize_utterance_meeting(corpus),
        }
    }
}

/// Statistics applied by the last normalisation pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalization {
    Global { mean: f64, variance: f64 },
    UtteranceMeeting {
        utterance_means: Vec<f64>,
        meeting_variances: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    pub utterances: Vec<Utterance<T>>,
    pub num_classes: usize,
    pub normalization: Option<Normalization>,
}

impl<T: Scalar> Corpus<T> {
    pub fn new(utterances: Vec<Utterance<T>>, num_classes: usize) -> Result<Self> {
        for u in &utterances {
            if let Some(&label) = u.labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::InvalidLabel { label, num_classes });
            }
        }
        Ok(Self {
            utterances,
            num_classes,
            normalization: None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.iter().all(|u| u.labels.is_empty())
    }

    pub fn num_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::num_frames).sum()
    }

    pub fn total_samples(&self) -> usize {
        self.utterances.iter().map(|u| u.signal.len()).sum()
    }
}

fn mean_variance<'a, T: Scalar>(chunks: impl Iterator<Item = &'a [T]> + Clone) -> (f64, f64, usize) {
    let n: usize = chunks.clone().map(<[T]>::len).sum();
    let sum: f64 = chunks.clone().flat_map(|c| c.iter()).map(|v| v.as_f64()).sum();
    let mean = sum / n as f64;
    let var = chunks
        .flat_map(|c| c.iter())
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var, n)
}

/// Variance indistinguishable from rounding noise around `mean`.
fn is_degenerate(mean: f64, variance: f64) -> bool {
    !(variance.sqrt() > 1e-12 * (1.0 + mean.abs()))
}

/// Zero mean and unit variance pooled over every sample of every utterance.
pub fn normalize_global<T: Scalar>(corpus: &mut Corpus<T>) -> Result<()> {
    if corpus.utterances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (mean, variance, _) = mean_variance(corpus.utterances.iter().map(|u| u.signal.samples()));
    if is_degenerate(mean, variance) {
        return Err(Error::DegenerateInput("corpus has zero variance".into()));
    }
    let scale = variance.sqrt();
    for u in &mut corpus.utterances {
        for v in u.signal.samples_mut() {
            *v = T::of((v.as_f64() - mean) / scale);
        }
    }
    corpus.normalization = Some(Normalization::Global { mean, variance });
    Ok(())
}

/// Zero mean per utterance, then unit variance pooled per meeting.
pub fn normalize_utterance_meeting<T: Scalar>(corpus: &mut Corpus<T>) -> Result<()> {
    if corpus.utterances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut utterance_means = Vec::with_capacity(corpus.utterances.len());
    for u in &mut corpus.utterances {
        if u.meeting_id.is_none() {
            return Err(Error::config("meeting_id", format!("utterance {} has no meeting id", u.id)));
        }
        let (mean, _, _) = mean_variance(std::iter::once(u.signal.samples()));
        for v in u.signal.samples_mut() {
            *v = T::of(v.as_f64() - mean);
        }
        utterance_means.push(mean);
    }
    let mut meetings: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, u) in corpus.utterances.iter().enumerate() {
        meetings.entry(u.meeting_id.clone().expect("checked")).or_default().push(i);
    }
    let mut meeting_variances = BTreeMap::new();
    for (meeting, members) in &meetings {
        let (n, sum_sq) = members.iter().fold((0usize, 0.0f64), |(n, s), &i| {
            let samples = corpus.utterances[i].signal.samples();
            (n + samples.len(), s + samples.iter().map(|v| v.as_f64().powi(2)).sum::<f64>())
        });
        let variance = sum_sq / n as f64;
        if is_degenerate(0.0, variance) {
            return Err(Error::DegenerateInput(format!("meeting {meeting} has zero variance")));
        }
        let scale = variance.sqrt();
        for &i in members {
            for v in corpus.utterances[i].signal.samples_mut() {
                *v = T::of(v.as_f64() / scale);
            }
        }
        meeting_variances.insert(meeting.clone(), variance);
    }
    corpus.normalization = Some(Normalization::UtteranceMeeting {
        utterance_means,
        meeting_variances,
    });
    Ok(())
}

/// A labelled window centred on one 10 ms frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWindow<T> {
    pub center: usize,
    pub window: Vec<T>,
    pub label: usize,
}

/// One window of `span` samples per label frame, zero-padded beyond the utterance.
pub fn frame_windows<T: Scalar>(utterance: &Utterance<T>, span: usize) -> impl Iterator<Item = FrameWindow<T>> + '_ {
    utterance.labels.iter().enumerate().map(move |(n, &label)| {
        let center = n * FRAME_SHIFT;
        let mut window = vec![T::zero(); span];
        fill_centered_window(utterance.signal.samples(), center, &mut window);
        FrameWindow { center, window, label }
    })
}

// ---------------------------------------------------------------------------
// WAV

fn format_error(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        field,
        detail: detail.into(),
    }
}

/// Decodes a RIFF/WAVE byte buffer holding 16-bit mono PCM at 16 kHz.
pub fn parse_wav<T: Scalar>(bytes: &[u8]) -> Result<Signal<T>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(format_error("riff_header", "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(format_error("wave_id", "missing WAVE identifier"));
    }
    let u16_at = |b: &[u8], o: usize| u16::from_le_bytes([b[o], b[o + 1]]);
    let u32_at = |b: &[u8], o: usize| u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);

    let mut pos = 12;
    let mut format_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_error("chunk_size", format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(format_error("fmt_chunk", "fmt chunk shorter than 16 bytes"));
                }
                let audio_format = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let sample_rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if audio_format != 1 {
                    return Err(format_error("audio_format", format!("{audio_format} is not PCM (1)")));
                }
                if channels != 1 {
                    return Err(format_error("channels", format!("{channels} channels, expected mono")));
                }
                if sample_rate != DEFAULT_SAMPLE_RATE {
                    return Err(format_error("sample_rate", format!("{sample_rate} Hz, expected 16000")));
                }
                if bits != 16 {
                    return Err(format_error("bits_per_sample", format!("{bits} bits, expected 16")));
                }
                format_seen = true;
            }
            b"data" => {
                if !format_seen {
                    return Err(format_error("fmt_chunk", "data chunk before fmt chunk"));
                }
                let samples: Vec<T> = body
                    .chunks_exact(2)
                    .map(|c| T::of(i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0))
                    .collect();
                if samples.is_empty() {
                    return Err(format_error("data_chunk", "no samples"));
                }
                return Signal::new(samples, DEFAULT_SAMPLE_RATE);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    Err(format_error("data_chunk", if format_seen { "missing data chunk" } else { "missing fmt chunk" }))
}

pub fn load_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<Signal<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    parse_wav(&bytes)
}

/// Encodes a signal as 16-bit mono PCM, clipping to the representable range.
pub fn encode_wav<T: Scalar>(signal: &Signal<T>) -> Vec<u8> {
    let data_len = signal.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&signal.sample_rate().to_le_bytes());
    out.extend_from_slice(&(signal.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in signal.samples() {
        let q = (v.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav<T: Scalar>(path: impl AsRef<Path>, signal: &Signal<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(signal)).map_err(|e| Error::file(path, e))
}

// ---------------------------------------------------------------------------
// Manifest

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<usize>()
                .map_err(|_| Error::config("labels", format!("{}: `{l}` is not a class index", path.display())))
        })
        .collect()
}

fn resolve(base: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads a tab-separated manifest: `wav path, label path[, meeting id]` per line.
///
/// Relative paths are resolved against the manifest's directory. The class
/// count is `num_classes` if given, otherwise one more than the largest label.
pub fn load_manifest<T: Scalar>(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Corpus<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut utterances = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::config(
                "manifest",
                format!("{}:{}: expected 2 or 3 tab-separated fields", path.display(), lineno + 1),
            ));
        }
        let wav = resolve(base, fields[0]);
        let signal = load_wav(&wav)?;
        let labels = read_labels(resolve(base, fields[1]))?;
        let meeting = fields.get(2).map(|m| m.to_string()).filter(|m| !m.is_empty());
        let id = wav
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("utt{lineno}"));
        utterances.push(Utterance::new(id, signal, labels, meeting)?);
    }
    if utterances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let classes = num_classes.unwrap_or_else(|| {
        utterances
            .iter()
            .flat_map(|u| u.labels.iter().copied())
            .max()
            .map_or(1, |m| m + 1)
    });
    Corpus::new(utterances, classes)
}

/// Writes every utterance as `<id>.wav` + `<id>.lab` and a manifest listing them.
pub fn write_corpus<T: Scalar>(corpus: &Corpus<T>, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let manifest_path = dir.join("manifest.tsv");
    let mut manifest = Vec::new();
    for u in &corpus.utterances {
        let wav = format!("{}.wav", u.id);
        let lab = format!("{}.lab", u.id);
        write_wav(dir.join(&wav), &u.signal)?;
        let mut text = String::with_capacity(u.labels.len() * 3);
        for l in &u.labels {
            text.push_str(&l.to_string());
            text.push('\n');
        }
        fs::write(dir.join(&lab), text).map_err(|e| Error::file(dir.join(&lab), e))?;
        write!(manifest, "{wav}\t{lab}").expect("write to vec");
        if let Some(m) = &u.meeting_id {
            write!(manifest, "\t{m}").expect("write to vec");
        }
        manifest.push(b'\n');
    }
    fs::write(&manifest_path, manifest).map_err(|e| Error::file(&manifest_path, e))?;
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Parameters of [`synth_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub utterances: usize,
    pub duration_secs: f64,
    /// Length of each constant-label segment.
    pub segment_secs: f64,
    /// `None` means noise-free.
    pub snr_db: Option<f64>,
    /// Utterances per meeting id.
    pub utterances_per_meeting: usize,
    /// Cycle through seeded permutations of the classes instead of drawing
    /// each segment's class independently.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            utterances: 15,
            duration_secs: 4.0,
            segment_secs: 2.0,
            snr_db: Some(20.0),
            utterances_per_meeting: 5,
            balanced: false,
            seed: 1,
        }
    }
}

impl std::str::FromStr for SynthSpec {
    type Err = Error;

    /// Comma-separated `key=value` pairs, e.g. `classes=3,utterances=15,duration=4,snr=inf,seed=7`.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::config("synth", format!("`{pair}` is not key=value")))?;
            let bad = || Error::config(format!("synth.{key}"), format!("invalid value `{value}`"));
            match key {
                "classes" => spec.num_classes = value.parse().map_err(|_| bad())?,
                "utterances" => spec.utterances = value.parse().map_err(|_| bad())?,
                "duration" => spec.duration_secs = value.parse().map_err(|_| bad())?,
                "segment" => spec.segment_secs = value.parse().map_err(|_| bad())?,
                "meeting_size" => spec.utterances_per_meeting = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "balanced" => spec.balanced = value.parse().map_err(|_| bad())?,
                "snr" => {
                    spec.snr_db = if value.eq_ignore_ascii_case("inf") {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad())?)
                    }
                }
                _ => return Err(Error::config(format!("synth.{key}"), "unknown key")),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("synth.classes", "must be at least 1"));
        }
        if self.utterances == 0 {
            return Err(Error::config("synth.utterances", "must be at least 1"));
        }
        if !(self.duration_secs >= 0.01) {
            return Err(Error::config("synth.duration", "must be at least 10 ms"));
        }
        if !(self.segment_secs >= 0.01) {
            return Err(Error::config("synth.segment", "must be at least 10 ms"));
        }
        if self.utterances_per_meeting == 0 {
            return Err(Error::config("synth.meeting_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Three distinct tone frequencies per class, log-spaced between 200 Hz and
    /// 6 kHz and dealt to classes in a seeded order.
    pub fn class_frequencies(&self) -> Vec<[f64; 3]> {
        let count = 3 * self.num_classes;
        let (lo, hi) = (200.0f64, 6000.0f64);
        let mut grid: Vec<f64> = (0..count)
            .map(|i| {
                let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
                lo * (hi / lo).powf(t)
            })
            .collect();
        grid.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_f00d));
        grid.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }
}

/// Sum-of-sinusoids utterances with per-segment class labels.
pub fn synth_corpus<T: Scalar>(spec: &SynthSpec) -> Result<Corpus<T>> {
    spec.validate()?;
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let freqs = spec.class_frequencies();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = ((spec.duration_secs * 100.0).round() as usize).max(1);
    let samples_len = frames * FRAME_SHIFT;
    let segment_frames = ((spec.segment_secs * 100.0).round() as usize).max(1);

    let mut utterances = Vec::with_capacity(spec.utterances);
    let mut deck: Vec<usize> = Vec::new();
    for u in 0..spec.utterances {
        let mut samples = vec![0.0f64; samples_len];
        let mut labels = Vec::with_capacity(frames);
        let mut start_frame = 0;
        while start_frame < frames {
            let end_frame = (start_frame + segment_frames).min(frames);
            let class = if spec.balanced {
                if deck.is_empty() {
                    deck = (0..spec.num_classes).collect();
                    deck.shuffle(&mut rng);
                }
                deck.pop().expect("refilled")
            } else {
                rng.random_range(0..spec.num_classes)
            };
            let phases: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
            // samples whose nearest frame centre lies in this segment
            let first = (start_frame * FRAME_SHIFT).saturating_sub(FRAME_SHIFT / 2);
            let first = if start_frame == 0 { 0 } else { first };
            let last = if end_frame == frames {
                samples_len
            } else {
                end_frame * FRAME_SHIFT - FRAME_SHIFT / 2
            };
            for (n, s) in samples.iter_mut().enumerate().take(last).skip(first) {
                let t = n as f64 / sr;
                *s = freqs[class]
                    .iter()
                    .zip(&phases)
                    .map(|(f, p)| (std::f64::consts::TAU * f * t + p).sin())
                    .sum::<f64>()
                    / 3.0;
            }
            labels.extend(std::iter::repeat_n(class, end_frame - start_frame));
            start_frame = end_frame;
        }
        if let Some(snr) = spec.snr_db {
            let power = samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64;
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).expect("finite sigma");
                for s in &mut samples {
                    *s += noise.sample(&mut rng);
                }
            }
        }
        let signal = Signal::from_samples(samples.into_iter().map(T::of).collect())?;
        let meeting = format!("meeting{}", u / spec.utterances_per_meeting);
        utterances.push(Utterance::new(format!("synth{u:04}"), signal, labels, Some(meeting))?);
    }
    Corpus::new(utterances, spec.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbank::{FbankConfig, FbankExtractor};

    fn utt(samples: Vec<f64>, meeting: &str) -> Utterance<f64> {
        let frames = frame_count(samples.len());
        Utterance::new("u", Signal::from_samples(samples).unwrap(), vec![0; frames], Some(meeting.into())).unwrap()
    }

    fn wav_bytes(channels: u16, rate: u32, bits: u16, samples: &[i16]) -> Vec<u8> {
        let mut out = Vec::new();
        let data_len = samples.len() * 2;
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * channels as u32 * 2).to_le_bytes());
        out.extend_from_slice(&(channels * 2).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    #[test]
    fn wav_scaling() {
        let signal: Signal<f64> = parse_wav(&wav_bytes(1, 16_000, 16, &[16384, -32768, 0])).unwrap();
        assert_eq!(signal.samples(), &[0.5, -1.0, 0.0]);
    }

    #[test]
    fn wav_rejects_unsupported_formats() {
        let err = parse_wav::<f64>(&wav_bytes(2, 16_000, 16, &[0, 0])).unwrap_err();
        assert!(matches!(err, Error::Format { field: "channels", .. }));
        let err = parse_wav::<f64>(&wav_bytes(1, 8_000, 16, &[0])).unwrap_err();
        assert!(matches!(err, Error::Format { field: "sample_rate", .. }), "{err}");
        assert!(err.to_string().contains("sample_rate"));
        let err = parse_wav::<f64>(&wav_bytes(1, 16_000, 8, &[0])).unwrap_err();
        assert!(matches!(err, Error::Format { field: "bits_per_sample", .. }));
        assert!(matches!(parse_wav::<f64>(b"RIFX0000WAVE"), Err(Error::Format { field: "riff_header", .. })));
    }

    #[test]
    fn wav_encode_decode_round_trip() {
        let signal = Signal::from_samples(vec![0.25f64, -0.5, 0.125, 0.0]).unwrap();
        let back: Signal<f64> = parse_wav(&encode_wav(&signal)).unwrap();
        assert_eq!(back, signal);
    }

    #[test]
    fn global_normalisation_statistics() {
        let mut corpus = Corpus::new(vec![utt(vec![1.0, 2.0, 3.0], "a"), utt(vec![5.0, 9.0], "a")], 1).unwrap();
        normalize_global(&mut corpus).unwrap();
        // by hand: mean 4, variance (9+4+1+1+25)/5 = 8
        assert_eq!(corpus.normalization, Some(Normalization::Global { mean: 4.0, variance: 8.0 }));
        let all: Vec<f64> = corpus.utterances.iter().flat_map(|u| u.signal.samples().to_vec()).collect();
        let mean = all.iter().sum::<f64>() / 5.0;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
        assert!((corpus.utterances[1].signal.samples()[1] - 5.0 / 8f64.sqrt()).abs() < 1e-12);

        let before = corpus.clone();
        normalize_global(&mut corpus).unwrap();
        for (a, b) in before.utterances.iter().zip(&corpus.utterances) {
            for (x, y) in a.signal.samples().iter().zip(b.signal.samples()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_corpus_is_degenerate() {
        let mut corpus = Corpus::new(vec![utt(vec![0.3; 10], "a")], 1).unwrap();
        assert!(matches!(normalize_global(&mut corpus), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn utterance_meeting_normalisation() {
        let mut corpus = Corpus::new(
            vec![
                utt(vec![1.0, 3.0], "m1"),
                utt(vec![10.0, 14.0, 12.0], "m1"),
                utt(vec![0.0, 4.0], "m2"),
                utt(vec![-1.0, 1.0], "m2"),
            ],
            1,
        )
        .unwrap();
        normalize_utterance_meeting(&mut corpus).unwrap();
        // by hand: m1 residuals {-1,1,-2,2,0} -> variance 10/5 = 2; m2 {-2,2,-1,1} -> 10/4 = 2.5
        let Some(Normalization::UtteranceMeeting {
            utterance_means,
            meeting_variances,
        }) = &corpus.normalization
        else {
            panic!("missing stats")
        };
        assert_eq!(utterance_means, &vec![2.0, 12.0, 2.0, 0.0]);
        assert_eq!(meeting_variances["m1"], 2.0);
        assert_eq!(meeting_variances["m2"], 2.5);
        for u in &corpus.utterances {
            let mean: f64 = u.signal.samples().iter().sum::<f64>() / u.signal.len() as f64;
            assert!(mean.abs() < 1e-9);
        }
        for meeting in ["m1", "m2"] {
            let pooled: Vec<f64> = corpus
                .utterances
                .iter()
                .filter(|u| u.meeting_id.as_deref() == Some(meeting))
                .flat_map(|u| u.signal.samples().to_vec())
                .collect();
            let var = pooled.iter().map(|v| v * v).sum::<f64>() / pooled.len() as f64;
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn utterance_meeting_requires_meeting_ids() {
        let mut u = utt(vec![1.0, 2.0], "m");
        u.meeting_id = None;
        let mut corpus = Corpus::new(vec![u], 1).unwrap();
        assert!(matches!(normalize_utterance_meeting(&mut corpus), Err(Error::Config { .. })));
    }

    #[test]
    fn label_count_must_match_frames() {
        let signal = Signal::from_samples(vec![0.0f64; 1600]).unwrap();
        assert!(Utterance::new("x", signal.clone(), vec![0; 9], None).is_err());
        assert!(Utterance::new("x", signal, vec![0; 10], None).is_ok());
        let sig = Signal::from_samples(vec![0.0f64; 1601]).unwrap();
        assert_eq!(frame_count(sig.len()), 11);
    }

    #[test]
    fn frame_windows_follow_padding_rule() {
        let samples: Vec<f64> = (0..1600).map(|n| n as f64 + 1.0).collect();
        let u = Utterance::new("x", Signal::from_samples(samples.clone()).unwrap(), (0..10).collect(), None).unwrap();
        let span = 501;
        let windows: Vec<_> = frame_windows(&u, span).collect();
        assert_eq!(windows.len(), 10);
        // oracle: slice an explicitly zero-extended copy
        let pad = 2000;
        let mut padded = vec![0.0; pad];
        padded.extend(&samples);
        padded.extend(vec![0.0; pad]);
        for w in &windows {
            let start = (pad + w.center) - span.div_ceil(2);
            assert_eq!(w.window, padded[start..start + span].to_vec());
            assert_eq!(w.label, w.center / FRAME_SHIFT);
        }
        assert!(windows[0].window[..251].iter().all(|&v| v == 0.0));
        assert_eq!(windows[0].window[251], 1.0);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus: Corpus<f64> = synth_corpus(&SynthSpec {
            utterances: 2,
            duration_secs: 0.5,
            segment_secs: 0.2,
            snr_db: None,
            ..SynthSpec::default()
        })
        .unwrap();
        let manifest = write_corpus(&corpus, dir.path()).unwrap();
        let loaded: Corpus<f64> = load_manifest(&manifest, Some(3)).unwrap();
        assert_eq!(loaded.utterances.len(), 2);
        for (a, b) in corpus.utterances.iter().zip(&loaded.utterances) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.meeting_id, b.meeting_id);
            for (x, y) in a.signal.samples().iter().zip(b.signal.samples()) {
                assert!((x - y).abs() <= 1.0 / 32768.0);
            }
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec::default();
        let a: Corpus<f64> = synth_corpus(&spec).unwrap();
        let b: Corpus<f64> = synth_corpus(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_samples(), 15 * 64_000);
        let c: Corpus<f64> = synth_corpus(&SynthSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_synth_has_equal_class_counts() {
        let corpus: Corpus<f64> = synth_corpus(&SynthSpec {
            utterances: 6,
            duration_secs: 1.0,
            segment_secs: 0.1,
            balanced: true,
            ..SynthSpec::default()
        })
        .unwrap();
        let mut counts = [0usize; 3];
        for l in corpus.utterances.iter().flat_map(|u| &u.labels) {
            counts[*l] += 1;
        }
        assert_eq!(counts, [200, 200, 200]);
    }

    #[test]
    fn single_class_synth_has_only_label_zero() {
        let corpus: Corpus<f64> = synth_corpus(&SynthSpec {
            num_classes: 1,
            utterances: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        assert!(corpus.utterances.iter().all(|u| u.labels.iter().all(|&l| l == 0)));
    }

    #[test]
    fn synth_spec_parsing() {
        let spec: SynthSpec = "classes=4,utterances=3,duration=2.5,snr=inf,seed=9".parse().unwrap();
        assert_eq!(spec.num_classes, 4);
        assert_eq!(spec.snr_db, None);
        assert!("classes=0".parse::<SynthSpec>().is_err());
        assert!("bogus=1".parse::<SynthSpec>().is_err());
    }

    /// Nearest class centroid in FBANK space, fit and scored on the same frames.
    #[test]
    fn noise_free_classes_are_separable_in_fbank_space() {
        let spec = SynthSpec {
            snr_db: None,
            ..SynthSpec::default()
        };
        let corpus: Corpus<f64> = synth_corpus(&spec).unwrap();
        let ex = FbankExtractor::<f64>::new(FbankConfig::default()).unwrap();
        let mut feats = Vec::new();
        for u in &corpus.utterances {
            let f = ex.compute_centered(u.signal.samples(), u.num_frames());
            for (row, &l) in f.outer_iter().zip(&u.labels) {
                feats.push((row.to_owned(), l));
            }
        }
        let mut centroids = vec![ndarray::Array1::<f64>::zeros(40); 3];
        let mut counts = [0usize; 3];
        for (f, l) in &feats {
            centroids[*l] += f;
            counts[*l] += 1;
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            *c /= n.max(1) as f64;
        }
        let correct = feats
            .iter()
            .filter(|(f, l)| {
                let best = (0..3)
                    .min_by(|&a, &b| {
                        let da = (f - &centroids[a]).mapv(|v| v * v).sum();
                        let db = (f - &centroids[b]).mapv(|v| v * v).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                best == *l
            })
            .count();
        let acc = correct as f64 / feats.len() as f64;
        assert!(acc > 0.95, "centroid accuracy {acc}");
    }
}
