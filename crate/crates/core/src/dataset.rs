//! Frame indexing, train/CV splitting and mini-batch assembly.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{Corpus, FRAME_SHIFT};
use crate::error::{Error, Result};
use crate::fbank::{stack_context, FbankExtractor};
use crate::model::{BatchInput, ModelConfig, ModelKind};
use crate::multispan::fill_centered_window;
use crate::Scalar;

/// One labelled 10 ms frame of one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRef {
    pub utterance: usize,
    pub frame: usize,
}

enum Source<T> {
    /// Stacked context features per utterance, one row per label frame.
    Features(Vec<Array2<T>>),
    /// Window length of each stream.
    Waveform(Vec<usize>),
}

/// A corpus prepared for one model's front-end.
pub struct Dataset<'a, T> {
    corpus: &'a Corpus<T>,
    source: Source<T>,
}

impl<'a, T: Scalar> Dataset<'a, T> {
    pub fn new(corpus: &'a Corpus<T>, config: &ModelConfig) -> Result<Self> {
        if corpus.num_classes != config.num_classes {
            return Err(Error::ClassCountMismatch {
                model: config.num_classes,
                corpus: corpus.num_classes,
            });
        }
        let source = match config.kind() {
            ModelKind::FbankDnn => {
                let ex = FbankExtractor::new(config.fbank)?;
                let feats = corpus
                    .utterances
                    .iter()
                    .map(|u| {
                        let f = ex.compute_centered(u.signal.samples(), u.num_frames());
                        stack_context(&f, config.context_frames)
                    })
                    .collect::<Result<_>>()?;
                Source::Features(feats)
            }
            _ => Source::Waveform(config.stream_configs().iter().map(|c| c.input_span()).collect()),
        };
        Ok(Self { corpus, source })
    }

    pub fn corpus(&self) -> &Corpus<T> {
        self.corpus
    }

    /// Every frame of the listed utterances, in order.
    pub fn frames(&self, utterances: &[usize]) -> Vec<FrameRef> {
        utterances
            .iter()
            .flat_map(|&u| (0..self.corpus.utterances[u].num_frames()).map(move |frame| FrameRef { utterance: u, frame }))
            .collect()
    }

    pub fn all_frames(&self) -> Vec<FrameRef> {
        self.frames(&(0..self.corpus.utterances.len()).collect::<Vec<_>>())
    }

    pub fn labels(&self, refs: &[FrameRef]) -> Vec<usize> {
        refs.iter()
            .map(|r| self.corpus.utterances[r.utterance].labels[r.frame])
            .collect()
    }

    /// Model input and labels for the given frames, rows in `refs` order.
    pub fn batch(&self, refs: &[FrameRef]) -> (BatchInput<T>, Vec<usize>) {
        let labels = self.labels(refs);
        let input = match &self.source {
            Source::Features(feats) => {
                let dim = feats.first().map_or(0, |f| f.ncols());
                let mut out = Array2::zeros((refs.len(), dim));
                for (mut row, r) in out.outer_iter_mut().zip(refs) {
                    row.assign(&feats[r.utterance].slice(s![r.frame, ..]));
                }
                BatchInput::Features(out)
            }
            Source::Waveform(spans) => BatchInput::Waveform(
                spans
                    .iter()
                    .map(|&span| {
                        let mut out = Array2::zeros((refs.len(), span));
                        for (mut row, r) in out.outer_iter_mut().zip(refs) {
                            let samples = self.corpus.utterances[r.utterance].signal.samples();
                            fill_centered_window(
                                samples,
                                r.frame * FRAME_SHIFT,
                                row.as_slice_mut().expect("row-major batch"),
                            );
                        }
                        out
                    })
                    .collect(),
            ),
        };
        (input, labels)
    }
}

/// Training and cross-validation frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<FrameRef>,
    pub cv: Vec<FrameRef>,
}

/// Seeded train/CV split.
///
/// Whole utterances are held out (`round(cv_fraction · n)`, at least one and at
/// most `n − 1`). A single-utterance corpus is split at frame level instead.
pub fn split_corpus<T>(corpus: &Corpus<T>, cv_fraction: f64, seed: u64) -> Result<Split> {
    if !(cv_fraction > 0.0 && cv_fraction < 1.0) {
        return Err(Error::config("train.cv_fraction", "must lie strictly between 0 and 1"));
    }
    let n = corpus.utterances.len();
    let total: usize = corpus.utterances.iter().map(|u| u.labels.len()).sum();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames_of = |u: usize| (0..corpus.utterances[u].labels.len()).map(move |frame| FrameRef { utterance: u, frame });
    if n == 1 {
        let mut all: Vec<FrameRef> = frames_of(0).collect();
        if all.len() < 2 {
            return Err(Error::DegenerateInput("a single frame cannot be split into train and CV".into()));
        }
        all.shuffle(&mut rng);
        let cv_len = ((cv_fraction * all.len() as f64).round() as usize).clamp(1, all.len() - 1);
        let mut cv = all.split_off(all.len() - cv_len);
        all.sort();
        cv.sort();
        return Ok(Split { train: all, cv });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let cv_count = ((cv_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut cv_utts = order[..cv_count].to_vec();
    let mut train_utts = order[cv_count..].to_vec();
    cv_utts.sort_unstable();
    train_utts.sort_unstable();
    Ok(Split {
        train: train_utts.into_iter().flat_map(frames_of).collect(),
        cv: cv_utts.into_iter().flat_map(frames_of).collect(),
    })
}
