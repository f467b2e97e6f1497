//! Run configuration and the commands behind the `msam` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use msam_core::analysis::export_analysis;
use msam_core::checkpoint::{self, TrainingContext};
use msam_core::conv::{samples_to_ms, DEFAULT_SAMPLE_RATE};
use msam_core::dataio::{load_manifest, synth_corpus, write_corpus, Corpus, NormalizationKind, SynthSpec};
use msam_core::dataset::{split_corpus, Dataset};
use msam_core::model::{ModelConfig, ModelKind, ModelSpec, StreamGeometry};
use msam_core::trainer::{evaluate, format_accuracy, initial_model, train, EpochRecord, EvalStats, TrainConfig};
use msam_core::{Error, ErrorKind, Result};
use serde::{Deserialize, Serialize};

/// Numeric type used by the command-line tools; checkpoints store `f32`.
pub type Real = f32;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train.log";
pub const RUN_CONFIG_FILE: &str = "run.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub corpus: CorpusSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Compact form such as `M_4,9,15^50,50,50`; alternative to `kind` + streams.
    pub spec: Option<String>,
    pub kind: Option<ModelKind>,
    pub strides: Vec<usize>,
    pub kernel_lens: Vec<usize>,
    pub frame_shift: Option<usize>,
    pub frame_size: Option<usize>,
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub context_frames: usize,
    pub geometry: StreamGeometry,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            spec: None,
            kind: None,
            strides: Vec::new(),
            kernel_lens: Vec::new(),
            frame_shift: None,
            frame_size: None,
            hidden_layers: ModelConfig::DEFAULT_HIDDEN_LAYERS,
            hidden_dim: ModelConfig::DEFAULT_HIDDEN_DIM,
            context_frames: ModelConfig::DEFAULT_CONTEXT_FRAMES,
            geometry: StreamGeometry::default(),
        }
    }
}

fn config_error(field: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        detail: detail.into(),
    }
}

impl ModelSection {
    pub fn resolve_spec(&self) -> Result<ModelSpec> {
        if let Some(text) = &self.spec {
            let spec: ModelSpec = text.parse().map_err(|e: Error| config_error("model.spec", e.to_string()))?;
            if let Some(kind) = self.kind.filter(|&k| k != spec.kind()) {
                return Err(config_error(
                    "model.kind",
                    format!("{kind:?} conflicts with spec `{text}`"),
                ));
            }
            if !self.strides.is_empty() || !self.kernel_lens.is_empty() {
                return Err(config_error("model.strides", "give either model.spec or model.strides/kernel_lens"));
            }
            return Ok(spec);
        }
        let kind = self
            .kind
            .ok_or_else(|| config_error("model.spec", "missing; set model.spec or model.kind"))?;
        if self.strides.len() != self.kernel_lens.len() {
            return Err(config_error(
                "model.kernel_lens",
                format!(
                    "arity mismatch: {} strides, {} kernel lengths",
                    self.strides.len(),
                    self.kernel_lens.len()
                ),
            ));
        }
        match kind {
            ModelKind::FbankDnn => Ok(ModelSpec::Fbank {
                frame_shift: self.frame_shift.unwrap_or(160),
                frame_size: self.frame_size.unwrap_or(400),
            }),
            ModelKind::SingleSpan => {
                if self.strides.len() != 1 {
                    return Err(config_error(
                        "model.strides",
                        format!("single_span requires exactly 1 stream, got {}", self.strides.len()),
                    ));
                }
                Ok(ModelSpec::SingleSpan {
                    stride: self.strides[0],
                    kernel_len: self.kernel_lens[0],
                })
            }
            ModelKind::MultiSpan => {
                if self.strides.len() < 2 {
                    return Err(config_error(
                        "model.strides",
                        format!("multi_span requires at least 2 streams, got {}", self.strides.len()),
                    ));
                }
                Ok(ModelSpec::MultiSpan {
                    strides: self.strides.clone(),
                    kernel_lens: self.kernel_lens.clone(),
                })
            }
        }
    }

    pub fn model_config(&self, num_classes: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(self.resolve_spec()?, num_classes);
        cfg.hidden_layers = self.hidden_layers;
        cfg.hidden_dim = self.hidden_dim;
        cfg.context_frames = self.context_frames;
        cfg.geometry = self.geometry;
        cfg.validate().map_err(|e| match e {
            Error::InvalidGeometry(detail) => config_error("model.geometry", detail),
            other => other,
        })?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Tab-separated manifest (wav path, label path, meeting id).
    pub manifest: Option<PathBuf>,
    /// Synthetic corpus spec, e.g. `classes=3,utterances=15,duration=4`.
    pub synth: Option<String>,
    pub normalization: NormalizationKind,
    /// Class count for manifest corpora; inferred from the labels when absent.
    pub num_classes: Option<usize>,
}

impl CorpusSection {
    pub fn validate(&self) -> Result<()> {
        match (&self.manifest, &self.synth) {
            (Some(_), Some(_)) => Err(config_error("corpus", "set only one of corpus.manifest and corpus.synth")),
            (None, None) => Err(config_error("corpus", "set corpus.manifest or corpus.synth")),
            (None, Some(s)) => s
                .parse::<SynthSpec>()
                .map(|_| ())
                .map_err(|e| match e {
                    Error::Config { field, detail } => config_error(&format!("corpus.{field}"), detail),
                    other => other,
                }),
            (Some(_), None) => Ok(()),
        }
    }

    /// Loads the corpus without normalising it.
    pub fn load_raw(&self) -> Result<Corpus<Real>> {
        self.validate()?;
        match (&self.manifest, &self.synth) {
            (Some(path), _) => load_manifest(path, self.num_classes),
            (_, Some(spec)) => synth_corpus(&spec.parse()?),
            _ => unreachable!("validated"),
        }
    }

    pub fn load(&self) -> Result<Corpus<Real>> {
        let mut corpus = self.load_raw()?;
        self.normalization.apply(&mut corpus)?;
        Ok(corpus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("msam-out"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub corpus: Option<PathBuf>,
    pub synth: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|span| text[..span.start].lines().count().to_string())
                .map_or_else(|| "config".to_string(), |line| format!("config (line {line})"));
            config_error(&field, e.message().to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(spec) = &o.model {
            self.model.spec = Some(spec.clone());
            self.model.kind = None;
            self.model.strides.clear();
            self.model.kernel_lens.clear();
        }
        if let Some(path) = &o.corpus {
            self.corpus.manifest = Some(path.clone());
            self.corpus.synth = None;
        }
        if let Some(spec) = &o.synth {
            self.corpus.synth = Some(spec.clone());
            self.corpus.manifest = None;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(epochs) = o.epochs {
            self.train.max_epochs = epochs;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.resolve_spec()?;
        self.train.validate()?;
        self.corpus.validate()
    }
}

/// Files produced by [`cmd_train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub records: Vec<EpochRecord>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::File {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Trains a model, writing `model.ckpt`, `train.log` and `run.toml` into the output directory.
///
/// Each log line is also echoed to `progress`.
pub fn cmd_train(config: &RunConfig, mut progress: impl Write) -> Result<TrainOutcome> {
    config.validate()?;
    let corpus = config.corpus.load()?;
    let model_config = config.model.model_config(corpus.num_classes)?;
    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(io_at(dir))?;

    let log_path = dir.join(LOG_FILE);
    let mut log = create(&log_path)?;
    writeln!(log, "{}", EpochRecord::HEADER).map_err(io_at(&log_path))?;
    let mut log_error = None;
    let (mut model, schedule) = initial_model::<Real>(&model_config, &config.train)?;
    let report = train(&mut model, schedule, &corpus, &config.train, |record| {
        let line = record.to_line();
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_error.get_or_insert(e);
        }
        let _ = writeln!(progress, "{line}");
    })?;
    if let Some(e) = log_error {
        return Err(io_at(&log_path)(e));
    }

    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    let context = TrainingContext {
        train: Some(config.train.clone()),
        normalization: Some(config.corpus.normalization),
    };
    checkpoint::save(&model, &context, &checkpoint_path)?;
    let run_path = dir.join(RUN_CONFIG_FILE);
    fs::write(&run_path, config.to_toml()).map_err(io_at(&run_path))?;
    Ok(TrainOutcome {
        checkpoint: checkpoint_path,
        log: log_path,
        records: report.records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSplit {
    #[default]
    All,
    Train,
    Cv,
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(EvalSplit::All),
            "train" => Ok(EvalSplit::Train),
            "cv" => Ok(EvalSplit::Cv),
            _ => Err(config_error("split", format!("`{s}` is not one of all, train, cv"))),
        }
    }
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::All => "all",
            EvalSplit::Train => "train",
            EvalSplit::Cv => "cv",
        }
    }
}

pub const EVAL_HEADER: &str = "split\tframes\taccuracy\tloss";

/// Frame accuracy and mean cross-entropy of a checkpoint on a corpus.
///
/// The checkpoint's recorded normalisation takes precedence over the corpus
/// section's. The `train`/`cv` splits are rebuilt from the recorded training
/// seed and CV fraction.
pub fn cmd_eval(checkpoint_path: &Path, corpus: &CorpusSection, split: EvalSplit, mut out: impl Write) -> Result<EvalStats> {
    let (model, meta) = checkpoint::load::<Real>(checkpoint_path)?;
    let mut data = corpus.load_raw()?;
    meta.normalization.unwrap_or(corpus.normalization).apply(&mut data)?;
    if data.num_classes != model.num_classes() {
        return Err(Error::ClassCountMismatch {
            model: model.num_classes(),
            corpus: data.num_classes,
        });
    }
    let dataset = Dataset::new(&data, model.config())?;
    let train_cfg = meta.train.clone();
    let batch_size = train_cfg.as_ref().map_or(256, |t| t.batch_size);
    let refs = match split {
        EvalSplit::All => dataset.all_frames(),
        EvalSplit::Train | EvalSplit::Cv => {
            let t = train_cfg.ok_or_else(|| config_error("split", "checkpoint records no training split"))?;
            let s = split_corpus(&data, t.cv_fraction, t.seed)?;
            if split == EvalSplit::Cv {
                s.cv
            } else {
                s.train
            }
        }
    };
    let stats = evaluate(&model, &dataset, &refs, batch_size)?;
    let line = format!(
        "{}\t{}\t{}\t{:.6}",
        split.name(),
        stats.frames,
        format_accuracy(stats.accuracy),
        stats.loss
    );
    writeln!(out, "{EVAL_HEADER}\n{line}")?;
    Ok(stats)
}

/// Writes kernel spectra, effective lengths and the Mel reference for a checkpoint.
pub fn cmd_analyze(checkpoint_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (model, _) = checkpoint::load::<Real>(checkpoint_path)?;
    export_analysis(&model, out_dir)
}

/// Writes a synthetic corpus (WAV + label files + manifest) into `out_dir`.
pub fn cmd_synth(spec: &str, out_dir: &Path) -> Result<PathBuf> {
    let corpus: Corpus<Real> = synth_corpus(&spec.parse()?)?;
    write_corpus(&corpus, out_dir)
}

/// Tab-separated span table: stream, stride, kernel length, span in samples and ms.
pub fn cmd_spans(model: &ModelSection) -> Result<String> {
    let spec = model.resolve_spec()?;
    let mut out = String::from("stream\tstride\tkernel_len\tspan_samples\tspan_ms\n");
    if spec.kind() == ModelKind::FbankDnn {
        return Err(config_error("model.spec", "FBANK models have no waveform streams"));
    }
    for (i, (s, l)) in spec.streams().into_iter().enumerate() {
        let span = model.geometry.stream(s, l).input_span();
        out.push_str(&format!(
            "{i}\t{s}\t{l}\t{span}\t{:.1}\n",
            samples_to_ms(span, DEFAULT_SAMPLE_RATE)
        ));
    }
    Ok(out)
}

/// Caps the global worker pool at `MSAM_THREADS` when set.
pub fn configure_threads(value: Option<&str>) -> Result<()> {
    let Some(value) = value else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| config_error("MSAM_THREADS", format!("`{value}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| config_error("MSAM_THREADS", e.to_string()))
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Validation => 1,
        ErrorKind::Io => 2,
        ErrorKind::Numerical => 3,
    }
}
