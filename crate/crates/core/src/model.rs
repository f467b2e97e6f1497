//! Complete acoustic models: front-end plus DNN head.
//!
//! Three kinds are supported, named the way the systems are usually written:
//! `F_160^400` (FBANK features with context stacking), `I_S^L` (one
//! waveform stream fed to the head without projection) and
//! `M_{S1,S2,…}^{L1,L2,…}` (several projected streams, concatenated).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayD, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbank::FbankConfig;
use crate::multispan::{streams_backward_batch, streams_forward_batch, Stream, StreamConfig, StreamForward};
use crate::network::{Affine, DnnHead, HeadForward};
use crate::Scalar;

/// Which system a model is, with its defining strides and kernel lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    /// `F_shift^size`
    Fbank { frame_shift: usize, frame_size: usize },
    /// `I_S^L`
    SingleSpan { stride: usize, kernel_len: usize },
    /// `M_{S…}^{L…}`, at least two streams.
    MultiSpan { strides: Vec<usize>, kernel_lens: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FbankDnn,
    SingleSpan,
    MultiSpan,
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Fbank { .. } => ModelKind::FbankDnn,
            ModelSpec::SingleSpan { .. } => ModelKind::SingleSpan,
            ModelSpec::MultiSpan { .. } => ModelKind::MultiSpan,
        }
    }

    /// `(stride, kernel_len)` of each waveform stream, in order.
    pub fn streams(&self) -> Vec<(usize, usize)> {
        match self {
            ModelSpec::Fbank { .. } => Vec::new(),
            ModelSpec::SingleSpan { stride, kernel_len } => vec![(*stride, *kernel_len)],
            ModelSpec::MultiSpan { strides, kernel_lens } => {
                strides.iter().copied().zip(kernel_lens.iter().copied()).collect()
            }
        }
    }
}

fn parse_list(spec: &str, part: &str) -> Result<Vec<usize>> {
    let inner = part.strip_prefix('{').and_then(|p| p.strip_suffix('}')).unwrap_or(part);
    inner
        .split(',')
        .map(|v| {
            v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| Error::ModelSpec {
                spec: spec.to_string(),
                detail: format!("`{v}` is not a positive integer"),
            })
        })
        .collect()
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |detail: &str| Error::ModelSpec {
            spec: s.to_string(),
            detail: detail.to_string(),
        };
        let trimmed = s.trim();
        let (prefix, rest) = trimmed
            .split_once('_')
            .ok_or_else(|| err("expected `F_shift^size`, `I_S^L` or `M_S1,S2,…^L1,L2,…`"))?;
        let (lower, upper) = rest.split_once('^').ok_or_else(|| err("missing `^`"))?;
        let lower = parse_list(s, lower)?;
        let upper = parse_list(s, upper)?;
        match prefix {
            "F" | "f" => match (lower.as_slice(), upper.as_slice()) {
                ([shift], [size]) => Ok(ModelSpec::Fbank {
                    frame_shift: *shift,
                    frame_size: *size,
                }),
                _ => Err(err("FBANK spec takes one shift and one size")),
            },
            "I" | "i" => match (lower.as_slice(), upper.as_slice()) {
                ([stride], [kernel_len]) => Ok(ModelSpec::SingleSpan {
                    stride: *stride,
                    kernel_len: *kernel_len,
                }),
                _ => Err(err("single-span spec takes one stride and one kernel length")),
            },
            "M" | "m" => {
                if lower.len() != upper.len() {
                    return Err(err(&format!(
                        "arity mismatch: {} strides but {} kernel lengths",
                        lower.len(),
                        upper.len()
                    )));
                }
                if lower.len() < 2 {
                    return Err(err("multi-span spec needs at least two streams"));
                }
                Ok(ModelSpec::MultiSpan {
                    strides: lower,
                    kernel_lens: upper,
                })
            }
            _ => Err(err("unknown system prefix")),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        match self {
            ModelSpec::Fbank {
                frame_shift,
                frame_size,
            } => write!(f, "F_{frame_shift}^{frame_size}"),
            ModelSpec::SingleSpan { stride, kernel_len } => write!(f, "I_{stride}^{kernel_len}"),
            ModelSpec::MultiSpan { strides, kernel_lens } => {
                write!(f, "M_{}^{}", join(strides), join(kernel_lens))
            }
        }
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Stream geometry shared by every stream of a model; only stride and
/// kernel length of the first layer come from the model spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamGeometry {
    pub first_map_size: usize,
    pub first_num_kernels: usize,
    pub second_stride: usize,
    pub second_kernel_len: usize,
    pub second_map_size: usize,
    pub second_num_kernels: usize,
    pub projection_dim: usize,
}

impl Default for StreamGeometry {
    fn default() -> Self {
        Self {
            first_map_size: StreamConfig::DEFAULT_FIRST_MAP_SIZE,
            first_num_kernels: StreamConfig::DEFAULT_FIRST_NUM_KERNELS,
            second_stride: StreamConfig::DEFAULT_SECOND_STRIDE,
            second_kernel_len: StreamConfig::DEFAULT_SECOND_KERNEL_LEN,
            second_map_size: StreamConfig::DEFAULT_SECOND_MAP_SIZE,
            second_num_kernels: StreamConfig::DEFAULT_SECOND_NUM_KERNELS,
            projection_dim: StreamConfig::DEFAULT_PROJECTION_DIM,
        }
    }
}

impl StreamGeometry {
    pub fn stream(&self, first_stride: usize, first_kernel_len: usize) -> StreamConfig {
        StreamConfig {
            first_stride,
            first_kernel_len,
            first_map_size: self.first_map_size,
            first_num_kernels: self.first_num_kernels,
            second_stride: self.second_stride,
            second_kernel_len: self.second_kernel_len,
            second_map_size: self.second_map_size,
            second_num_kernels: self.second_num_kernels,
            projection_dim: self.projection_dim,
        }
    }
}

/// Everything needed to rebuild a model's structure; echoed into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spec: ModelSpec,
    pub num_classes: usize,
    /// Hidden layers currently in the head (grows during pretraining).
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub geometry: StreamGeometry,
    #[serde(default)]
    pub fbank: FbankConfig,
    pub context_frames: usize,
}

impl ModelConfig {
    pub const DEFAULT_HIDDEN_LAYERS: usize = 4;
    pub const DEFAULT_HIDDEN_DIM: usize = 512;
    pub const DEFAULT_CONTEXT_FRAMES: usize = 11;

    /// Reference architecture (4 × 512 head, default stream geometry).
    pub fn new(spec: ModelSpec, num_classes: usize) -> Self {
        let mut fbank = FbankConfig::default();
        if let ModelSpec::Fbank {
            frame_shift,
            frame_size,
        } = spec
        {
            fbank.frame_shift = frame_shift;
            fbank.frame_size = frame_size;
            fbank.fft_size = frame_size.next_power_of_two();
        }
        Self {
            spec,
            num_classes,
            hidden_layers: Self::DEFAULT_HIDDEN_LAYERS,
            hidden_dim: Self::DEFAULT_HIDDEN_DIM,
            geometry: StreamGeometry::default(),
            fbank,
            context_frames: Self::DEFAULT_CONTEXT_FRAMES,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    pub fn stream_configs(&self) -> Vec<StreamConfig> {
        self.spec
            .streams()
            .into_iter()
            .map(|(s, l)| self.geometry.stream(s, l))
            .collect()
    }

    /// Dimension of the vector the front-end hands to the head.
    pub fn front_dim(&self) -> usize {
        match self.kind() {
            ModelKind::FbankDnn => self.fbank.num_filters * self.context_frames,
            ModelKind::SingleSpan => self.geometry.second_map_size * self.geometry.second_num_kernels,
            ModelKind::MultiSpan => self.geometry.projection_dim * self.spec.streams().len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes", "must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim", "must be at least 1"));
        }
        match self.kind() {
            ModelKind::FbankDnn => {
                self.fbank.validate()?;
                if self.context_frames % 2 == 0 {
                    return Err(Error::config("context_frames", "must be odd"));
                }
            }
            _ => {
                for cfg in self.stream_configs() {
                    cfg.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("model", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrontEnd<T> {
    /// Stacked FBANK context windows; no trainable parameters.
    Fbank,
    Waveform(Vec<Stream<T>>),
}

/// Model input for a mini-batch.
#[derive(Debug, Clone)]
pub enum BatchInput<T> {
    /// One `B × T_i` window matrix per stream.
    Waveform(Vec<Array2<T>>),
    /// `B × front_dim` feature rows.
    Features(Array2<T>),
}

impl<T> BatchInput<T> {
    pub fn batch_size(&self) -> usize {
        match self {
            BatchInput::Waveform(w) => w.first().map_or(0, |w| w.nrows()),
            BatchInput::Features(f) => f.nrows(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelForward<T> {
    pub streams: Option<Vec<StreamForward<T>>>,
    pub head: HeadForward<T>,
}

/// Named tensors in model parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<(String, ArrayD<T>)>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn zeros_like(model: &AcousticModel<T>) -> Self {
        Self {
            tensors: model
                .parameters()
                .into_iter()
                .map(|(n, t)| (n, ArrayD::zeros(t.raw_dim())))
                .collect(),
        }
    }
}

/// Gradients share the parameter naming and order.
pub type Gradients<T> = ParamSet<T>;

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel<T> {
    config: ModelConfig,
    front: FrontEnd<T>,
    head: DnnHead<T>,
}

impl<T: Scalar> AcousticModel<T> {
    /// Randomly initialised model with `config.hidden_layers` hidden layers.
    pub fn random<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let projected = config.kind() == ModelKind::MultiSpan;
        let front = match config.kind() {
            ModelKind::FbankDnn => FrontEnd::Fbank,
            _ => FrontEnd::Waveform(
                config
                    .stream_configs()
                    .into_iter()
                    .map(|c| Stream::random(c, projected, rng))
                    .collect::<Result<_>>()?,
            ),
        };
        let hidden = vec![config.hidden_dim; config.hidden_layers];
        let head = DnnHead::random(config.front_dim(), &hidden, config.num_classes, rng)?;
        Ok(Self { config, front, head })
    }

    /// All-zero parameters with the configured structure.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let projected = config.kind() == ModelKind::MultiSpan;
        let front = match config.kind() {
            ModelKind::FbankDnn => FrontEnd::Fbank,
            _ => FrontEnd::Waveform(
                config
                    .stream_configs()
                    .into_iter()
                    .map(|c| Stream::zeros(c, projected))
                    .collect::<Result<_>>()?,
            ),
        };
        let mut hidden = Vec::with_capacity(config.hidden_layers);
        let mut prev = config.front_dim();
        for _ in 0..config.hidden_layers {
            hidden.push(Affine::zeros(prev, config.hidden_dim)?);
            prev = config.hidden_dim;
        }
        let head = DnnHead::new(hidden, Affine::zeros(prev, config.num_classes)?)?;
        Ok(Self { config, front, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn front(&self) -> &FrontEnd<T> {
        &self.front
    }

    pub fn streams(&self) -> &[Stream<T>] {
        match &self.front {
            FrontEnd::Waveform(s) => s,
            FrontEnd::Fbank => &[],
        }
    }

    pub fn streams_mut(&mut self) -> &mut [Stream<T>] {
        match &mut self.front {
            FrontEnd::Waveform(s) => s,
            FrontEnd::Fbank => &mut [],
        }
    }

    pub fn head(&self) -> &DnnHead<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut DnnHead<T> {
        &mut self.head
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Input span of each waveform stream, in samples.
    pub fn spans(&self) -> Vec<usize> {
        self.streams().iter().map(Stream::input_span).collect()
    }

    /// Inserts `count` freshly initialised hidden layers in front of the output layer.
    ///
    /// When the output layer's fan-in changes its weights are re-drawn and its biases kept.
    pub fn extend_head<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) -> Result<()> {
        let dim = self.config.hidden_dim;
        let mut prev = self.head.dims()[self.head.hidden().len()];
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            layers.push(Affine::random(prev, dim, rng)?);
            prev = dim;
        }
        let fallback = Affine::<T>::random(prev, self.config.num_classes, rng)?;
        self.head.insert_before_output(layers, fallback.weights().clone())?;
        self.config.hidden_layers = self.head.hidden().len();
        Ok(())
    }

    pub fn forward(&self, input: &BatchInput<T>) -> Result<ModelForward<T>> {
        match (&self.front, input) {
            (FrontEnd::Waveform(streams), BatchInput::Waveform(windows)) => {
                let (caches, features) = streams_forward_batch(streams, windows)?;
                let head = self.head.forward_batch(features.view())?;
                Ok(ModelForward {
                    streams: Some(caches),
                    head,
                })
            }
            (FrontEnd::Fbank, BatchInput::Features(features)) => Ok(ModelForward {
                streams: None,
                head: self.head.forward_batch(features.view())?,
            }),
            _ => Err(Error::Shape("batch input kind does not match the model front-end".into())),
        }
    }

    /// `B × C` class posteriors.
    pub fn predict(&self, input: &BatchInput<T>) -> Result<Array2<T>> {
        Ok(self.forward(input)?.head.probs)
    }

    /// Batch-mean cross-entropy and its exact gradient for every parameter.
    pub fn loss_and_gradients(&self, input: &BatchInput<T>, labels: &[usize]) -> Result<(T, Gradients<T>)> {
        let fwd = self.forward(input)?;
        let loss = mean_cross_entropy(&fwd.head.probs, labels)?;
        let (head_grads, d_front) = self.head.backward_batch(&fwd.head, labels)?;
        let mut tensors = Vec::new();
        if let (FrontEnd::Waveform(streams), Some(caches)) = (&self.front, &fwd.streams) {
            let stream_grads = streams_backward_batch(streams, caches, d_front.view())?;
            for (i, g) in stream_grads.into_iter().enumerate() {
                tensors.push((format!("stream{i}.conv1.weight"), g.first_weights.into_dyn()));
                tensors.push((format!("stream{i}.conv1.bias"), g.first_biases.into_dyn()));
                tensors.push((format!("stream{i}.conv2.weight"), g.second_weights.into_dyn()));
                tensors.push((format!("stream{i}.conv2.bias"), g.second_biases.into_dyn()));
                if let Some(p) = g.projection {
                    tensors.push((format!("stream{i}.projection"), p.into_dyn()));
                }
            }
        }
        for (j, g) in head_grads.hidden.into_iter().enumerate() {
            tensors.push((format!("head.hidden{j}.weight"), g.weights.into_dyn()));
            tensors.push((format!("head.hidden{j}.bias"), g.biases.into_dyn()));
        }
        tensors.push(("head.output.weight".into(), head_grads.output.weights.into_dyn()));
        tensors.push(("head.output.bias".into(), head_grads.output.biases.into_dyn()));
        Ok((loss, ParamSet { tensors }))
    }

    /// Named views of every trainable tensor in a fixed order.
    pub fn parameters(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (i, s) in self.streams().iter().enumerate() {
            out.push((format!("stream{i}.conv1.weight"), s.first_layer().weights().view().into_dyn()));
            out.push((format!("stream{i}.conv1.bias"), s.first_layer().biases().view().into_dyn()));
            out.push((format!("stream{i}.conv2.weight"), s.second_layer().weights().view().into_dyn()));
            out.push((format!("stream{i}.conv2.bias"), s.second_layer().biases().view().into_dyn()));
            if let Some(p) = s.projection() {
                out.push((format!("stream{i}.projection"), p.view().into_dyn()));
            }
        }
        for (j, layer) in self.head.hidden().iter().enumerate() {
            out.push((format!("head.hidden{j}.weight"), layer.weights().view().into_dyn()));
            out.push((format!("head.hidden{j}.bias"), layer.biases().view().into_dyn()));
        }
        out.push(("head.output.weight".into(), self.head.output().weights().view().into_dyn()));
        out.push(("head.output.bias".into(), self.head.output().biases().view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`AcousticModel::parameters`], same order.
    pub fn parameters_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        if let FrontEnd::Waveform(streams) = &mut self.front {
            for (i, s) in streams.iter_mut().enumerate() {
                let (first, second, projection) = s.parts_mut();
                let (w, b) = first.parts_mut();
                out.push((format!("stream{i}.conv1.weight"), w.view_mut().into_dyn()));
                out.push((format!("stream{i}.conv1.bias"), b.view_mut().into_dyn()));
                let (w, b) = second.parts_mut();
                out.push((format!("stream{i}.conv2.weight"), w.view_mut().into_dyn()));
                out.push((format!("stream{i}.conv2.bias"), b.view_mut().into_dyn()));
                if let Some(p) = projection {
                    out.push((format!("stream{i}.projection"), p.view_mut().into_dyn()));
                }
            }
        }
        let (hidden, output) = self.head.parts_mut();
        for (j, layer) in hidden.iter_mut().enumerate() {
            let (w, b) = layer.parts_mut();
            out.push((format!("head.hidden{j}.weight"), w.view_mut().into_dyn()));
            out.push((format!("head.hidden{j}.bias"), b.view_mut().into_dyn()));
        }
        let (w, b) = output.parts_mut();
        out.push(("head.output.weight".into(), w.view_mut().into_dyn()));
        out.push(("head.output.bias".into(), b.view_mut().into_dyn()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Mean of `−ln p[label]` over the rows of `probs`.
pub fn mean_cross_entropy<T: Scalar>(probs: &Array2<T>, labels: &[usize]) -> Result<T> {
    if labels.len() != probs.nrows() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            probs.nrows()
        )));
    }
    let mut total = T::zero();
    for (row, &label) in probs.outer_iter().zip(labels) {
        total += crate::network::cross_entropy(row, label)?;
    }
    Ok(total / T::of(labels.len() as f64))
}

/// Index of the largest posterior in each row.
pub fn argmax_rows<T: Scalar>(probs: &Array2<T>) -> Vec<usize> {
    probs
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_reference_system_names() {
        assert_eq!(
            "M_4,9,15^50,50,50".parse::<ModelSpec>().unwrap(),
            ModelSpec::MultiSpan {
                strides: vec![4, 9, 15],
                kernel_lens: vec![50, 50, 50]
            }
        );
        assert_eq!(
            "M_{15,15,15}^{50,100,400}".parse::<ModelSpec>().unwrap().streams(),
            vec![(15, 50), (15, 100), (15, 400)]
        );
        assert_eq!(
            "I_15^50".parse::<ModelSpec>().unwrap(),
            ModelSpec::SingleSpan {
                stride: 15,
                kernel_len: 50
            }
        );
        assert_eq!(
            "F_160^400".parse::<ModelSpec>().unwrap(),
            ModelSpec::Fbank {
                frame_shift: 160,
                frame_size: 400
            }
        );
    }

    #[test]
    fn rejects_malformed_specs() {
        let err = "M_4,9^50,50,50".parse::<ModelSpec>().unwrap_err();
        assert!(err.to_string().contains("arity mismatch"), "{err}");
        for bad in ["M_4^50", "I_4,5^50,50", "X_1^2", "I_0^50", "I_4", "I_a^5", ""] {
            assert!(bad.parse::<ModelSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn reference_front_dims() {
        let multi = ModelConfig::new("M_4,9,15^50,50,50".parse().unwrap(), 3006);
        assert_eq!(multi.front_dim(), 450);
        let single = ModelConfig::new("I_10^50".parse().unwrap(), 3006);
        assert_eq!(single.front_dim(), 1408);
        assert_eq!(single.stream_configs()[0].input_span(), 2040);
        let fbank = ModelConfig::new("F_160^400".parse().unwrap(), 3996);
        assert_eq!(fbank.front_dim(), 440);
    }

    #[test]
    fn config_toml_round_trip() {
        let mut cfg = ModelConfig::new("M_4,9,15^50,50,50".parse().unwrap(), 3);
        cfg.geometry.first_map_size = 20;
        let back = ModelConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parameter_views_agree_in_order() {
        let mut cfg = ModelConfig::new("M_2,3^5,5".parse().unwrap(), 3);
        cfg.geometry = StreamGeometry {
            first_map_size: 4,
            first_num_kernels: 2,
            second_stride: 2,
            second_kernel_len: 4,
            second_map_size: 3,
            second_num_kernels: 2,
            projection_dim: 3,
        };
        cfg.hidden_layers = 1;
        cfg.hidden_dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = AcousticModel::<f64>::random(cfg, &mut rng).unwrap();
        let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = model.parameters_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names.len(), 2 * 5 + 4);
        assert_eq!(names[4], "stream0.projection");
    }

    #[test]
    fn argmax_picks_largest() {
        let p = ndarray::array![[0.1, 0.7, 0.2], [0.5, 0.2, 0.3]];
        assert_eq!(argmax_rows(&p), vec![1, 0]);
    }
}
