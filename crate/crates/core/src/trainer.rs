//! Mini-batch SGD with momentum and weight decay, NewBob+ learning-rate
//! scheduling, cross-validation and layer-wise head pretraining.

use std::fmt;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Corpus;
use crate::dataset::{split_corpus, Dataset, FrameRef, Split};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, AcousticModel, Gradients, ModelConfig, ModelKind, ParamSet};
use crate::Scalar;

/// NewBob+ thresholds, in CV accuracy percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewBobConfig {
    pub threshold_start: f64,
    pub threshold_stop: f64,
    pub decay_factor: f64,
}

impl Default for NewBobConfig {
    fn default() -> Self {
        Self {
            threshold_start: 0.5,
            threshold_stop: 0.1,
            decay_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Frames per mini-batch.
    pub batch_size: usize,
    pub cv_fraction: f64,
    /// Cap on the total number of epochs, pretraining epochs included.
    pub max_epochs: usize,
    pub seed: u64,
    /// Layer-wise head pretraining for multi-span models.
    pub pretrain: bool,
    pub newbob: NewBobConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 256,
            cv_fraction: 0.1,
            max_epochs: 20,
            seed: 0,
            pretrain: true,
            newbob: NewBobConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("train.learning_rate", self.learning_rate),
            ("train.momentum", self.momentum),
            ("train.weight_decay", self.weight_decay),
            ("train.newbob.threshold_start", self.newbob.threshold_start),
            ("train.newbob.threshold_stop", self.newbob.threshold_stop),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("{v} must be a finite value ≥ 0")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.cv_fraction > 0.0 && self.cv_fraction < 1.0) {
            return Err(Error::config("train.cv_fraction", "must lie strictly between 0 and 1"));
        }
        if !(self.newbob.decay_factor > 0.0 && self.newbob.decay_factor < 1.0) {
            return Err(Error::config("train.newbob.decay_factor", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scheduler

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    DecayLr,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewBobState {
    pub current_lr: f64,
    pub previous_cv_accuracy: Option<f64>,
    pub ramping: bool,
    pub stopped: bool,
    pub config: NewBobConfig,
}

impl NewBobState {
    pub fn new(learning_rate: f64, config: NewBobConfig) -> Self {
        Self {
            current_lr: learning_rate,
            previous_cv_accuracy: None,
            ramping: false,
            stopped: false,
            config,
        }
    }

    /// Feeds one epoch's CV accuracy (percent) and returns the decision.
    ///
    /// The first observation only sets the baseline. Thresholds trigger on
    /// strictly smaller improvements. Once stopped, every call returns `Stop`.
    pub fn update(&mut self, cv_accuracy: f64) -> Decision {
        if self.stopped {
            return Decision::Stop;
        }
        let previous = self.previous_cv_accuracy.replace(cv_accuracy);
        let Some(previous) = previous else {
            return Decision::Continue;
        };
        let improvement = cv_accuracy - previous;
        if self.ramping {
            if improvement < self.config.threshold_stop {
                self.stopped = true;
                return Decision::Stop;
            }
        } else if improvement < self.config.threshold_start {
            self.ramping = true;
        } else {
            return Decision::Continue;
        }
        self.current_lr *= self.config.decay_factor;
        Decision::DecayLr
    }
}

// ---------------------------------------------------------------------------
// SGD

/// `v ← μ·v − lr·(g + λ·w)`, `w ← w + v`.
pub fn sgd_update_tensor<T: Scalar>(
    mut weights: ArrayViewMutD<'_, T>,
    grads: ArrayViewD<'_, T>,
    velocity: &mut ArrayD<T>,
    learning_rate: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if weights.shape() != grads.shape() || weights.shape() != velocity.shape() {
        return Err(Error::Shape(format!(
            "parameter {:?}, gradient {:?}, velocity {:?}",
            weights.shape(),
            grads.shape(),
            velocity.shape()
        )));
    }
    Zip::from(&mut weights).and(&grads).and(velocity).for_each(|w, &g, v| {
        *v = momentum * *v - learning_rate * (g + weight_decay * *w);
        *w += *v;
    });
    Ok(())
}

/// One SGD step over every parameter of `model`, in parameter order.
pub fn sgd_step<T: Scalar>(
    model: &mut AcousticModel<T>,
    grads: &Gradients<T>,
    velocity: &mut ParamSet<T>,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let params = model.parameters_mut();
    if params.len() != grads.tensors.len() || params.len() != velocity.tensors.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.tensors.len(),
            velocity.tensors.len()
        )));
    }
    let (lr, mu, wd) = (T::of(learning_rate), T::of(momentum), T::of(weight_decay));
    for ((name, w), ((gname, g), (_, v))) in params.into_iter().zip(grads.tensors.iter().zip(velocity.tensors.iter_mut())) {
        if &name != gname {
            return Err(Error::Shape(format!("gradient `{gname}` does not match parameter `{name}`")));
        }
        sgd_update_tensor(w, g.view(), v, lr, mu, wd)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pretraining

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// Front-end output feeds the output layer directly.
    Subnet,
    /// Two hidden layers.
    Extended,
    /// Complete head.
    Full,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Subnet => "subnet",
            Stage::Extended => "extended",
            Stage::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PretrainSchedule {
    pub stage: Stage,
    /// Hidden layers of the complete head.
    pub full_hidden_layers: usize,
}

impl PretrainSchedule {
    pub const EXTENDED_HIDDEN_LAYERS: usize = 2;

    pub fn new(full_hidden_layers: usize) -> Self {
        Self {
            stage: Stage::Subnet,
            full_hidden_layers,
        }
    }

    pub fn hidden_layers(&self, stage: Stage) -> usize {
        match stage {
            Stage::Subnet => 0,
            Stage::Extended => Self::EXTENDED_HIDDEN_LAYERS.min(self.full_hidden_layers),
            Stage::Full => self.full_hidden_layers,
        }
    }

    pub fn next_stage(&self) -> Option<Stage> {
        match self.stage {
            Stage::Subnet => Some(Stage::Extended),
            Stage::Extended => Some(Stage::Full),
            Stage::Full => None,
        }
    }
}

/// Starting model for training: the subnet when pretraining applies, else the full model.
pub fn initial_model<T: Scalar>(
    config: &ModelConfig,
    train: &TrainConfig,
) -> Result<(AcousticModel<T>, Option<PretrainSchedule>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    if train.pretrain && config.kind() == ModelKind::MultiSpan {
        let schedule = PretrainSchedule::new(config.hidden_layers);
        let mut subnet = config.clone();
        subnet.hidden_layers = 0;
        Ok((AcousticModel::random(subnet, &mut rng)?, Some(schedule)))
    } else {
        Ok((AcousticModel::random(config.clone(), &mut rng)?, None))
    }
}

/// Advances `schedule` one stage, inserting fresh hidden layers before the output layer.
///
/// Front-end parameters and existing hidden layers are untouched. The output
/// layer is kept unless its fan-in changes, in which case only its biases are kept.
pub fn pretrain_transition<T: Scalar, R: rand::Rng + ?Sized>(
    model: &mut AcousticModel<T>,
    schedule: &mut PretrainSchedule,
    rng: &mut R,
) -> Result<()> {
    let next = schedule
        .next_stage()
        .ok_or_else(|| Error::StageTransition(format!("no stage after {}", schedule.stage)))?;
    let have = model.head().hidden().len();
    if have != schedule.hidden_layers(schedule.stage) {
        return Err(Error::StageTransition(format!(
            "model has {have} hidden layers, stage {} expects {}",
            schedule.stage,
            schedule.hidden_layers(schedule.stage)
        )));
    }
    model.extend_head(schedule.hidden_layers(next) - have, rng)?;
    schedule.stage = next;
    Ok(())
}

// ---------------------------------------------------------------------------
// Epochs

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    /// Percent of frames whose argmax matches the label.
    pub accuracy: f64,
    pub loss: f64,
    pub frames: usize,
}

/// Frame accuracy and mean cross-entropy over `refs`.
pub fn evaluate<T: Scalar>(
    model: &AcousticModel<T>,
    data: &Dataset<'_, T>,
    refs: &[FrameRef],
    batch_size: usize,
) -> Result<EvalStats> {
    if refs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    for chunk in refs.chunks(batch_size.max(1)) {
        let (input, labels) = data.batch(chunk);
        let probs = model.predict(&input)?;
        correct += argmax_rows(&probs).iter().zip(&labels).filter(|(p, l)| p == l).count();
        for (row, &label) in probs.outer_iter().zip(&labels) {
            loss += crate::network::cross_entropy(row, label)?.as_f64();
        }
    }
    Ok(EvalStats {
        accuracy: 100.0 * correct as f64 / refs.len() as f64,
        loss: loss / refs.len() as f64,
        frames: refs.len(),
    })
}

/// Mutable optimiser state carried across epochs.
pub struct TrainState<T> {
    pub learning_rate: f64,
    pub velocity: ParamSet<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &AcousticModel<T>, config: &TrainConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            velocity: ParamSet::zeros_like(model),
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
        }
    }

    /// Zeroes the momentum buffers for a (possibly changed) model topology.
    pub fn reset_velocity(&mut self, model: &AcousticModel<T>) {
        self.velocity = ParamSet::zeros_like(model);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub cv: EvalStats,
}

/// One shuffled pass over the training frames followed by CV evaluation.
///
/// The reported training loss is the frame-weighted mean of each mini-batch's
/// loss before its update.
pub fn train_epoch<T: Scalar>(
    model: &mut AcousticModel<T>,
    data: &Dataset<'_, T>,
    split: &Split,
    state: &mut TrainState<T>,
    config: &TrainConfig,
) -> Result<EpochStats> {
    if split.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order = split.train.clone();
    order.shuffle(&mut state.rng);
    let mut total = 0.0f64;
    for chunk in order.chunks(config.batch_size) {
        let (input, labels) = data.batch(chunk);
        let (loss, grads) = model.loss_and_gradients(&input, &labels)?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss}")));
        }
        total += loss * chunk.len() as f64;
        sgd_step(
            model,
            &grads,
            &mut state.velocity,
            state.learning_rate,
            config.momentum,
            config.weight_decay,
        )?;
    }
    let cv_refs = if split.cv.is_empty() { &split.train } else { &split.cv };
    let cv = evaluate(model, data, cv_refs, config.batch_size)?;
    Ok(EpochStats {
        train_loss: total / order.len() as f64,
        cv,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub cv_accuracy: f64,
    pub stage: Option<Stage>,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch\tlr\ttrain_loss\tcv_accuracy";

    /// `epoch, lr, train loss, CV accuracy` separated by tabs.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{}",
            self.epoch,
            self.learning_rate,
            self.train_loss,
            format_accuracy(self.cv_accuracy)
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || Error::config("log", format!("malformed log line `{line}`"));
        if fields.len() != 4 {
            return Err(bad());
        }
        Ok(Self {
            epoch: fields[0].parse().map_err(|_| bad())?,
            learning_rate: fields[1].parse().map_err(|_| bad())?,
            train_loss: fields[2].parse().map_err(|_| bad())?,
            cv_accuracy: fields[3].parse().map_err(|_| bad())?,
            stage: None,
        })
    }
}

/// Accuracy as printed in logs and evaluation output.
pub fn format_accuracy(accuracy: f64) -> String {
    format!("{accuracy:.4}")
}

pub fn format_log(records: &[EpochRecord]) -> String {
    let mut out = String::from(EpochRecord::HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub split: Split,
    pub stopped_early: bool,
}

/// Full training run: pretraining stages (if any), then NewBob+-scheduled epochs.
///
/// `on_epoch` sees every record as soon as it is produced.
pub fn train<T: Scalar>(
    model: &mut AcousticModel<T>,
    mut schedule: Option<PretrainSchedule>,
    corpus: &Corpus<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    let data = Dataset::new(corpus, model.config())?;
    let split = split_corpus(corpus, config.cv_fraction, config.seed)?;
    let mut state = TrainState::new(model, config);
    let mut newbob = NewBobState::new(config.learning_rate, config.newbob);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut records = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let stats = train_epoch(model, &data, &split, &mut state, config)?;
        let record = EpochRecord {
            epoch,
            learning_rate: state.learning_rate,
            train_loss: stats.train_loss,
            cv_accuracy: stats.cv.accuracy,
            stage: schedule.map(|s| s.stage),
        };
        on_epoch(&record);
        records.push(record);

        if epoch == config.max_epochs {
            break;
        }
        if let Some(s) = schedule.as_mut().filter(|s| s.stage != Stage::Full) {
            pretrain_transition(model, s, &mut init_rng)?;
            state.reset_velocity(model);
            continue;
        }
        match newbob.update(stats.cv.accuracy) {
            Decision::Continue => {}
            Decision::DecayLr => state.learning_rate = newbob.current_lr,
            Decision::Stop => {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    Ok(TrainReport {
        records,
        split,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_corpus, SynthSpec};
    use crate::model::ModelSpec;
    use ndarray::arr1;
    use proptest::prelude::*;

    #[test]
    fn vanilla_sgd() {
        let mut w = arr1(&[1.0f64, -2.0]).into_dyn();
        let g = arr1(&[0.5, 0.25]).into_dyn();
        let mut v = ArrayD::zeros(w.raw_dim());
        sgd_update_tensor(w.view_mut(), g.view(), &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(w, arr1(&[0.95, -2.025]).into_dyn());
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = arr1(&[3.0f64]).into_dyn();
        let mut v = ArrayD::zeros(w.raw_dim());
        let g = ArrayD::zeros(w.raw_dim());
        sgd_update_tensor(w.view_mut(), g.view(), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(w[[0]], 3.0);
    }

    #[test]
    fn momentum_recurrence_on_a_scalar() {
        let (lr, mu, wd) = (0.1, 0.9, 0.01);
        let (g1, g2) = (2.0, -1.0);
        let mut w = arr1(&[1.0f64]).into_dyn();
        let mut v = ArrayD::zeros(w.raw_dim());
        sgd_update_tensor(w.view_mut(), arr1(&[g1]).into_dyn().view(), &mut v, lr, mu, wd).unwrap();
        sgd_update_tensor(w.view_mut(), arr1(&[g2]).into_dyn().view(), &mut v, lr, mu, wd).unwrap();
        // by hand
        let v1 = -lr * (g1 + wd * 1.0);
        let w1 = 1.0 + v1;
        let v2 = mu * v1 - lr * (g2 + wd * w1);
        let w2 = w1 + v2;
        assert!((w[[0]] - w2).abs() < 1e-15);
        assert!((v[[0]] - v2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut w = arr1(&[1.0f64, 2.0]).into_dyn();
        let mut v = ArrayD::zeros(w.raw_dim());
        let g = arr1(&[1.0]).into_dyn();
        assert!(sgd_update_tensor(w.view_mut(), g.view(), &mut v, 0.1, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn weight_decay_scales_weights(w0 in -10.0f64..10.0, lr in 0.0f64..1.0, wd in 0.0f64..1.0) {
            let mut w = arr1(&[w0]).into_dyn();
            let mut v = ArrayD::zeros(w.raw_dim());
            let zero = ArrayD::zeros(w.raw_dim());
            sgd_update_tensor(w.view_mut(), zero.view(), &mut v, lr, 0.0, wd).unwrap();
            prop_assert!((w[[0]] - w0 * (1.0 - lr * wd)).abs() < 1e-12);
        }

        #[test]
        fn newbob_lr_never_increases(accs in proptest::collection::vec(0.0f64..100.0, 1..40)) {
            let mut s = NewBobState::new(1.0, NewBobConfig::default());
            let mut last = s.current_lr;
            let mut stopped_at: Option<f64> = None;
            for a in accs {
                let d = s.update(a);
                prop_assert!(s.current_lr <= last);
                last = s.current_lr;
                if let Some(lr) = stopped_at {
                    prop_assert_eq!(d, Decision::Stop);
                    prop_assert_eq!(s.current_lr, lr);
                }
                if d == Decision::Stop {
                    stopped_at = Some(s.current_lr);
                }
            }
        }
    }

    #[test]
    fn newbob_trace() {
        let mut s = NewBobState::new(1.0, NewBobConfig::default());
        s.previous_cv_accuracy = Some(50.0);
        assert_eq!(s.update(55.0), Decision::Continue);
        assert_eq!(s.update(59.0), Decision::Continue);
        assert_eq!(s.update(59.3), Decision::DecayLr);
        assert!(s.ramping);
        assert_eq!(s.current_lr, 0.5);
        assert_eq!(s.update(59.8), Decision::DecayLr);
        assert_eq!(s.current_lr, 0.25);
        assert_eq!(s.update(59.85), Decision::Stop);
        assert_eq!(s.update(90.0), Decision::Stop);
        assert_eq!(s.current_lr, 0.25);
    }

    #[test]
    fn newbob_threshold_is_strict() {
        let cfg = NewBobConfig {
            threshold_start: 0.5,
            threshold_stop: 0.25,
            decay_factor: 0.5,
        };
        let mut s = NewBobState::new(1.0, cfg);
        s.previous_cv_accuracy = Some(10.0);
        assert_eq!(s.update(10.5), Decision::Continue);
        s.ramping = true;
        assert_eq!(s.update(10.75), Decision::DecayLr);
    }

    #[test]
    fn first_observation_continues() {
        let mut s = NewBobState::new(1.0, NewBobConfig::default());
        assert_eq!(s.update(0.0), Decision::Continue);
    }

    fn tiny_multispan(classes: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new("M_4,9,15^50,50,50".parse::<ModelSpec>().unwrap(), classes);
        cfg.geometry.first_map_size = 6;
        cfg.geometry.first_num_kernels = 3;
        cfg.geometry.second_stride = 3;
        cfg.geometry.second_kernel_len = 6;
        cfg.geometry.second_map_size = 5;
        cfg.geometry.second_num_kernels = 2;
        cfg.geometry.projection_dim = 4;
        cfg.hidden_dim = 8;
        cfg
    }

    #[test]
    fn pretraining_chain_and_preservation() {
        let cfg = tiny_multispan(3);
        let train = TrainConfig::default();
        let (mut model, schedule) = initial_model::<f64>(&cfg, &train).unwrap();
        let mut schedule = schedule.unwrap();
        assert_eq!(model.head().dims(), vec![12, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let before = model.clone();
        pretrain_transition(&mut model, &mut schedule, &mut rng).unwrap();
        assert_eq!(model.head().dims(), vec![12, 8, 8, 3]);
        assert_eq!(model.streams(), before.streams());
        assert_eq!(model.head().output().biases(), before.head().output().biases());

        let before = model.clone();
        pretrain_transition(&mut model, &mut schedule, &mut rng).unwrap();
        assert_eq!(model.head().dims(), vec![12, 8, 8, 8, 8, 3]);
        assert_eq!(model.streams(), before.streams());
        assert_eq!(&model.head().hidden()[..2], before.head().hidden());
        assert_eq!(model.head().output(), before.head().output());
        assert_eq!(model.config().hidden_layers, 4);

        assert!(matches!(
            pretrain_transition(&mut model, &mut schedule, &mut rng),
            Err(Error::StageTransition(_))
        ));
    }

    #[test]
    fn transition_rejects_mismatched_model() {
        let cfg = tiny_multispan(3);
        let mut model = AcousticModel::<f64>::random(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut schedule = PretrainSchedule::new(4);
        let err = pretrain_transition(&mut model, &mut schedule, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::StageTransition(_))));
    }

    fn small_corpus() -> Corpus<f64> {
        let mut c = synth_corpus(&SynthSpec {
            utterances: 4,
            duration_secs: 0.5,
            segment_secs: 0.1,
            ..SynthSpec::default()
        })
        .unwrap();
        crate::dataio::normalize_global(&mut c).unwrap();
        c
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let corpus = small_corpus();
        let cfg = tiny_multispan(3);
        let train = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (mut model, _) = initial_model::<f64>(&cfg, &TrainConfig { pretrain: false, ..train.clone() }).unwrap();
        let before = model.clone();
        let data = Dataset::new(&corpus, model.config()).unwrap();
        let split = split_corpus(&corpus, train.cv_fraction, 0).unwrap();
        let mut state = TrainState::new(&model, &train);
        let stats = train_epoch(&mut model, &data, &split, &mut state, &train).unwrap();
        assert_eq!(model, before);
        let eval = evaluate(&model, &data, &split.train, 16).unwrap();
        assert!((stats.train_loss - eval.loss).abs() < 1e-12);
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let corpus = small_corpus();
        let cfg = tiny_multispan(3);
        let train = TrainConfig::default();
        let (mut model, _) = initial_model::<f64>(&cfg, &train).unwrap();
        let data = Dataset::new(&corpus, model.config()).unwrap();
        let split = Split {
            train: vec![],
            cv: vec![],
        };
        let mut state = TrainState::new(&model, &train);
        assert!(matches!(
            train_epoch(&mut model, &data, &split, &mut state, &train),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn full_batch_descent() {
        let corpus = small_corpus();
        let cfg = tiny_multispan(3);
        let train = TrainConfig {
            learning_rate: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
            pretrain: false,
            ..TrainConfig::default()
        };
        let (mut model, _) = initial_model::<f64>(&cfg, &train).unwrap();
        let data = Dataset::new(&corpus, model.config()).unwrap();
        let refs = data.all_frames();
        let (input, labels) = data.batch(&refs);
        let mut velocity = ParamSet::zeros_like(&model);
        let mut losses = Vec::new();
        for _ in 0..6 {
            let (loss, grads) = model.loss_and_gradients(&input, &labels).unwrap();
            losses.push(loss);
            sgd_step(&mut model, &grads, &mut velocity, train.learning_rate, 0.0, 0.0).unwrap();
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = small_corpus();
        let cfg = tiny_multispan(3);
        let tc = TrainConfig {
            max_epochs: 4,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut model, schedule) = initial_model::<f64>(&cfg, &tc).unwrap();
            let report = train(&mut model, schedule, &corpus, &tc, |_| {}).unwrap();
            (model, report.records)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert_eq!(r1[0].stage, Some(Stage::Subnet));
        assert_eq!(r1[1].stage, Some(Stage::Extended));
        assert_eq!(r1[2].stage, Some(Stage::Full));
        assert_eq!(m1.head().hidden().len(), 4);
    }

    #[test]
    fn log_lines_round_trip() {
        let r = EpochRecord {
            epoch: 3,
            learning_rate: 0.0125,
            train_loss: 0.5,
            cv_accuracy: 87.125,
            stage: None,
        };
        let line = r.to_line();
        assert_eq!(line.split('\t').count(), 4);
        assert_eq!(EpochRecord::parse_line(&line).unwrap(), r);
        assert!(format_log(&[r]).starts_with("epoch\tlr"));
    }

    #[test]
    fn sgd_step_rejects_foreign_gradients() {
        let cfg = tiny_multispan(3);
        let mut model = AcousticModel::<f64>::zeros(cfg).unwrap();
        let mut velocity = ParamSet::zeros_like(&model);
        let mut grads = ParamSet::zeros_like(&model);
        grads.tensors[0].0 = "bogus".into();
        assert!(sgd_step(&mut model, &grads, &mut velocity, 0.1, 0.0, 0.0).is_err());
    }
}
