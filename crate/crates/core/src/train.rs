//! The training loop: optional log-likelihood warm-up, a confidence tensor of
//! cached class probabilities, minibatch updates of the aggregate loss, and
//! best-on-validation model selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aggregate::{Task, TaskKind};
use crate::data::{AggregateObservation, Dataset};
use crate::error::{Error, Result};
use crate::eval::{self, BagRule, ConfusionCounts};
use crate::loss::{aggregate_loss, compute_weights, group_etas, loglik_loss, CrossEntropy, WeightMatrix};
use crate::model::{Adam, AdamConfig, Model};
use crate::posterior::{self, ClassProbabilities, PROB_EPS};
use crate::rng::{self, streams, Rng};

/// Objective used for every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Warm-up (if enabled) followed by the weighted aggregate loss.
    #[default]
    Uum,
    /// `-log p(z | x)` for all epochs.
    #[serde(alias = "loglik")]
    LogLikelihood,
}

/// Warm-up epochs for pairwise and triplet at benchmark scale.
pub const LARGE_SCALE_WARMUP: usize = 20;
/// Warm-up epochs for pairwise and triplet at small scale.
pub const SMALL_SCALE_WARMUP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flags {
    pub warmup: bool,
    pub warmup_epochs: usize,
    pub use_confidence: bool,
}

/// Per-task defaults for the warm-up and confidence-tensor switches.
pub fn default_flags(task: TaskKind) -> Flags {
    match task {
        TaskKind::Pairwise | TaskKind::Triplet | TaskKind::Rank | TaskKind::OrdinalTriplet => {
            Flags { warmup: true, warmup_epochs: SMALL_SCALE_WARMUP, use_confidence: true }
        }
        TaskKind::Llp => Flags { warmup: false, warmup_epochs: 0, use_confidence: true },
        TaskKind::Mil => Flags { warmup: false, warmup_epochs: 0, use_confidence: false },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup: bool,
    pub warmup_epochs: usize,
    pub use_confidence: bool,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Fraction of the observations held out for model selection when no
    /// validation set is given.
    pub val_fraction: f64,
    pub method: Method,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            warmup: false,
            warmup_epochs: 0,
            use_confidence: false,
            batch_size: 128,
            optimizer: AdamConfig::default(),
            seed: 0,
            val_fraction: 0.0,
            method: Method::Uum,
        }
    }
}

impl TrainConfig {
    /// Defaults with the task's flags. `warmup_epochs` is capped at `epochs`.
    pub fn for_task(task: TaskKind, epochs: usize) -> Self {
        let flags = default_flags(task);
        TrainConfig {
            epochs,
            warmup: flags.warmup,
            warmup_epochs: flags.warmup_epochs.min(epochs),
            use_confidence: flags.use_confidence,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(format!("val_fraction {} not in [0, 1)", self.val_fraction)));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("bad optimizer settings {o:?}")));
        }
        Ok(())
    }

    /// Whether epoch `t` (1-based) updates by the log-likelihood.
    pub fn is_warmup(&self, t: usize) -> bool {
        self.method == Method::LogLikelihood || (self.warmup && t <= self.warmup_epochs)
    }
}

/// Cached class probabilities, one per instance of every group. Starts at
/// `1/k` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTensor {
    entries: Vec<Vec<ClassProbabilities>>,
}

impl ConfidenceTensor {
    pub fn uniform(observations: &[AggregateObservation], k: usize) -> Self {
        let entries = observations.iter().map(|o| vec![ClassProbabilities::uniform(k); o.m()]).collect();
        ConfidenceTensor { entries }
    }

    pub fn get(&self, group: usize) -> &[ClassProbabilities] {
        &self.entries[group]
    }

    pub fn set(&mut self, group: usize, etas: Vec<ClassProbabilities>) {
        self.entries[group] = etas;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    /// Sum of `log p(z | x)` over the training groups after the epoch.
    pub likelihood: f64,
    #[serde(default)]
    pub degenerate: usize,
}

/// What a batch update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOutcome {
    /// Sum of the per-group losses that took part.
    pub loss: f64,
    pub used: usize,
    pub degenerate: usize,
}

/// Step-level access to the training loop.
pub struct Trainer<'a> {
    task: Task,
    observations: &'a [AggregateObservation],
    model: Model,
    adam: Adam,
    config: TrainConfig,
    confidence: Option<ConfidenceTensor>,
    shuffle: Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(observations: &'a [AggregateObservation], task: Task, model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if observations.is_empty() {
            return Err(Error::EmptyInput);
        }
        if model.num_classes() != task.k() {
            return Err(Error::InvalidConfig(format!(
                "model has {} classes, task has {}",
                model.num_classes(),
                task.k()
            )));
        }
        for obs in observations {
            task.check_label(&obs.z)?;
            if obs.m() != task.m() {
                return Err(Error::GroupSize { expected: task.m(), got: obs.m() });
            }
        }
        let adam = Adam::new(model.params().len(), config.optimizer);
        let confidence = config.use_confidence.then(|| ConfidenceTensor::uniform(observations, task.k()));
        Ok(Trainer {
            task,
            observations,
            model,
            adam,
            shuffle: rng::seeded(config.seed, streams::SHUFFLE),
            config,
            confidence,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn confidence(&self) -> Option<&ConfidenceTensor> {
        self.confidence.as_ref()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// The class probabilities the weights of `group` would be computed from:
    /// the cached ones with a confidence tensor, the model's otherwise.
    pub fn weight_etas(&self, group: usize) -> Result<Vec<ClassProbabilities>> {
        match &self.confidence {
            Some(c) => Ok(c.get(group).to_vec()),
            None => group_etas(&self.model, &self.observations[group].xs),
        }
    }

    /// Importance weights for `group`; `None` when it is degenerate.
    pub fn weights(&self, group: usize) -> Result<Option<WeightMatrix>> {
        let etas = self.weight_etas(group)?;
        let post = posterior::posterior(&self.task, &etas, &self.observations[group].z)?;
        Ok(compute_weights(&post))
    }

    /// One optimizer step on the groups in `batch`, averaging over the groups
    /// that contribute, then the confidence refresh for those groups.
    pub fn step(&mut self, batch: &[usize], warmup: bool) -> Result<BatchOutcome> {
        let mut grads = self.model.zero_grads();
        let mut outcome = BatchOutcome { loss: 0.0, used: 0, degenerate: 0 };
        if warmup {
            let scale = 1.0 / batch.len() as f64;
            for &g in batch {
                let obs = &self.observations[g];
                outcome.loss += loglik_loss(&self.model, &self.task, &obs.xs, &obs.z, scale, &mut grads)?;
                outcome.used += 1;
            }
        } else {
            let mut weighted = Vec::with_capacity(batch.len());
            for &g in batch {
                match self.weights(g)? {
                    Some(w) => weighted.push((g, w)),
                    None => outcome.degenerate += 1,
                }
            }
            if !weighted.is_empty() {
                let scale = 1.0 / weighted.len() as f64;
                for (g, w) in &weighted {
                    let xs = &self.observations[*g].xs;
                    outcome.loss += aggregate_loss(&self.model, xs, w, &CrossEntropy, scale, &mut grads)?;
                }
                outcome.used = weighted.len();
            }
        }
        if outcome.used > 0 {
            self.adam.step_model(&mut self.model, &grads)?;
        }
        if let Some(c) = &mut self.confidence {
            for &g in batch {
                c.set(g, group_etas(&self.model, &self.observations[g].xs)?);
            }
        }
        Ok(outcome)
    }

    /// One shuffled pass over the observations. Returns the mean group loss
    /// and the number of degenerate groups.
    pub fn run_epoch(&mut self) -> Result<(f64, usize)> {
        self.epoch += 1;
        let warmup = self.config.is_warmup(self.epoch);
        let mut order: Vec<usize> = (0..self.observations.len()).collect();
        order.shuffle(&mut self.shuffle);
        let (mut loss, mut used, mut degenerate) = (0.0, 0usize, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let out = self.step(batch, warmup)?;
            loss += out.loss;
            used += out.used;
            degenerate += out.degenerate;
        }
        if used == 0 {
            return Err(Error::AllDegenerate { epoch: self.epoch });
        }
        Ok((loss / used as f64, degenerate))
    }
}

/// Held-out data used to pick the returned parameters. Higher is better for
/// every metric.
#[derive(Debug, Clone, Default)]
pub enum Validation {
    /// Hold out `val_fraction` of the observations.
    #[default]
    FromConfig,
    /// Instance labels: modified accuracy for pairwise and triplet (labels
    /// are identifiable only up to a permutation), accuracy otherwise.
    Labeled(Dataset),
    /// Aggregate observations: group accuracy for MIL, mean
    /// `log p(z | x)` otherwise.
    Groups(Vec<AggregateObservation>),
    None,
}

impl Validation {
    fn metric(&self, model: &Model, task: &Task) -> Result<Option<f64>> {
        match self {
            Validation::None | Validation::FromConfig => Ok(None),
            Validation::Labeled(data) => {
                let preds = eval::predictions(model, data)?;
                let labels = data.labels();
                if task.kind().is_permutation_invariant() {
                    let confusion = ConfusionCounts::from_predictions(&preds, &labels, task.k())?;
                    Ok(Some(eval::modified_accuracy(&confusion)?.accuracy))
                } else {
                    Ok(Some(eval::accuracy(&preds, &labels)?))
                }
            }
            Validation::Groups(groups) => {
                if task.kind() == TaskKind::Mil {
                    Ok(Some(eval::group_accuracy_mil(model, groups, BagRule::Probability)?))
                } else {
                    Ok(Some(observed_likelihood(groups, task, model)? / groups.len() as f64))
                }
            }
        }
    }
}

/// Result of [`train`]: the selected model and the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// `sum_v log p(z_v | x_v)` with `p(z | x)` floored at [`PROB_EPS`].
pub fn observed_likelihood(observations: &[AggregateObservation], task: &Task, model: &Model) -> Result<f64> {
    let mut total = 0.0;
    for obs in observations {
        let etas = group_etas(model, &obs.xs)?;
        total += posterior::posterior(task, &etas, &obs.z)?.pz.max(PROB_EPS).ln();
    }
    Ok(total)
}

/// Trains with `val_fraction` of the observations held out for selection.
pub fn train(observations: &[AggregateObservation], task: Task, model: Model, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_validation(observations, task, model, config, Validation::FromConfig)
}

/// Runs `config.epochs` epochs and returns the parameters with the best
/// validation metric (the earliest on ties), or the final ones without
/// validation.
pub fn train_with_validation(
    observations: &[AggregateObservation],
    task: Task,
    model: Model,
    config: &TrainConfig,
    validation: Validation,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_set, validation) = match validation {
        Validation::FromConfig if config.val_fraction > 0.0 => {
            let mut idx: Vec<usize> = (0..observations.len()).collect();
            idx.shuffle(&mut rng::seeded(config.seed, streams::SPLIT));
            let n_val = ((observations.len() as f64) * config.val_fraction).round() as usize;
            let (val, tr) = idx.split_at(n_val.min(observations.len().saturating_sub(1)));
            let pick = |ix: &[usize]| ix.iter().map(|&i| observations[i].clone()).collect::<Vec<_>>();
            (std::borrow::Cow::Owned(pick(tr)), Validation::Groups(pick(val)))
        }
        Validation::FromConfig => (std::borrow::Cow::Borrowed(observations), Validation::None),
        v => (std::borrow::Cow::Borrowed(observations), v),
    };
    let mut trainer = Trainer::new(&train_set, task, model, config.clone())?;
    let mut best: Option<(f64, usize, Model)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (train_loss, degenerate) = trainer.run_epoch()?;
        let epoch = trainer.epoch();
        let val_metric = validation.metric(trainer.model(), &task)?;
        let likelihood = observed_likelihood(&train_set, &task, trainer.model())?;
        if let Some(v) = val_metric {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, trainer.model().clone()));
            }
        }
        log.push(EpochRecord { epoch, train_loss, val_metric, likelihood, degenerate });
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => {
            let epoch = trainer.epoch();
            (trainer.into_model(), epoch)
        }
    };
    Ok(TrainOutcome { model, best_epoch, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, sample_groups, SyntheticSpec};
    use crate::model::Head;

    fn setup(kind: TaskKind, m: usize, n_groups: usize) -> (Task, Vec<AggregateObservation>, Dataset) {
        let spec = SyntheticSpec::balanced(vec![vec![-3.0, 0.0], vec![3.0, 0.0], vec![0.0, 4.0]], 1.0, 5);
        let data = generate_synthetic(&spec, 300).unwrap();
        let task = Task::new(kind, m, 3).unwrap();
        let groups = sample_groups(&data, &task, n_groups, 6).unwrap();
        (task, groups, data)
    }

    #[test]
    fn default_flags_per_task() {
        let f = default_flags(TaskKind::Pairwise);
        assert!(f.warmup && f.use_confidence);
        assert_eq!(f.warmup_epochs, SMALL_SCALE_WARMUP);
        let f = default_flags(TaskKind::Mil);
        assert!(!f.warmup && !f.use_confidence);
        let f = default_flags(TaskKind::Llp);
        assert!(!f.warmup && f.use_confidence);
        assert!(default_flags(TaskKind::OrdinalTriplet).warmup);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig { epochs: 5, warmup_epochs: 6, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c.warmup_epochs = 5;
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn uniform_confidence_gives_uniform_pairwise_weights() {
        let (task, groups, _) = setup(TaskKind::Pairwise, 2, 20);
        let config = TrainConfig { use_confidence: true, ..TrainConfig::for_task(TaskKind::Pairwise, 3) };
        let trainer = Trainer::new(&groups, task, Model::linear(2, 3, Head::Softmax, 1), config).unwrap();
        for g in 0..groups.len() {
            let w = trainer.weights(g).unwrap().unwrap();
            for row in w.rows() {
                for &v in row {
                    assert!((v - 1.0 / 3.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn confidence_tracks_model_after_step() {
        let (task, groups, _) = setup(TaskKind::Llp, 3, 30);
        let config = TrainConfig { batch_size: 7, ..TrainConfig::for_task(TaskKind::Llp, 2) };
        let mut trainer = Trainer::new(&groups, task, Model::linear(2, 3, Head::Softmax, 1), config).unwrap();
        let batch = [3, 8, 11];
        trainer.step(&batch, false).unwrap();
        let c = trainer.confidence().unwrap();
        for &g in &batch {
            let fresh = group_etas(trainer.model(), &groups[g].xs).unwrap();
            assert_eq!(c.get(g), &fresh[..]);
        }
        assert!(c.get(0).iter().all(|e| e.iter().all(|&p| p == 1.0 / 3.0)));
    }

    #[test]
    fn full_warmup_equals_loglik_method() {
        let (task, groups, _) = setup(TaskKind::Pairwise, 2, 60);
        let base = TrainConfig { epochs: 4, batch_size: 16, seed: 3, ..TrainConfig::default() };
        let warm = TrainConfig { warmup: true, warmup_epochs: 4, use_confidence: true, ..base.clone() };
        let loglik = TrainConfig { method: Method::LogLikelihood, ..base };
        let model = Model::mlp(2, 8, 3, Head::Softmax, 2);
        let a = train_with_validation(&groups, task, model.clone(), &warm, Validation::None).unwrap();
        let b = train_with_validation(&groups, task, model, &loglik, Validation::None).unwrap();
        assert_eq!(a.log, b.log);
        assert!(a.model.params().iter().zip(b.model.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (task, groups, _) = setup(TaskKind::Triplet, 3, 40);
        let config = TrainConfig { batch_size: 8, val_fraction: 0.2, ..TrainConfig::for_task(TaskKind::Triplet, 3) };
        let run = || train(&groups, task, Model::linear(2, 3, Head::Softmax, 4), &config).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert!(a.log.iter().all(|r| r.val_metric.is_some()));
    }

    #[test]
    fn uniform_model_likelihood() {
        let task = Task::new(TaskKind::Pairwise, 2, 2).unwrap();
        let groups: Vec<_> = (0..10)
            .map(|i| AggregateObservation::new(vec![vec![i as f64], vec![1.0]], (i % 3 == 0).into()))
            .collect();
        let model = Model::zeros(crate::model::Architecture::Linear { d: 1, outputs: 2 }, Head::Softmax);
        let ll = observed_likelihood(&groups, &task, &model).unwrap();
        assert!((ll - 10.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn all_degenerate_aborts() {
        // a saturated model certain that every instance is class 0 makes
        // y1 < y2 impossible
        let task = Task::new(TaskKind::Rank, 2, 2).unwrap();
        let groups = vec![AggregateObservation::new(vec![vec![1.0], vec![1.0]], true.into()); 4];
        let arch = crate::model::Architecture::Linear { d: 1, outputs: 2 };
        let model = Model::from_params(arch, Head::Softmax, vec![100.0, -100.0, 0.0, 0.0]).unwrap();
        let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let err = train_with_validation(&groups, task, model, &config, Validation::None).unwrap_err();
        assert!(matches!(err, Error::AllDegenerate { epoch: 1 }));
    }

    #[test]
    fn likelihood_mostly_increases_full_batch() {
        let (task, groups, _) = setup(TaskKind::Pairwise, 2, 80);
        let config = TrainConfig {
            epochs: 40,
            batch_size: groups.len(),
            warmup: true,
            warmup_epochs: 10,
            use_confidence: false,
            ..TrainConfig::default()
        };
        let out = train_with_validation(&groups, task, Model::linear(2, 3, Head::Softmax, 9), &config, Validation::None)
            .unwrap();
        let ups = out.log.windows(2).filter(|w| w[1].likelihood >= w[0].likelihood).count();
        assert!(ups as f64 >= 0.9 * (out.log.len() - 1) as f64, "{ups} of {}", out.log.len() - 1);
    }
}
