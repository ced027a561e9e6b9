//! Full-batch training with early stopping on filtered MRR.

use thiserror::Error;

use crate::eval::{evaluate, FilterIndex};
use crate::graph::{sample_negatives, AugmentedGraph, DatasetSplit, FeatureSource, GraphError, NegativeSampling, Triple};
use crate::model::{model_forward, training_loss, Mode, ModelConfig, ModelError, ModelParams, TrainedModel};
use crate::numeric::{AdamConfig, AdamState, NumericError};
use crate::rng::{phase_rng, Phase};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {cause}")]
    Diverged { epoch: usize, cause: String },
}

/// Which triples the early-stopping MRR is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Monitor {
    #[default]
    Valid,
    Train,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub neg_ratio: usize,
    pub negative_sampling: NegativeSampling,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_interval: usize,
    pub monitor: Monitor,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            neg_ratio: 10,
            negative_sampling: NegativeSampling::Unfiltered,
            max_epochs: 6000,
            patience: 10,
            eval_interval: 100,
            monitor: Monitor::Valid,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", a.lr)));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(TrainError::Config("adam betas must be in [0, 1) and eps positive".into()));
        }
        for (name, v) in [
            ("neg_ratio", self.neg_ratio),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("eval_interval", self.eval_interval),
        ] {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_mrr: Option<f64>,
}

/// `epoch,loss,val_mrr` lines; `val_mrr` is empty on epochs without
/// evaluation.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,val_mrr\n");
    for r in history {
        let mrr = r.val_mrr.map(|m| m.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, mrr));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over successive evaluations. Only a strictly higher
/// MRR counts as an improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, mrr: f64) -> Verdict {
        match self.best {
            Some((_, best)) if mrr <= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                }
            }
            _ => {
                self.best = Some((epoch, mrr));
                self.stale = 0;
                Verdict::Improved
            }
        }
    }

    /// `(epoch, mrr)` of the best evaluation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best evaluation.
    pub model: TrainedModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_mrr: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

fn diverged(epoch: usize, e: ModelError) -> TrainError {
    match e {
        ModelError::Numeric(NumericError::NonFinite { op }) => TrainError::Diverged {
            epoch,
            cause: format!("non-finite value in `{op}`"),
        },
        other => other.into(),
    }
}

/// Filtered MRR of `triples` under the current parameters.
fn monitor_mrr(
    graph: &AugmentedGraph,
    features: &FeatureSource,
    params: &ModelParams,
    cfg: &ModelConfig,
    triples: &[Triple],
    filter: &FilterIndex,
) -> Result<f64, ModelError> {
    let emb = model_forward(graph, features, params, cfg, Mode::Eval)?.embeddings;
    Ok(evaluate(triples, &emb, params.distmult_diag(), Some(filter)).mrr)
}

/// Full-batch training: each epoch resamples negatives for every training
/// triple and takes one Adam step. Every `eval_interval` epochs (and at
/// the last epoch) the monitored MRR is computed; the best parameters are
/// returned.
pub fn train(split: &DatasetSplit, features: &FeatureSource, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let n = split.graph.num_entities();
    if features.num_entities() != n {
        return Err(TrainError::Config(format!(
            "{} feature rows for {n} entities",
            features.num_entities()
        )));
    }
    let monitored: &[Triple] = match cfg.monitor {
        Monitor::Valid if split.valid.is_empty() => {
            return Err(TrainError::Config("monitoring validation MRR needs a validation split".into()))
        }
        Monitor::Valid => &split.valid,
        Monitor::Train => &split.train,
    };

    let k = split.graph.num_relations();
    let graph = AugmentedGraph::build(n, k, &split.train, cfg.model.augment);
    let filter = FilterIndex::new(split.all_triples());
    let table = features.is_trainable().then(|| features.values());
    let mut params = ModelParams::init(
        &cfg.model,
        features.dim(),
        graph.num_relations(),
        table,
        &mut phase_rng(cfg.seed, Phase::Init),
    )?;
    let mut adam = AdamState::new(cfg.adam);
    let mut neg_rng = phase_rng(cfg.seed, Phase::Negatives);
    let mut dropout_rng = phase_rng(cfg.seed, Phase::Dropout);
    let neg_filter = match cfg.negative_sampling {
        NegativeSampling::Unfiltered => None,
        NegativeSampling::Filtered => Some(filter.as_set()),
    };

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        let batch = sample_negatives(&split.train, cfg.neg_ratio, n, &mut neg_rng, neg_filter)?;
        let (loss, grads) = training_loss(&graph, features, &params, &cfg.model, &batch, Mode::Train(&mut dropout_rng))
            .map_err(|e| diverged(epoch, e))?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                cause: "loss is not finite".into(),
            });
        }
        adam.step(params.store_mut(), &grads)
            .map_err(|e| diverged(epoch, e.into()))?;
        epochs_run = epoch;

        let mut record = EpochRecord {
            epoch,
            loss,
            val_mrr: None,
        };
        if epoch % cfg.eval_interval == 0 || epoch == cfg.max_epochs {
            let mrr = monitor_mrr(&graph, features, &params, &cfg.model, monitored, &filter)?;
            record.val_mrr = Some(mrr);
            history.push(record);
            match stopper.observe(epoch, mrr) {
                Verdict::Improved => best_params = params.clone(),
                Verdict::Continue => {}
                Verdict::Stop => {
                    stopped_early = true;
                    break;
                }
            }
        } else {
            history.push(record);
        }
    }

    let (best_epoch, best_mrr) = stopper.best().expect("at least one evaluation ran");
    let model = TrainedModel {
        config: cfg.model.clone(),
        params: best_params,
        feature_dim: features.dim(),
        feature_mode: features.mode(),
        entities: split.graph.entities.clone(),
        relations: split.graph.relations.clone(),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_mrr,
        epochs_run,
        stopped_early,
    })
}
