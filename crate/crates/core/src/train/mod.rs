//! Training loop and held-out curves, one independent model per direction.

mod eval;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use eval::{
    dataset_fingerprint, dataset_table, evaluate, run_ablation, AblationReport, AblationRow, Confusion,
    ConstantPredictor, DirectionMetrics, EdgePrediction, EdgePredictor, EvalOptions, EvalReport, GraphMode,
    ModelPair, OraclePredictor, TableEval,
};

use crate::cellgraph::labeled_knn_graph;
use crate::error::{Error, Result};
use crate::features::{build_vocab, Vocabulary, DEFAULT_MAX_LEN};
use crate::model::{Direction, EdgeInputMode, Model, ModelConfig, ModelDims, PreparedTable, Variant};
use crate::nn::{Adam, AdamConfig};
use crate::rng::Stream;
use crate::table::TableInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Neighbours per node in the candidate graph.
    pub k: usize,
    pub seed: u64,
    /// Epochs without held-out improvement before stopping; 0 disables.
    pub patience: usize,
    /// Inverse-frequency class weights in the loss.
    pub class_weights: bool,
    /// Fraction of tables held out, split by table.
    pub holdout_fraction: f64,
    pub max_len: usize,
    pub dims: ModelDims,
    pub edge_input_mode: EdgeInputMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Pos,
            epochs: 30,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            k: crate::cellgraph::DEFAULT_K,
            seed: 1,
            patience: 0,
            class_weights: false,
            holdout_fraction: 0.1,
            max_len: DEFAULT_MAX_LEN,
            dims: ModelDims::default(),
            edge_input_mode: EdgeInputMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.k == 0 || self.max_len == 0 {
            return bad("k and max_len must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self)
    }

    /// Model config for one direction, with this config's `k` and edge mode.
    pub fn model_config(&self, direction: Direction, vocab: Option<&Vocabulary>) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(self.variant, direction, self.dims, vocab, self.seed)?;
        m.k = self.k;
        m.edge_input_mode = self.edge_input_mode;
        m.validate()?;
        Ok(m)
    }
}

/// Table indices for training and held-out evaluation. The held-out share
/// is rounded and always leaves at least one training table.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    Stream::new(seed, "split").shuffle(&mut idx);
    let held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut heldout = idx[..held].to_vec();
    let mut train = idx[held..].to_vec();
    heldout.sort_unstable();
    train.sort_unstable();
    (train, heldout)
}

/// Maps `f` over `items` on at most `jobs` threads (0 = all cores),
/// keeping input order.
pub fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Features and labeled KNN edges for every table.
pub fn prepare_tables(
    tables: &[TableInstance],
    k: usize,
    vocab: Option<&Vocabulary>,
    with_image: bool,
    jobs: usize,
) -> Result<Vec<PreparedTable>> {
    par_map(jobs, tables, |t| {
        let g = labeled_knn_graph(t, k)?;
        PreparedTable::new(t, &g, vocab, with_image)
    })
}

/// `[w_negative, w_positive]` with `w_c = total / (2 * count_c)`.
pub fn inverse_frequency_weights(preps: &[PreparedTable], d: Direction) -> [f64; 2] {
    let (mut pos, mut total) = (0usize, 0usize);
    for p in preps {
        pos += p.labels(d).iter().filter(|l| **l).count();
        total += p.n_edges();
    }
    let neg = total - pos;
    let w = |c: usize| if c == 0 { 1.0 } else { total as f64 / (2.0 * c as f64) };
    [w(neg), w(pos)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub direction: Direction,
    pub epoch: usize,
    /// Mean loss over the epoch's steps.
    pub train_loss: f64,
    /// Edge accuracy of the predictions made during the epoch's steps.
    pub train_accuracy: f64,
    pub heldout_loss: Option<f64>,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model_h: Model,
    pub model_v: Model,
    pub curves: Vec<EpochRecord>,
    pub train_ids: Vec<String>,
    pub heldout_ids: Vec<String>,
    /// Fingerprint of the training config and dataset.
    pub fingerprint: String,
}

impl TrainResult {
    /// Loss and accuracy per direction and epoch.
    pub fn curves_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::parse("loss curve csv", e);
        w.write_record([
            "fingerprint",
            "direction",
            "epoch",
            "train_loss",
            "train_accuracy",
            "heldout_loss",
            "heldout_accuracy",
        ])
        .map_err(err)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.curves {
            w.write_record([
                self.fingerprint.clone(),
                r.direction.short().to_string(),
                r.epoch.to_string(),
                format!("{:.6}", r.train_loss),
                format!("{:.6}", r.train_accuracy),
                opt(r.heldout_loss),
                opt(r.heldout_accuracy),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::parse("loss curve csv", e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::parse("loss curve csv", e))
    }

    pub fn final_heldout_accuracy(&self, d: Direction) -> Option<f64> {
        self.curves.iter().rev().find(|r| r.direction == d)?.heldout_accuracy
    }
}

/// Trains the horizontal and vertical models on a seeded split of `tables`.
/// One table is one optimizer step; tables are reshuffled every epoch.
pub fn train(cfg: &TrainConfig, tables: &[TableInstance], jobs: usize) -> Result<TrainResult> {
    cfg.validate()?;
    if tables.is_empty() {
        return Err(Error::Usage("training needs at least one table".into()));
    }
    let (train_idx, held_idx) = split_indices(tables.len(), cfg.holdout_fraction, cfg.seed);
    let train_tables: Vec<TableInstance> = train_idx.iter().map(|&i| tables[i].clone()).collect();
    let held_tables: Vec<TableInstance> = held_idx.iter().map(|&i| tables[i].clone()).collect();
    let vocab = if cfg.variant.uses_text() {
        Some(build_vocab(&train_tables, cfg.max_len)?)
    } else {
        None
    };
    let with_image = cfg.variant.uses_image();
    let train_preps = prepare_tables(&train_tables, cfg.k, vocab.as_ref(), with_image, jobs)?;
    let held_preps = prepare_tables(&held_tables, cfg.k, vocab.as_ref(), with_image, jobs)?;

    let mut curves = Vec::new();
    let mut models = Vec::new();
    for d in Direction::BOTH {
        let (m, c) = train_direction(cfg, d, vocab.clone(), &train_preps, &held_preps, jobs)?;
        models.push(m);
        curves.extend(c);
    }
    let model_v = models.pop().expect("two directions");
    let model_h = models.pop().expect("two directions");
    Ok(TrainResult {
        model_h,
        model_v,
        curves,
        train_ids: train_tables.iter().map(|t| t.source_id.clone()).collect(),
        heldout_ids: held_tables.iter().map(|t| t.source_id.clone()).collect(),
        fingerprint: crate::fingerprint(&(cfg.fingerprint(), dataset_fingerprint(tables))),
    })
}

fn accuracy(probs: &[f64], labels: &[bool]) -> usize {
    probs.iter().zip(labels).filter(|(p, l)| (**p >= 0.5) == **l).count()
}

fn train_direction(
    cfg: &TrainConfig,
    d: Direction,
    vocab: Option<Vocabulary>,
    train: &[PreparedTable],
    held: &[PreparedTable],
    jobs: usize,
) -> Result<(Model, Vec<EpochRecord>)> {
    let mut model = Model::init(cfg.model_config(d, vocab.as_ref())?, vocab)?;
    let mut adam = Adam::new(cfg.adam(), &model.params);
    let class_w = cfg.class_weights.then(|| inverse_frequency_weights(train, d));
    let weights_of = |p: &PreparedTable| -> Option<Vec<f64>> {
        class_w.map(|w| p.labels(d).iter().map(|l| w[usize::from(*l)]).collect())
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curves = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 1..=cfg.epochs {
        Stream::derive(cfg.seed, &format!("shuffle-{}", d.short()), epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut steps, mut correct, mut edges) = (0.0, 0usize, 0usize, 0usize);
        for &i in &order {
            let p = &train[i];
            if p.edges.is_empty() {
                continue;
            }
            let w = weights_of(p);
            let (loss, grads, probs) = model.loss_and_grads(p, w.as_deref()).map_err(|e| {
                Error::Numeric(format!("{d:?} training, epoch {epoch}, table {}: {e}", p.source_id))
            })?;
            adam.step(&mut model.params, &grads).map_err(|e| {
                Error::Numeric(format!("{d:?} training, epoch {epoch}, table {}: {e}", p.source_id))
            })?;
            loss_sum += loss;
            steps += 1;
            correct += accuracy(&probs, &p.labels(d));
            edges += probs.len();
        }
        if steps == 0 {
            return Err(Error::Graph("no training table has a candidate edge".into()));
        }
        let (heldout_loss, heldout_accuracy) = if held.iter().any(|p| !p.edges.is_empty()) {
            let (l, a) = heldout_metrics(&model, d, held, jobs)?;
            (Some(l), Some(a))
        } else {
            (None, None)
        };
        curves.push(EpochRecord {
            direction: d,
            epoch,
            train_loss: loss_sum / steps as f64,
            train_accuracy: correct as f64 / edges.max(1) as f64,
            heldout_loss,
            heldout_accuracy,
        });
        if cfg.patience > 0 {
            if let Some(acc) = heldout_accuracy {
                match &best {
                    Some((b, _, _)) if acc <= *b => {}
                    _ => best = Some((acc, epoch, model.clone())),
                }
                let since = epoch - best.as_ref().map_or(epoch, |b| b.1);
                if since >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, _, m)) = best {
        model = m;
    }
    Ok((model, curves))
}

/// Mean loss over tables and pooled edge accuracy.
fn heldout_metrics(model: &Model, d: Direction, held: &[PreparedTable], jobs: usize) -> Result<(f64, f64)> {
    let per = par_map(jobs, held, |p| {
        if p.edges.is_empty() {
            return Ok(None);
        }
        let (loss, probs) = model.loss_and_probabilities(p, None)?;
        Ok(Some((loss, accuracy(&probs, &p.labels(d)), probs.len())))
    })?;
    let per: Vec<_> = per.into_iter().flatten().collect();
    let loss = per.iter().map(|x| x.0).sum::<f64>() / per.len() as f64;
    let correct: usize = per.iter().map(|x| x.1).sum();
    let total: usize = per.iter().map(|x| x.2).sum();
    Ok((loss, correct as f64 / total as f64))
}

#[cfg(test)]
mod tests;
