//! Per-direction edge accuracy and the variant ablation.

use serde::{Deserialize, Serialize};

use super::{par_map, split_indices, train, TrainConfig};
use crate::cellgraph::{complete_graph, knn_graph, relative_positions, CellGraph};
use crate::error::{Error, Result};
use crate::model::{predict_relations, Direction, Model, Variant};
use crate::table::{ground_truth_relation, CellId, TableInstance};

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `(TP + TN) / total`; 1 on an empty set.
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// 1 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 1 when nothing is positive.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub confusion: Confusion,
    pub edges: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Unweighted mean of per-table accuracies.
    pub macro_accuracy: f64,
}

impl DirectionMetrics {
    fn new(confusion: Confusion, macro_accuracy: f64) -> Self {
        Self {
            confusion,
            edges: confusion.total(),
            accuracy: confusion.accuracy(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            macro_accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePrediction {
    pub src: CellId,
    pub dst: CellId,
    pub truth_h: bool,
    pub truth_v: bool,
    pub pred_h: bool,
    pub pred_v: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEval {
    pub source_id: String,
    pub horizontal: Confusion,
    pub vertical: Confusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<EdgePrediction>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// KNN candidate edges, as in training.
    #[default]
    Knn,
    /// Every cell pair.
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub graph: GraphMode,
    /// Neighbours per node for [`GraphMode::Knn`].
    pub k: usize,
    /// Keep every edge's prediction in the report.
    pub keep_edges: bool,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            graph: GraphMode::Knn,
            k: crate::cellgraph::DEFAULT_K,
            keep_edges: false,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    /// Fingerprint of the predictor (model configs) that produced the numbers.
    pub predictor_fingerprint: String,
    pub dataset_fingerprint: String,
    pub graph: GraphMode,
    pub k: usize,
    pub tables: usize,
    pub horizontal: DirectionMetrics,
    pub vertical: DirectionMetrics,
    /// Sorted by source id.
    pub per_table: Vec<TableEval>,
}

impl EvalReport {
    pub fn metrics(&self, d: Direction) -> &DirectionMetrics {
        match d {
            Direction::Horizontal => &self.horizontal,
            Direction::Vertical => &self.vertical,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("eval report", e))
    }

    /// Aligned text summary.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "predictor {} ({})\ndataset {} ({} tables, {:?} graph, k {})\n",
            self.predictor, self.predictor_fingerprint, self.dataset_fingerprint, self.tables, self.graph, self.k
        );
        s += &format!(
            "{:<11} {:>8} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "direction", "edges", "accuracy", "precision", "recall", "macro", "tp", "tn", "fp", "fn"
        );
        for (name, m) in [("horizontal", &self.horizontal), ("vertical", &self.vertical)] {
            let c = &m.confusion;
            s += &format!(
                "{:<11} {:>8} {:>9.6} {:>9.6} {:>8.6} {:>8.6} {:>8} {:>8} {:>8} {:>8}\n",
                name, m.edges, m.accuracy, m.precision, m.recall, m.macro_accuracy, c.tp, c.tn, c.fp, c.fn_
            );
        }
        s
    }
}

/// Anything that labels candidate edges of a table.
pub trait EdgePredictor: Sync {
    fn name(&self) -> String;
    fn fingerprint(&self) -> String;
    /// `(same_row, same_col)` for every edge of `g`, in edge order.
    fn predict(&self, t: &TableInstance, g: &CellGraph) -> Result<Vec<(bool, bool)>>;
}

/// A horizontal and a vertical model used together.
pub struct ModelPair<'a> {
    pub h: &'a Model,
    pub v: &'a Model,
    pub threshold: f64,
}

impl<'a> ModelPair<'a> {
    /// Checks directions, variant and vocabulary agreement.
    pub fn new(h: &'a Model, v: &'a Model) -> Result<Self> {
        if h.config.direction != Direction::Horizontal || v.config.direction != Direction::Vertical {
            return Err(Error::ConfigMismatch(
                "expected a horizontal and a vertical model, in that order".into(),
            ));
        }
        if h.config.variant != v.config.variant {
            return Err(Error::ConfigMismatch(format!(
                "variants differ: {} and {}",
                h.config.variant.label(),
                v.config.variant.label()
            )));
        }
        if h.config.vocab_fingerprint != v.config.vocab_fingerprint {
            return Err(Error::ConfigMismatch("the two models use different vocabularies".into()));
        }
        Ok(Self { h, v, threshold: 0.5 })
    }
}

impl EdgePredictor for ModelPair<'_> {
    fn name(&self) -> String {
        self.h.config.variant.label().to_string()
    }

    fn fingerprint(&self) -> String {
        crate::fingerprint(&(self.h.config.fingerprint(), self.v.config.fingerprint()))
    }

    fn predict(&self, t: &TableInstance, g: &CellGraph) -> Result<Vec<(bool, bool)>> {
        Ok(predict_relations(self.h, self.v, t, g, self.threshold)?
            .into_iter()
            .map(|e| (e.label_h, e.label_v))
            .collect())
    }
}

/// Returns the ground-truth relation of every edge.
pub struct OraclePredictor;

impl EdgePredictor for OraclePredictor {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn fingerprint(&self) -> String {
        crate::fingerprint("oracle")
    }

    fn predict(&self, t: &TableInstance, g: &CellGraph) -> Result<Vec<(bool, bool)>> {
        g.edges
            .iter()
            .map(|e| match (t.cell(e.src), t.cell(e.dst)) {
                (Some(a), Some(b)) => ground_truth_relation(a, b),
                _ => Err(Error::Graph(format!("edge ({}, {}) is not in table {}", e.src, e.dst, t.source_id))),
            })
            .collect()
    }
}

/// Predicts the same labels for every edge.
pub struct ConstantPredictor {
    pub same_row: bool,
    pub same_col: bool,
}

impl EdgePredictor for ConstantPredictor {
    fn name(&self) -> String {
        format!("constant({}, {})", self.same_row, self.same_col)
    }

    fn fingerprint(&self) -> String {
        crate::fingerprint(&(self.same_row, self.same_col))
    }

    fn predict(&self, _: &TableInstance, g: &CellGraph) -> Result<Vec<(bool, bool)>> {
        Ok(vec![(self.same_row, self.same_col); g.edges.len()])
    }
}

/// Order-independent fingerprint of a set of tables.
pub fn dataset_fingerprint(tables: &[TableInstance]) -> String {
    let mut keyed: Vec<(&str, u32, u32, &[crate::table::Cell])> = tables
        .iter()
        .map(|t| (t.source_id.as_str(), t.n_rows, t.n_cols, t.cells.as_slice()))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(b.0));
    crate::fingerprint(&keyed)
}

/// Edge accuracy of `predictor` over the candidate edges of every table,
/// pooled over all edges (micro) and averaged per table (macro).
pub fn evaluate(predictor: &dyn EdgePredictor, tables: &[TableInstance], opts: EvalOptions) -> Result<EvalReport> {
    if tables.is_empty() {
        return Err(Error::Usage("evaluation needs at least one table".into()));
    }
    let mut per_table = par_map(opts.jobs, tables, |t| {
        let g = match opts.graph {
            GraphMode::Knn => knn_graph(&relative_positions(t), opts.k)?,
            GraphMode::Complete => complete_graph(t)?,
        };
        let truth = OraclePredictor.predict(t, &g)?;
        let pred = predictor.predict(t, &g)?;
        if pred.len() != truth.len() {
            return Err(Error::Graph(format!(
                "predictor returned {} labels for {} edges",
                pred.len(),
                truth.len()
            )));
        }
        let mut h = Confusion::default();
        let mut v = Confusion::default();
        for (p, tr) in pred.iter().zip(&truth) {
            h.add(p.0, tr.0);
            v.add(p.1, tr.1);
        }
        let predictions = opts.keep_edges.then(|| {
            g.edges
                .iter()
                .zip(pred.iter().zip(&truth))
                .map(|(e, (p, tr))| EdgePrediction {
                    src: e.src,
                    dst: e.dst,
                    truth_h: tr.0,
                    truth_v: tr.1,
                    pred_h: p.0,
                    pred_v: p.1,
                })
                .collect()
        });
        Ok(TableEval {
            source_id: t.source_id.clone(),
            horizontal: h,
            vertical: v,
            predictions,
        })
    })?;
    per_table.sort_by(|a, b| a.source_id.cmp(&b.source_id));

    let summarize = |pick: fn(&TableEval) -> &Confusion| {
        let mut c = Confusion::default();
        for t in &per_table {
            c.merge(pick(t));
        }
        let macro_acc = per_table.iter().map(|t| pick(t).accuracy()).sum::<f64>() / per_table.len() as f64;
        DirectionMetrics::new(c, macro_acc)
    };
    let horizontal = summarize(|t| &t.horizontal);
    let vertical = summarize(|t| &t.vertical);
    Ok(EvalReport {
        predictor: predictor.name(),
        predictor_fingerprint: predictor.fingerprint(),
        dataset_fingerprint: dataset_fingerprint(tables),
        graph: opts.graph,
        k: opts.k,
        tables: tables.len(),
        horizontal,
        vertical,
        per_table,
    })
}

/// Accuracy rows in the layout of a per-dataset results table.
pub fn dataset_table(rows: &[(String, f64, f64)]) -> String {
    results_table("Dataset", rows)
}

fn results_table(first: &str, rows: &[(String, f64, f64)]) -> String {
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(first.len());
    let mut s = format!("{first:<w$} | Horizontal prediction | Vertical prediction\n");
    s += &format!("{}-+-----------------------+--------------------\n", "-".repeat(w));
    for (name, h, v) in rows {
        s += &format!("{name:<w$} | {h:>21.6} | {v:>19.6}\n");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub horizontal: f64,
    pub vertical: f64,
    pub train_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_fingerprint: String,
    pub dataset_fingerprint: String,
    /// Tables the accuracies were measured on.
    pub eval_tables: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// One row per variant under the network / horizontal / vertical header.
    pub fn to_text(&self) -> String {
        let rows: Vec<(String, f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.variant.label().to_string(), r.horizontal, r.vertical))
            .collect();
        format!(
            "{}config {}  dataset {}  evaluated on {} held-out tables\n",
            results_table("Network", &rows),
            self.config_fingerprint,
            self.dataset_fingerprint,
            self.eval_tables
        )
    }
}

/// Trains every variant with the same seed and split and reports held-out
/// accuracy per direction. With no held-out tables the training tables are
/// scored instead.
pub fn run_ablation(cfg: &TrainConfig, tables: &[TableInstance], jobs: usize) -> Result<AblationReport> {
    let (train_idx, held_idx) = split_indices(tables.len(), cfg.holdout_fraction, cfg.seed);
    let scored: Vec<TableInstance> = if held_idx.is_empty() { &train_idx } else { &held_idx }
        .iter()
        .map(|&i| tables[i].clone())
        .collect();
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let vcfg = TrainConfig {
            variant,
            ..cfg.clone()
        };
        let result = train(&vcfg, tables, jobs)?;
        let pair = ModelPair::new(&result.model_h, &result.model_v)?;
        let opts = EvalOptions {
            k: cfg.k,
            jobs,
            ..EvalOptions::default()
        };
        let report = evaluate(&pair, &scored, opts)?;
        rows.push(AblationRow {
            variant,
            horizontal: report.horizontal.accuracy,
            vertical: report.vertical.accuracy,
            train_fingerprint: result.fingerprint,
        });
    }
    Ok(AblationReport {
        config_fingerprint: cfg.fingerprint(),
        dataset_fingerprint: dataset_fingerprint(tables),
        eval_tables: scored.len(),
        rows,
    })
}
