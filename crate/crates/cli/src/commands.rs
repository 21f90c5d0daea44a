//! One function per subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};

use gfte_core::cellgraph::{knn_graph, relative_positions};
use gfte_core::ingest::scitsr::{is_scitsr_dir, load_scitsr_dir};
use gfte_core::ingest::{self, generate_tables, read_record, DatasetStats};
use gfte_core::model::check::gradcheck_suite;
use gfte_core::model::{load_checkpoint, predict_relations, save_checkpoint, Direction, Model};
use gfte_core::recover::{compare_structures, texts_of, RecoveredStructure, RelationSet};
use gfte_core::table::{CellId, TableInstance};
use gfte_core::train::{
    dataset_table, evaluate, run_ablation, train, EdgePredictor, EvalOptions, EvalReport, ModelPair,
    OraclePredictor, TrainConfig,
};
use gfte_core::{fingerprint, Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Cli, Command, EvalArgs, Format, GenArgs, GradcheckArgs, PredictArgs, RecoverArgs, TrainArgs, TrainOverrides};

pub const H_CHECKPOINT: &str = "horizontal.ckpt";
pub const V_CHECKPOINT: &str = "vertical.ckpt";

pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?.with_globals(cli.seed, cli.jobs);
    match cli.command {
        Command::Config => emit(out, &RunConfig::template()),
        Command::Gen(a) => cmd_gen(&cfg, &a, out),
        Command::Train(a) => cmd_train(&cfg, &a, out),
        Command::Eval(a) => cmd_eval(&cfg, &a, out),
        Command::Predict(a) => cmd_predict(&cfg, &a, out),
        Command::Recover(a) => cmd_recover(&cfg, &a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&cfg, &a, out),
    }
}

fn io_err(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| io_err("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T, what: &str) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Parse {
            context: what.into(),
            message: e.to_string(),
        })
}

/// Writes `text` to `path`, or to `out` when no path is given.
fn deliver(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => emit(out, text),
    }
}

fn cmd_gen(cfg: &RunConfig, a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = cfg.gen.clone();
    if let Some(n) = a.n_tables {
        spec.n_tables = n;
    }
    if let Some(p) = a.merge_probability {
        spec.merge_probability = p;
    }
    if let Some(p) = a.dropped_line_probability {
        spec.dropped_line_probability = p;
    }
    spec.validate()?;
    let tables = generate_tables(&spec)?;
    let m = ingest::write_dataset(&a.out, &tables, Some(fingerprint(&spec)))?;
    write_file(&a.out.join("gen_config.json"), &to_json(&spec, "generation spec")?)?;
    emit(out, &stats_text(&m.stats, m.fingerprint.as_deref().unwrap_or("-")))
}

fn stats_text(s: &DatasetStats, fp: &str) -> String {
    let frac = if s.tables == 0 {
        0.0
    } else {
        s.merged_tables as f64 / s.tables as f64
    };
    format!(
        "fingerprint    {fp}\ntables         {}\ncells          {}\nmerged cells   {}\nmerged tables  {} ({frac:.4})\n",
        s.tables, s.cells, s.merged_cells, s.merged_tables
    )
}

/// Tables of a generated dataset or a SciTSR split, plus one line per skipped entry.
fn load_tables(dir: &Path) -> Result<(Vec<TableInstance>, Vec<Skipped>)> {
    let (tables, skipped): (Vec<TableInstance>, Vec<Skipped>) = if is_scitsr_dir(dir) {
        let (ok, bad) = load_scitsr_dir(dir)?;
        let skipped = bad
            .into_iter()
            .map(|(id, e)| Skipped {
                id,
                reason: e.to_string(),
            })
            .collect();
        (ok.into_iter().map(|t| t.table).collect(), skipped)
    } else {
        let (ok, rejected) = ingest::load_dataset(dir)?;
        let skipped = rejected
            .into_iter()
            .map(|r| Skipped {
                id: r.entry.table,
                reason: serde_json::to_string(&r.reasons).unwrap_or_default(),
            })
            .collect();
        (ok, skipped)
    };
    for s in &skipped {
        eprintln!("skipped {}: {}", s.id, s.reason);
    }
    if tables.is_empty() {
        return Err(Error::Consistency(format!("no usable tables in {}", dir.display())));
    }
    Ok((tables, skipped))
}

#[derive(Debug, Serialize)]
struct Skipped {
    id: String,
    reason: String,
}

fn apply_overrides(mut t: TrainConfig, o: &TrainOverrides) -> TrainConfig {
    if let Some(e) = o.epochs {
        t.epochs = e;
    }
    if let Some(lr) = o.lr {
        t.lr = lr;
    }
    if let Some(p) = o.patience {
        t.patience = p;
    }
    if let Some(f) = o.holdout_fraction {
        t.holdout_fraction = f;
    }
    t
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    fingerprint: &'a str,
    config: &'a TrainConfig,
    dataset_fingerprint: String,
    train_ids: &'a [String],
    heldout_ids: &'a [String],
    heldout_accuracy_h: Option<f64>,
    heldout_accuracy_v: Option<f64>,
    checkpoints: [&'a str; 2],
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut tc = apply_overrides(cfg.train.clone(), &a.overrides);
    if let Some(v) = a.variant {
        tc.variant = v.into();
    }
    tc.validate()?;
    let (tables, _) = load_tables(&a.data)?;
    let r = train(&tc, &tables, cfg.jobs())?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    save_checkpoint(&r.model_h, &a.out.join(H_CHECKPOINT))?;
    save_checkpoint(&r.model_v, &a.out.join(V_CHECKPOINT))?;
    write_file(&a.out.join("curves.csv"), &r.curves_csv()?)?;
    let summary = TrainSummary {
        fingerprint: &r.fingerprint,
        config: &tc,
        dataset_fingerprint: gfte_core::train::dataset_fingerprint(&tables),
        train_ids: &r.train_ids,
        heldout_ids: &r.heldout_ids,
        heldout_accuracy_h: r.final_heldout_accuracy(Direction::Horizontal),
        heldout_accuracy_v: r.final_heldout_accuracy(Direction::Vertical),
        checkpoints: [H_CHECKPOINT, V_CHECKPOINT],
    };
    write_file(&a.out.join("train.json"), &to_json(&summary, "training summary")?)?;
    let acc = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
    emit(
        out,
        &format!(
            "fingerprint        {}\nvariant            {}\ntables             {} train, {} held out\nheld-out accuracy  horizontal {}  vertical {}\n",
            r.fingerprint,
            tc.variant.label(),
            r.train_ids.len(),
            r.heldout_ids.len(),
            acc(summary.heldout_accuracy_h),
            acc(summary.heldout_accuracy_v)
        ),
    )
}

fn load_pair(dir: &Path) -> Result<(Model, Model)> {
    Ok((load_checkpoint(&dir.join(H_CHECKPOINT))?, load_checkpoint(&dir.join(V_CHECKPOINT))?))
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    config_fingerprint: String,
    dataset: &'a str,
    skipped: &'a [Skipped],
    report: &'a EvalReport,
}

fn dataset_name(a: &EvalArgs) -> String {
    a.name.clone().unwrap_or_else(|| {
        a.data
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    })
}

fn cmd_eval(cfg: &RunConfig, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (tables, skipped) = load_tables(&a.data)?;
    if a.ablation {
        let tc = apply_overrides(cfg.train.clone(), &a.overrides);
        let report = run_ablation(&tc, &tables, cfg.jobs())?;
        if let Some(p) = &a.out {
            write_file(p, &to_json(&report, "ablation report")?)?;
        }
        return emit(out, &report.to_text());
    }
    let mut ec = cfg.eval.clone();
    if let Some(g) = a.graph {
        ec.graph = g.into();
    }
    if a.k.is_some() {
        ec.k = a.k;
    }
    ec.keep_edges |= a.keep_edges;
    let models = a.checkpoints.as_deref().map(load_pair).transpose()?;
    let pair = match &models {
        Some((h, v)) => {
            let mut p = ModelPair::new(h, v)?;
            p.threshold = ec.threshold;
            Some(p)
        }
        None => None,
    };
    let predictor: &dyn EdgePredictor = match &pair {
        Some(p) => p,
        None => &OraclePredictor,
    };
    let k = ec
        .k
        .or(models.as_ref().map(|(h, _)| h.config.k))
        .unwrap_or(cfg.train.k);
    let opts = EvalOptions {
        graph: ec.graph,
        k,
        keep_edges: ec.keep_edges,
        jobs: cfg.jobs(),
    };
    let report = evaluate(predictor, &tables, opts)?;
    let name = dataset_name(a);
    let result = EvalOutput {
        config_fingerprint: fingerprint(&(&ec, k, predictor.fingerprint())),
        dataset: &name,
        skipped: &skipped,
        report: &report,
    };
    if let Some(p) = &a.out {
        write_file(p, &to_json(&result, "eval report")?)?;
    }
    let row = [(name.clone(), report.horizontal.accuracy, report.vertical.accuracy)];
    emit(
        out,
        &format!(
            "{}\n{}config {}\n",
            dataset_table(&row),
            report.to_text(),
            result.config_fingerprint
        ),
    )
}

fn load_input_table(table: &Path, image: &Path) -> Result<TableInstance> {
    ingest::load_table(table, image)
}

fn predicted_relations(cfg: &RunConfig, ckpt: &Path, t: &TableInstance, threshold: Option<f64>) -> Result<RelationSet> {
    let (h, v) = load_pair(ckpt)?;
    let pair = ModelPair::new(&h, &v)?;
    let k = cfg.eval.k.unwrap_or(h.config.k);
    let threshold = threshold.unwrap_or(cfg.eval.threshold);
    let nodes = relative_positions(t);
    let g = knn_graph(&nodes, k)?;
    let edges = predict_relations(&h, &v, t, &g, threshold)?;
    let fp = fingerprint(&(pair.fingerprint(), k, threshold));
    Ok(RelationSet::new(t.source_id.clone(), Some(fp), nodes, edges))
}

fn cmd_predict(cfg: &RunConfig, a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let t = load_input_table(&a.table, &a.image)?;
    let rel = predicted_relations(cfg, &a.checkpoints, &t, a.threshold)?;
    deliver(out, a.out.as_deref(), &to_json(&rel, "relations")?)
}

#[derive(Debug, Serialize)]
struct RecoverOutput<'a> {
    source_id: &'a str,
    fingerprint: Option<&'a str>,
    #[serde(flatten)]
    structure: &'a RecoveredStructure,
}

fn cmd_recover(cfg: &RunConfig, a: &RecoverArgs, out: &mut dyn Write) -> Result<()> {
    let (rel, truth) = match (&a.relations, &a.checkpoints) {
        (Some(path), _) => {
            let truth = a
                .table
                .as_deref()
                .map(|p| Ok::<_, Error>(read_record(p)?.into_table(gfte_core::raster::Grayscale2D::filled(1, 1, 1.0))))
                .transpose()?;
            (RelationSet::read(path)?, truth)
        }
        (None, Some(ckpt)) => {
            let (table, image) = a.table.as_deref().zip(a.image.as_deref()).ok_or_else(|| {
                Error::Usage("--checkpoints needs --table and --image".into())
            })?;
            let t = load_input_table(table, image)?;
            (predicted_relations(cfg, ckpt, &t, a.threshold)?, Some(t))
        }
        (None, None) => return Err(Error::Usage("pass --relations or --checkpoints".into())),
    };
    let s = rel.recover()?;
    if let Some(t) = &truth {
        if t.source_id == rel.source_id {
            let m = compare_structures(&s, t)?;
            eprintln!(
                "recovered {}x{} grid; agreement with the table file {:.4}{}",
                s.n_rows,
                s.n_cols,
                m.agreement,
                if m.exact { " (exact)" } else { "" }
            );
        }
    }
    if !s.diagnostics.is_clean() {
        eprintln!("recovery diagnostics: {}", serde_json::to_string(&s.diagnostics).unwrap_or_default());
    }
    let texts = truth.as_ref().map(texts_of).unwrap_or_default();
    let fp = rel.fingerprint.as_deref();
    let text = match a.format {
        Format::Json => to_json(
            &RecoverOutput {
                source_id: &rel.source_id,
                fingerprint: fp,
                structure: &s,
            },
            "recovered structure",
        )?,
        Format::Csv => s.to_csv(&texts)?,
        Format::Html => format!("<!-- {} fingerprint {} -->\n{}", rel.source_id, fp.unwrap_or("-"), html_body(&s, &texts)),
    };
    deliver(out, a.out.as_deref(), &text)
}

fn html_body(s: &RecoveredStructure, texts: &std::collections::BTreeMap<CellId, String>) -> String {
    let h = s.to_html(texts);
    if h.ends_with('\n') {
        h
    } else {
        h + "\n"
    }
}

fn cmd_gradcheck(cfg: &RunConfig, a: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let mut gc = cfg.gradcheck.clone();
    if let Some(s) = a.samples {
        gc.samples = s;
    }
    if let Some(t) = a.tolerance {
        gc.tolerance = t;
    }
    if gc.samples == 0 || !(gc.tolerance.is_finite() && gc.tolerance > 0.0) {
        return Err(Error::Config("gradcheck needs samples > 0 and tolerance > 0".into()));
    }
    let report = gradcheck_suite(gc.seed, gc.samples)?;
    let fp = fingerprint(&gc);
    if let Some(p) = &a.out {
        #[derive(Serialize)]
        struct Out<'a> {
            config_fingerprint: &'a str,
            tolerance: f64,
            passes: bool,
            suite: &'a gfte_core::model::check::SuiteReport,
        }
        let o = Out {
            config_fingerprint: &fp,
            tolerance: gc.tolerance,
            passes: report.passes(gc.tolerance),
            suite: &report,
        };
        write_file(p, &to_json(&o, "gradcheck report")?)?;
    }
    emit(out, &format!("{}config {fp}\n", report.to_table()))?;
    if report.passes(gc.tolerance) {
        emit(out, &format!("PASS max_rel_err {:.3e} < {:.1e}\n", report.max_rel_err(), gc.tolerance))
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: max_rel_err {:.3e} against tolerance {:.1e}",
            report.max_rel_err(),
            gc.tolerance
        )))
    }
}
