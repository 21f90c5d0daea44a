use proptest::prelude::*;

use super::*;
use crate::cellgraph::{knn_graph, relative_positions};
use crate::ingest::{generate_tables, GenSpec};
use crate::model::to_bytes;
use crate::raster::Grayscale2D;
use crate::table::fixtures::cell;
use crate::table::BBox;

fn one_by_two() -> TableInstance {
    TableInstance {
        source_id: "pair".into(),
        cells: vec![
            cell(0, "a", [10.0, 10.0, 40.0, 20.0], (0, 0), (0, 0)),
            cell(1, "b", [60.0, 10.0, 90.0, 20.0], (0, 0), (1, 1)),
        ],
        image: Grayscale2D::filled(100, 30, 1.0),
        table_bbox: BBox::new(0.0, 0.0, 100.0, 30.0),
        n_rows: 1,
        n_cols: 2,
        unit: None,
    }
}

fn tables(n: usize, seed: u64) -> Vec<TableInstance> {
    let spec = GenSpec {
        n_tables: n,
        rows_range: [3, 6],
        cols_range: [2, 4],
        seed,
        ..GenSpec::default()
    };
    generate_tables(&spec).unwrap()
}

fn small(variant: Variant, epochs: usize) -> TrainConfig {
    TrainConfig {
        variant,
        epochs,
        dims: ModelDims {
            gcn_hidden: 16,
            text_hidden: 8,
            embed_dim: 4,
            mlp_hidden: 16,
            img_channels: 32,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn config_is_validated() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
        TrainConfig { beta2: 1.0, ..TrainConfig::default() },
        TrainConfig { k: 0, ..TrainConfig::default() },
        TrainConfig { holdout_fraction: 1.0, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
    let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"epoch": 3}"#);
    assert!(parsed.is_err());
}

#[test]
fn split_is_seeded_disjoint_and_rounded() {
    let (train, held) = split_indices(500, 0.1, 3);
    assert_eq!((train.len(), held.len()), (450, 50));
    let mut all: Vec<usize> = train.iter().chain(&held).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..500).collect::<Vec<_>>());
    assert_eq!(split_indices(500, 0.1, 3), (train, held));
    assert_ne!(split_indices(500, 0.1, 4).1, split_indices(500, 0.1, 3).1);
    assert_eq!(split_indices(1, 0.5, 1), (vec![0], vec![]));
    assert_eq!(split_indices(10, 0.0, 1).1.len(), 0);
}

#[test]
fn class_weights_are_inverse_frequencies() {
    let ts = tables(3, 2);
    let preps = prepare_tables(&ts, 6, None, false, 1).unwrap();
    let (mut pos, mut total) = (0.0, 0.0);
    for p in &preps {
        for e in &p.edges {
            pos += f64::from(u8::from(e.label_h));
            total += 1.0;
        }
    }
    let w = inverse_frequency_weights(&preps, Direction::Horizontal);
    assert!((w[1] - total / (2.0 * pos)).abs() < 1e-12);
    assert!((w[0] - total / (2.0 * (total - pos))).abs() < 1e-12);
    // weighted counts balance
    assert!((w[1] * pos - w[0] * (total - pos)).abs() < 1e-9);
}

#[test]
fn one_table_is_memorized() {
    let t = one_by_two();
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let r = train(&cfg, std::slice::from_ref(&t), 1).unwrap();
    assert!(r.heldout_ids.is_empty());
    for d in Direction::BOTH {
        let last = r.curves.iter().rev().find(|c| c.direction == d).unwrap();
        assert_eq!(last.epoch, 50);
        assert_eq!(last.train_accuracy, 1.0, "{d:?}");
        assert!(last.heldout_accuracy.is_none());
    }
    let pair = ModelPair::new(&r.model_h, &r.model_v).unwrap();
    let rep = evaluate(&pair, &[t], EvalOptions::default()).unwrap();
    assert_eq!((rep.horizontal.accuracy, rep.vertical.accuracy), (1.0, 1.0));
}

#[test]
fn training_is_deterministic() {
    let ts = tables(12, 5);
    let cfg = small(Variant::PosText, 2);
    let a = train(&cfg, &ts, 1).unwrap();
    let b = train(&cfg, &ts, 2).unwrap();
    assert_eq!(a.curves, b.curves);
    assert_eq!(to_bytes(&a.model_h).unwrap(), to_bytes(&b.model_h).unwrap());
    assert_eq!(to_bytes(&a.model_v).unwrap(), to_bytes(&b.model_v).unwrap());
    assert_eq!(a.curves_csv().unwrap(), b.curves_csv().unwrap());
    assert_eq!(a.fingerprint, b.fingerprint);
    assert_eq!((a.train_ids.len(), a.heldout_ids.len()), (11, 1));
}

#[test]
fn curves_csv_has_one_row_per_direction_and_epoch() {
    let ts = tables(5, 6);
    let r = train(&small(Variant::Pos, 3), &ts, 1).unwrap();
    let csv = r.curves_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[0].starts_with("fingerprint,direction,epoch"));
    assert!(lines[1].starts_with(&format!("{},h,1,", r.fingerprint)));
    assert!(lines[6].starts_with(&format!("{},v,3,", r.fingerprint)));
}

#[test]
fn patience_stops_a_stalled_run() {
    let ts = tables(10, 7);
    let cfg = TrainConfig {
        lr: 1e-12,
        patience: 2,
        ..small(Variant::Pos, 20)
    };
    let r = train(&cfg, &ts, 1).unwrap();
    for d in Direction::BOTH {
        let n = r.curves.iter().filter(|c| c.direction == d).count();
        assert_eq!(n, 3, "{d:?}");
    }
}

#[test]
fn empty_dataset_is_an_error() {
    assert!(matches!(train(&TrainConfig::default(), &[], 1), Err(Error::Usage(_))));
    assert!(evaluate(&OraclePredictor, &[], EvalOptions::default()).is_err());
}

#[test]
fn class_weighted_training_runs() {
    let ts = tables(4, 8);
    let cfg = TrainConfig {
        class_weights: true,
        ..small(Variant::Pos, 1)
    };
    let r = train(&cfg, &ts, 1).unwrap();
    assert!(r.curves.iter().all(|c| c.train_loss.is_finite()));
}

#[test]
fn confusion_arithmetic() {
    let mut c = Confusion::default();
    for i in 0..10 {
        c.add(i % 2 == 0, i % 2 == 0 || i == 9);
    }
    assert_eq!(c.total(), 10);
    assert_eq!(c.accuracy(), 0.9);
    assert_eq!((c.tp, c.tn, c.fp, c.fn_), (5, 4, 0, 1));
    assert_eq!(c.precision(), 1.0);
    assert!((c.recall() - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn oracle_scores_one_and_constant_scores_the_positive_rate() {
    let ts = tables(6, 9);
    let opts = EvalOptions {
        keep_edges: true,
        ..EvalOptions::default()
    };
    let r = evaluate(&OraclePredictor, &ts, opts).unwrap();
    assert_eq!((r.horizontal.accuracy, r.vertical.accuracy), (1.0, 1.0));

    // independent count of same-row pairs over the KNN edges
    let (mut pos_h, mut pos_v, mut total) = (0usize, 0usize, 0usize);
    for t in &ts {
        let g = knn_graph(&relative_positions(t), 6).unwrap();
        for e in &g.edges {
            let (a, b) = (t.cell(e.src).unwrap(), t.cell(e.dst).unwrap());
            let rows = a.row.start.max(b.row.start) <= a.row.end.min(b.row.end);
            let cols = a.col.start.max(b.col.start) <= a.col.end.min(b.col.end);
            pos_h += usize::from(rows);
            pos_v += usize::from(cols);
            total += 1;
        }
    }
    let all_pos = ConstantPredictor {
        same_row: true,
        same_col: true,
    };
    let c = evaluate(&all_pos, &ts, EvalOptions::default()).unwrap();
    assert_eq!(c.horizontal.edges, total);
    assert_eq!(c.horizontal.accuracy, pos_h as f64 / total as f64);
    assert_eq!(c.vertical.accuracy, pos_v as f64 / total as f64);
    assert_eq!(c.horizontal.recall, 1.0);
}

#[test]
fn complete_graph_mode_scores_every_pair() {
    let ts = tables(2, 10);
    let opts = EvalOptions {
        graph: GraphMode::Complete,
        ..EvalOptions::default()
    };
    let r = evaluate(&OraclePredictor, &ts, opts).unwrap();
    let pairs: usize = ts.iter().map(|t| t.cells.len() * (t.cells.len() - 1) / 2).sum();
    assert_eq!(r.horizontal.edges, pairs);
}

#[test]
fn model_pair_checks_directions_and_vocab() {
    let ts = tables(4, 11);
    let r = train(&small(Variant::PosText, 1), &ts, 1).unwrap();
    assert!(ModelPair::new(&r.model_v, &r.model_h).is_err());
    let other = train(&small(Variant::PosText, 1), &tables(4, 12), 1).unwrap();
    assert!(matches!(ModelPair::new(&r.model_h, &other.model_v), Err(Error::ConfigMismatch(_))));
    let pos = train(&small(Variant::Pos, 1), &ts, 1).unwrap();
    assert!(ModelPair::new(&r.model_h, &pos.model_v).is_err());
}

#[test]
fn report_text_layouts() {
    let rows = vec![("SciTSR test".to_string(), 0.5, 0.25)];
    let t = dataset_table(&rows);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines[0], "Dataset     | Horizontal prediction | Vertical prediction");
    assert!(lines[2].starts_with("SciTSR test |"));
    assert!(lines[2].ends_with("0.500000 |            0.250000"));
    let ab = AblationReport {
        config_fingerprint: "c".into(),
        dataset_fingerprint: "d".into(),
        eval_tables: 3,
        rows: Variant::ALL
            .iter()
            .map(|v| AblationRow {
                variant: *v,
                horizontal: 0.1,
                vertical: 0.2,
                train_fingerprint: "x".into(),
            })
            .collect(),
    };
    let text = ab.to_text();
    assert!(text.starts_with("Network       | Horizontal prediction | Vertical prediction\n"));
    for label in ["GFTE-pos ", "GFTE-pos+text", "GFTE "] {
        assert!(text.contains(label), "{text}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn metrics_recount_from_stored_predictions_and_ignore_order(seed in 0u64..1000, shuffle in 0u64..1000) {
        let mut ts = tables(5, seed);
        let pred = ConstantPredictor { same_row: seed % 2 == 0, same_col: true };
        let opts = EvalOptions { keep_edges: true, ..EvalOptions::default() };
        let r = evaluate(&pred, &ts, opts).unwrap();
        let edges: Vec<&EdgePrediction> = r.per_table.iter().flat_map(|t| t.predictions.as_ref().unwrap()).collect();
        let hits = edges.iter().filter(|e| e.pred_h == e.truth_h).count();
        prop_assert_eq!(r.horizontal.accuracy, hits as f64 / edges.len() as f64);
        let c = r.horizontal.confusion;
        prop_assert_eq!(r.horizontal.accuracy, (c.tp + c.tn) as f64 / c.total() as f64);

        crate::rng::Stream::new(shuffle, "order").shuffle(&mut ts);
        prop_assert_eq!(evaluate(&pred, &ts, opts).unwrap(), r);
    }
}
