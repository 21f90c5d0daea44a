use proptest::prelude::*;

use super::*;
use crate::cellgraph::{complete_graph, knn_graph, label_edges, relative_positions};
use crate::ingest::{generate_tables, GenSpec};
use crate::table::fixtures::{cell, profit_table};
use crate::table::BBox;
use crate::raster::Grayscale2D;

fn truth(t: &TableInstance) -> RecoveredStructure {
    let g = label_edges(&complete_graph(t).unwrap(), t).unwrap();
    recover_structure(&g.nodes, &g.edges).unwrap()
}

fn grid_table(rows: u32, cols: u32) -> TableInstance {
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (10.0 + 50.0 * f64::from(c), 10.0 + 20.0 * f64::from(r));
            cells.push(cell(r * cols + c, "v", [x, y, x + 30.0, y + 10.0], (r, r), (c, c)));
        }
    }
    TableInstance {
        source_id: format!("grid-{rows}x{cols}"),
        cells,
        image: Grayscale2D::filled(8, 8, 1.0),
        table_bbox: BBox::new(0.0, 0.0, 50.0 * f64::from(cols) + 10.0, 20.0 * f64::from(rows) + 10.0),
        n_rows: rows,
        n_cols: cols,
        unit: None,
    }
}

#[test]
fn single_node_is_one_by_one() {
    let t = grid_table(1, 1);
    let r = recover_structure(&relative_positions(&t), &[]).unwrap();
    assert_eq!((r.n_rows, r.n_cols), (1, 1));
    assert_eq!(r.cells[0].row, Span::unit(0));
    assert!(r.diagnostics.is_clean());
    assert!(recover_structure(&[], &[]).is_err());
}

#[test]
fn span_free_two_by_two_is_exact() {
    let t = grid_table(2, 2);
    let r = truth(&t);
    assert_eq!((r.n_rows, r.n_cols), (2, 2));
    assert!(compare_structures(&r, &t).unwrap().exact);
    assert!(r.diagnostics.row_span_candidates.is_empty() && r.diagnostics.col_span_candidates.is_empty());
}

#[test]
fn profit_table_spans_are_recovered() {
    let t = profit_table();
    let r = truth(&t);
    let find = |text: &str| {
        let id = t.cells.iter().find(|c| c.text == text).unwrap().id;
        *r.cells.iter().find(|c| c.cell_id == id).unwrap()
    };
    assert_eq!(find("Company Name").row, Span::new(0, 1));
    assert_eq!(find("Gross Profit Margin(%)").col, Span::new(1, 3));
    assert_eq!((r.n_rows, r.n_cols), (4, 4));
    let m = compare_structures(&r, &t).unwrap();
    assert!(m.exact, "{:?}", m.mismatched);
    assert!(r.diagnostics.is_clean());
    assert_eq!(r.diagnostics.row_span_candidates, vec![0]);
    assert_eq!(r.diagnostics.col_span_candidates, vec![1]);
}

#[test]
fn comparison_counts_agreeing_cells() {
    let t = profit_table();
    let mut r = truth(&t);
    assert_eq!(compare_structures(&r, &t).unwrap().agreement, 1.0);
    r.cells[5].row = Span::unit(3);
    let m = compare_structures(&r, &t).unwrap();
    assert!(!m.exact);
    assert_eq!(m.agreement, 8.0 / 9.0);
    assert_eq!(m.mismatched, vec![5]);
    r.cells.pop();
    assert!(matches!(compare_structures(&r, &t), Err(Error::Consistency(_))));
}

#[test]
fn exports_carry_spans_and_text() {
    let t = profit_table();
    let r = truth(&t);
    let texts = texts_of(&t);
    let html = r.to_html(&texts);
    assert!(html.contains("<td rowspan=\"2\">Company Name</td>"), "{html}");
    assert!(html.contains("<td colspan=\"3\">Gross Profit Margin(%)</td>"), "{html}");
    assert_eq!(html.matches("<tr>").count(), 4);
    let csv = r.to_csv(&texts).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "Company Name,Gross Profit Margin(%),,");
    assert_eq!(lines[3], "Hualu Hengsheng,,,");
    let back: RecoveredStructure = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn html_escapes_text() {
    let t = grid_table(1, 2);
    let r = truth(&t);
    let texts = BTreeMap::from([(0, "a<b & \"c\"".to_string())]);
    let html = r.to_html(&texts);
    assert!(html.contains("a&lt;b &amp; &quot;c&quot;"));
    assert!(html.contains("#1"));
}

fn edge(a: CellId, b: CellId, h: bool) -> EdgeSample {
    EdgeSample {
        src: a,
        dst: b,
        label_h: h,
        label_v: false,
    }
}

#[test]
fn noisy_labels_become_diagnostics() {
    let t = grid_table(2, 2);
    let g = label_edges(&complete_graph(&t).unwrap(), &t).unwrap();
    let mut edges = g.edges.clone();
    for e in &mut edges {
        if (e.src, e.dst) == (0, 1) {
            e.label_v = true;
        }
    }
    let r = recover_structure(&g.nodes, &edges).unwrap();
    assert_eq!(r.diagnostics.both_labels, vec![(0, 1)]);
    assert_eq!(r.diagnostics.col_span_candidates, vec![0, 1]);
    // the clique test absorbs the bad label
    assert!(compare_structures(&r, &t).unwrap().exact);

    let mut edges = g.edges.clone();
    for e in &mut edges {
        if (e.src, e.dst) == (0, 2) {
            e.label_h = true;
            e.label_v = false;
        }
    }
    let r = recover_structure(&g.nodes, &edges).unwrap();
    assert_eq!(r.diagnostics.row_span_candidates, vec![0, 2]);
    assert_eq!(r.cells[0].row, Span::unit(0));
    assert!(!compare_structures(&r, &t).unwrap().exact);
}

#[test]
fn span_candidate_covers_its_partners_components() {
    let t = grid_table(3, 1);
    let nodes = relative_positions(&t);
    let edges = [edge(0, 1, true), edge(0, 2, false), edge(1, 2, true)];
    let r = recover_structure(&nodes, &edges).unwrap();
    assert_eq!(r.diagnostics.row_span_candidates, vec![1]);
    assert_eq!(r.cells[1].row, Span::new(0, 1));
    assert_eq!(r.n_rows, 2);
}

#[test]
fn unpartnered_span_candidate_goes_to_nearest_component() {
    // 0 relates to 1 and 2, which are span candidates themselves
    let t = grid_table(5, 1);
    let nodes = relative_positions(&t);
    let edges = [
        edge(0, 1, true),
        edge(0, 2, true),
        edge(1, 2, false),
        edge(1, 3, true),
        edge(0, 3, false),
        edge(2, 4, true),
        edge(0, 4, false),
    ];
    let r = recover_structure(&nodes, &edges).unwrap();
    assert_eq!(r.diagnostics.row_span_candidates, vec![0, 1, 2]);
    assert_eq!(r.diagnostics.unpartnered, vec![(Axis::Row, 0)]);
    assert_eq!(r.n_rows, 2);
    assert_eq!(r.cells[0].row, Span::unit(0));
    assert_eq!(r.cells[2].row, Span::unit(1));
}

#[test]
fn axis_without_atomic_nodes_is_reported() {
    let t = grid_table(2, 2);
    let nodes = relative_positions(&t);
    let edges = [
        edge(0, 1, true),
        edge(0, 2, true),
        edge(1, 2, false),
        edge(1, 3, true),
        edge(2, 3, true),
        edge(0, 3, false),
    ];
    let r = recover_structure(&nodes, &edges).unwrap();
    assert!(r.diagnostics.no_atomic_nodes.contains(&Axis::Row));
    assert_eq!(r.n_rows, 1);
    assert_eq!(r.diagnostics.split_components.len(), 2);
}

#[test]
fn unknown_nodes_and_duplicates_are_errors() {
    let t = grid_table(1, 2);
    let nodes = relative_positions(&t);
    let e = EdgeSample::new(0, 9).unwrap();
    assert!(recover_structure(&nodes, &[e]).is_err());
    let dup = vec![nodes[0], nodes[0]];
    assert!(recover_structure(&dup, &[]).is_err());
}

#[test]
fn warnings_name_lines_without_single_span_cells() {
    let mut t = grid_table(2, 2);
    assert!(recovery_warnings(&t).is_empty());
    t.cells.retain(|c| c.id != 1 && c.id != 3);
    t.cells[0].col = Span::new(0, 1);
    t.cells[1].col = Span::new(0, 1);
    let w = recovery_warnings(&t);
    assert_eq!(w.len(), 2, "{w:?}");
    assert!(w[0].contains("column 0") && w[1].contains("column 1"));
}

#[test]
fn relation_set_round_trips_through_a_file() {
    let t = profit_table();
    let g = label_edges(&complete_graph(&t).unwrap(), &t).unwrap();
    let rs = RelationSet::new("profit", Some("abc".into()), g.nodes.clone(), g.edges.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rel.json");
    rs.write(&path).unwrap();
    let back = RelationSet::read(&path).unwrap();
    assert_eq!(back, rs);
    assert_eq!(back.recover().unwrap(), truth(&t));
}

#[test]
fn knn_relations_recover_without_error() {
    let spec = GenSpec {
        n_tables: 5,
        seed: 21,
        ..GenSpec::default()
    };
    for t in generate_tables(&spec).unwrap() {
        let g = label_edges(&knn_graph(&relative_positions(&t), 6).unwrap(), &t).unwrap();
        let r = recover_structure(&g.nodes, &g.edges).unwrap();
        assert_eq!(r.cells.len(), t.cells.len());
    }
}

fn span_free_spec(seed: u64) -> GenSpec {
    GenSpec {
        n_tables: 1,
        merge_probability: 0.0,
        seed,
        ..GenSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn span_free_tables_flag_no_nodes(seed in 0u64..10_000) {
        let t = generate_tables(&span_free_spec(seed)).unwrap().remove(0);
        let r = truth(&t);
        prop_assert!(r.diagnostics.row_span_candidates.is_empty());
        prop_assert!(r.diagnostics.col_span_candidates.is_empty());
        prop_assert!(compare_structures(&r, &t).unwrap().exact);
    }

    #[test]
    fn node_and_edge_order_do_not_matter(seed in 0u64..10_000, shuffle in 0u64..1_000) {
        let spec = GenSpec { n_tables: 1, seed, ..GenSpec::default() };
        let t = generate_tables(&spec).unwrap().remove(0);
        let g = label_edges(&knn_graph(&relative_positions(&t), 4).unwrap(), &t).unwrap();
        let base = recover_structure(&g.nodes, &g.edges).unwrap();
        let mut rng = crate::rng::Stream::new(shuffle, "order");
        let mut nodes = g.nodes.clone();
        let mut edges = g.edges.clone();
        rng.shuffle(&mut nodes);
        rng.shuffle(&mut edges);
        for e in &mut edges {
            if rng.below(2) == 0 {
                std::mem::swap(&mut e.src, &mut e.dst);
            }
        }
        prop_assert_eq!(recover_structure(&nodes, &edges).unwrap(), base);
    }

    #[test]
    fn generated_tables_round_trip(seed in 0u64..10_000) {
        let spec = GenSpec { n_tables: 1, seed, ..GenSpec::default() };
        let t = generate_tables(&spec).unwrap().remove(0);
        let r = truth(&t);
        prop_assert!(compare_structures(&r, &t).unwrap().exact);
        prop_assert!(r.diagnostics.is_clean());
        prop_assert_eq!((r.n_rows, r.n_cols), (t.n_rows, t.n_cols));
    }
}
