//! Browser demo. The page loads the ground-truth relations of every cell
//! pair of an example table, lets the user edit them, and rebuilds the grid.
//!
//! The plain functions are tested natively; the `wasm_*` wrappers are the
//! exports seen from JavaScript.

use std::collections::BTreeMap;

use gfte_core::cellgraph::{complete_graph, label_edges};
use gfte_core::ingest::{generate_tables, GenSpec};
use gfte_core::recover::{texts_of, RelationSet};
use gfte_core::table::{fixtures::profit_table, CellId, TableInstance};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Relations plus the cell texts used to fill the rebuilt grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub relations: RelationSet,
    #[serde(default)]
    pub texts: BTreeMap<CellId, String>,
}

fn example_of(t: &TableInstance) -> Result<String, String> {
    let g = complete_graph(t)
        .and_then(|g| label_edges(&g, t))
        .map_err(|e| e.to_string())?;
    let ex = Example {
        relations: RelationSet::new(t.source_id.clone(), None, g.nodes, g.edges),
        texts: texts_of(t),
    };
    serde_json::to_string_pretty(&ex).map_err(|e| e.to_string())
}

/// Ground-truth relations of the nine-cell financial table.
pub fn profit_example() -> Result<String, String> {
    example_of(&profit_table())
}

/// Ground-truth relations of one synthetic table.
pub fn generated_example(seed: u64) -> Result<String, String> {
    let spec = GenSpec {
        n_tables: 1,
        seed,
        ..GenSpec::default()
    };
    let tables = generate_tables(&spec).map_err(|e| e.to_string())?;
    example_of(&tables[0])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Rebuilds the grid from an [`Example`] and renders a summary line and
/// the table as HTML.
pub fn recover_html(example_json: &str) -> Result<String, String> {
    let ex: Example = serde_json::from_str(example_json).map_err(|e| format!("bad input: {e}"))?;
    let s = ex.relations.recover().map_err(|e| e.to_string())?;
    let d = &s.diagnostics;
    let notes = if d.is_clean() {
        "consistent relations".to_string()
    } else {
        serde_json::to_string(d).map_err(|e| e.to_string())?
    };
    Ok(format!(
        "<p class=\"summary\">{} rows x {} columns, {} cells; {}</p>\n{}",
        s.n_rows,
        s.n_cols,
        s.cells.len(),
        escape(&notes),
        s.to_html(&ex.texts)
    ))
}

#[wasm_bindgen(js_name = profitExample)]
pub fn wasm_profit_example() -> Result<String, JsError> {
    profit_example().map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = generatedExample)]
pub fn wasm_generated_example(seed: u32) -> Result<String, JsError> {
    generated_example(u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = recoverHtml)]
pub fn wasm_recover_html(example_json: &str) -> Result<String, JsError> {
    recover_html(example_json).map_err(|e| JsError::new(&e))
}
