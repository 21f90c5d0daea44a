//! Grid recovery from labeled relations and node positions.
//!
//! Per axis (described for rows): a node whose same-row neighbours are not
//! all related to each other spans several rows. The remaining nodes are
//! grouped into components by union-find over same-row edges, components are
//! ordered by mean vertical center, and each spanning node covers the range
//! of components its partners fall in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::cellgraph::NodeGeometry;
use crate::error::{Error, Result};
use crate::table::{CellId, EdgeSample, Span, TableInstance};

pub const RELATIONS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Col,
}

impl Axis {
    fn label(self, e: &EdgeSample) -> bool {
        match self {
            Axis::Row => e.label_h,
            Axis::Col => e.label_v,
        }
    }

    fn coord(self, n: &NodeGeometry) -> f64 {
        match self {
            Axis::Row => n.rel_cy,
            Axis::Col => n.rel_cx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredCell {
    pub cell_id: CellId,
    pub row: Span,
    pub col: Span,
}

/// Inconsistencies met during recovery. None of them stop it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Nodes whose same-row neighbourhood is not a clique.
    pub row_span_candidates: Vec<CellId>,
    pub col_span_candidates: Vec<CellId>,
    /// Span candidates with no non-spanning partner, placed at the nearest
    /// component by position.
    pub unpartnered: Vec<(Axis, CellId)>,
    /// Negative edges whose endpoints ended up in one component.
    pub split_components: Vec<(Axis, CellId, CellId)>,
    /// Edges labeled both same-row and same-column, impossible for
    /// distinct cells.
    pub both_labels: Vec<(CellId, CellId)>,
    /// Cell pairs whose recovered span rectangles intersect.
    pub overlaps: Vec<(CellId, CellId)>,
    /// Axes on which every node was a span candidate, so all nodes were
    /// grouped as if none were.
    pub no_atomic_nodes: Vec<Axis>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.unpartnered.is_empty()
            && self.split_components.is_empty()
            && self.both_labels.is_empty()
            && self.overlaps.is_empty()
            && self.no_atomic_nodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredStructure {
    /// Sorted by cell id.
    pub cells: Vec<RecoveredCell>,
    pub n_rows: u32,
    pub n_cols: u32,
    pub diagnostics: Diagnostics,
}

/// Edge predictions or ground truth for one table, as exchanged between
/// commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSet {
    pub format_version: u32,
    pub source_id: String,
    /// Fingerprint of the models or config that produced the labels.
    pub fingerprint: Option<String>,
    pub nodes: Vec<NodeGeometry>,
    pub edges: Vec<EdgeSample>,
}

impl RelationSet {
    pub fn new(source_id: impl Into<String>, fingerprint: Option<String>, nodes: Vec<NodeGeometry>, edges: Vec<EdgeSample>) -> Self {
        Self {
            format_version: RELATIONS_VERSION,
            source_id: source_id.into(),
            fingerprint,
            nodes,
            edges,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: RelationSet = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        if r.format_version != RELATIONS_VERSION {
            return Err(Error::parse(
                path.display().to_string(),
                format!("relation format {} (expected {RELATIONS_VERSION})", r.format_version),
            ));
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse("relation set", e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn recover(&self) -> Result<RecoveredStructure> {
        recover_structure(&self.nodes, &self.edges)
    }
}

/// Rebuilds grid indices and spans from labeled edges. Missing edges are
/// treated as unknown: only an explicit negative label breaks a clique.
pub fn recover_structure(nodes: &[NodeGeometry], edges: &[EdgeSample]) -> Result<RecoveredStructure> {
    if nodes.is_empty() {
        return Err(Error::Graph("recovery needs at least one node".into()));
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_by_key(|n| n.cell_id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].cell_id == w[1].cell_id) {
        return Err(Error::Graph(format!("duplicate node {}", w[0].cell_id)));
    }
    let index: HashMap<CellId, usize> = sorted.iter().enumerate().map(|(i, n)| (n.cell_id, i)).collect();

    // Canonical pair -> labels; later duplicates of a pair override earlier ones.
    let mut pairs: BTreeMap<(usize, usize), EdgeSample> = BTreeMap::new();
    for e in edges {
        let (Some(&a), Some(&b)) = (index.get(&e.src), index.get(&e.dst)) else {
            return Err(Error::Graph(format!("edge ({}, {}) references a missing node", e.src, e.dst)));
        };
        if a == b {
            return Err(Error::Graph(format!("self-loop on cell {}", e.src)));
        }
        pairs.insert((a.min(b), a.max(b)), *e);
    }

    let mut diagnostics = Diagnostics::default();
    for ((a, b), e) in &pairs {
        if e.label_h && e.label_v {
            diagnostics.both_labels.push((sorted[*a].cell_id, sorted[*b].cell_id));
        }
    }
    let rows = recover_axis(Axis::Row, &sorted, &pairs, &mut diagnostics);
    let cols = recover_axis(Axis::Col, &sorted, &pairs, &mut diagnostics);

    let cells: Vec<RecoveredCell> = sorted
        .iter()
        .zip(rows.spans.iter().zip(&cols.spans))
        .map(|(n, (r, c))| RecoveredCell {
            cell_id: n.cell_id,
            row: *r,
            col: *c,
        })
        .collect();
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            if a.row.intersects(&b.row) && a.col.intersects(&b.col) {
                diagnostics.overlaps.push((a.cell_id, b.cell_id));
            }
        }
    }
    Ok(RecoveredStructure {
        cells,
        n_rows: rows.count,
        n_cols: cols.count,
        diagnostics,
    })
}

struct AxisResult {
    spans: Vec<Span>,
    count: u32,
}

fn recover_axis(
    axis: Axis,
    nodes: &[NodeGeometry],
    pairs: &BTreeMap<(usize, usize), EdgeSample>,
    diag: &mut Diagnostics,
) -> AxisResult {
    let n = nodes.len();
    let related = |a: usize, b: usize| pairs.get(&(a.min(b), a.max(b))).map(|e| axis.label(e));
    let mut partners: Vec<Vec<usize>> = vec![Vec::new(); n];
    for ((a, b), e) in pairs {
        if axis.label(e) {
            partners[*a].push(*b);
            partners[*b].push(*a);
        }
    }

    // (1) span candidates: some pair of partners is explicitly unrelated
    let mut flagged: Vec<bool> = partners
        .iter()
        .map(|ps| {
            ps.iter()
                .enumerate()
                .any(|(i, &p)| ps[i + 1..].iter().any(|&q| related(p, q) == Some(false)))
        })
        .collect();
    let candidates: Vec<CellId> = (0..n).filter(|&i| flagged[i]).map(|i| nodes[i].cell_id).collect();
    match axis {
        Axis::Row => diag.row_span_candidates = candidates,
        Axis::Col => diag.col_span_candidates = candidates,
    }
    if flagged.iter().all(|f| *f) {
        diag.no_atomic_nodes.push(axis);
        flagged.fill(false);
    }

    // (2) components of non-spanning nodes
    let mut uf = UnionFind::<usize>::new(n);
    for ((a, b), e) in pairs {
        if axis.label(e) && !flagged[*a] && !flagged[*b] {
            uf.union(*a, *b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..n).filter(|&i| !flagged[i]) {
        groups.entry(uf.find(i)).or_default().push(i);
    }

    // (3) order by mean coordinate, ties by smallest cell id
    let mut comps: Vec<(f64, CellId, Vec<usize>)> = groups
        .into_values()
        .map(|members| {
            let mean = members.iter().map(|&i| axis.coord(&nodes[i])).sum::<f64>() / members.len() as f64;
            let min_id = members.iter().map(|&i| nodes[i].cell_id).min().expect("non-empty group");
            (mean, min_id, members)
        })
        .collect();
    comps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut comp_of = vec![usize::MAX; n];
    for (ci, (_, _, members)) in comps.iter().enumerate() {
        for &i in members {
            comp_of[i] = ci;
        }
    }
    for ((a, b), e) in pairs {
        if !axis.label(e) && !flagged[*a] && comp_of[*a] == comp_of[*b] {
            diag.split_components.push((axis, nodes[*a].cell_id, nodes[*b].cell_id));
        }
    }

    // (4) spanning nodes cover their partners' components
    let mut spans = vec![Span::unit(0); n];
    for i in 0..n {
        let idx = |c: usize| u32::try_from(c).expect("component count fits u32");
        if !flagged[i] {
            spans[i] = Span::unit(idx(comp_of[i]));
            continue;
        }
        let hit: BTreeSet<usize> = partners[i].iter().filter(|&&p| !flagged[p]).map(|&p| comp_of[p]).collect();
        spans[i] = match (hit.first(), hit.last()) {
            (Some(&lo), Some(&hi)) => Span::new(idx(lo), idx(hi)),
            _ => {
                diag.unpartnered.push((axis, nodes[i].cell_id));
                let c = axis.coord(&nodes[i]);
                let nearest = (0..comps.len())
                    .min_by(|&x, &y| (comps[x].0 - c).abs().total_cmp(&(comps[y].0 - c).abs()))
                    .expect("at least one component");
                Span::unit(idx(nearest))
            }
        };
    }
    AxisResult {
        spans,
        count: u32::try_from(comps.len()).expect("component count fits u32"),
    }
}

/// Agreement between a recovered structure and a reference table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMatch {
    /// Every cell's four span indices agree.
    pub exact: bool,
    /// Fraction of cells whose spans agree.
    pub agreement: f64,
    pub mismatched: Vec<CellId>,
}

pub fn compare_structures(a: &RecoveredStructure, b: &TableInstance) -> Result<StructureMatch> {
    let ours: BTreeSet<CellId> = a.cells.iter().map(|c| c.cell_id).collect();
    let theirs: BTreeSet<CellId> = b.cells.iter().map(|c| c.id).collect();
    if ours != theirs || ours.len() != a.cells.len() {
        return Err(Error::Consistency(format!(
            "recovered structure and table {} cover different cell ids",
            b.source_id
        )));
    }
    let mismatched: Vec<CellId> = a
        .cells
        .iter()
        .filter(|r| {
            let c = b.cell(r.cell_id).expect("ids checked");
            c.row != r.row || c.col != r.col
        })
        .map(|r| r.cell_id)
        .collect();
    let n = a.cells.len();
    Ok(StructureMatch {
        exact: mismatched.is_empty(),
        agreement: if n == 0 { 1.0 } else { (n - mismatched.len()) as f64 / n as f64 },
        mismatched,
    })
}

/// Rows and columns of `t` that hold no single-span cell. Recovery cannot
/// rebuild such a line because it has no component of its own.
pub fn recovery_warnings(t: &TableInstance) -> Vec<String> {
    let mut out = Vec::new();
    for (axis, count) in [(Axis::Row, t.n_rows), (Axis::Col, t.n_cols)] {
        for i in 0..count {
            let has_unit = t.cells.iter().any(|c| {
                let s = if axis == Axis::Row { c.row } else { c.col };
                s.is_unit() && s.start == i
            });
            if !has_unit {
                let name = if axis == Axis::Row { "row" } else { "column" };
                out.push(format!("{}: {name} {i} has no single-span cell", t.source_id));
            }
        }
    }
    out
}

impl RecoveredStructure {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("recovered structure", e))
    }

    /// Grid of `n_rows x n_cols` positions, each holding the cell that covers
    /// it; overlapping cells keep the lowest id.
    pub fn grid(&self) -> Vec<Vec<Option<CellId>>> {
        let mut g = vec![vec![None; self.n_cols as usize]; self.n_rows as usize];
        for c in self.cells.iter().rev() {
            for r in c.row.start..=c.row.end.min(self.n_rows.saturating_sub(1)) {
                for k in c.col.start..=c.col.end.min(self.n_cols.saturating_sub(1)) {
                    g[r as usize][k as usize] = Some(c.cell_id);
                }
            }
        }
        g
    }

    /// CSV grid with each cell's text at its top-left position and empty
    /// strings elsewhere. Cells without text show as `#id`.
    pub fn to_csv(&self, texts: &BTreeMap<CellId, String>) -> Result<String> {
        let anchors: HashMap<(u32, u32), CellId> =
            self.cells.iter().rev().map(|c| ((c.row.start, c.col.start), c.cell_id)).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in 0..self.n_rows {
            let row: Vec<String> = (0..self.n_cols)
                .map(|c| anchors.get(&(r, c)).map(|id| label(texts, *id)).unwrap_or_default())
                .collect();
            w.write_record(&row).map_err(|e| Error::parse("csv export", e))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::parse("csv export", e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::parse("csv export", e))
    }

    /// Minimal HTML table with `rowspan`/`colspan`; grid positions no cell
    /// covers become empty `td` elements.
    pub fn to_html(&self, texts: &BTreeMap<CellId, String>) -> String {
        let grid = self.grid();
        let by_id: HashMap<CellId, &RecoveredCell> = self.cells.iter().map(|c| (c.cell_id, c)).collect();
        let mut s = String::from("<table>\n");
        for (r, line) in grid.iter().enumerate() {
            s += "  <tr>";
            for (k, slot) in line.iter().enumerate() {
                match slot {
                    None => s += "<td></td>",
                    Some(id) => {
                        let c = by_id[id];
                        if c.row.start as usize != r || c.col.start as usize != k {
                            continue;
                        }
                        s += "<td";
                        let rows = c.row.end.min(self.n_rows - 1) - c.row.start + 1;
                        let cols = c.col.end.min(self.n_cols - 1) - c.col.start + 1;
                        if rows > 1 {
                            s += &format!(" rowspan=\"{rows}\"");
                        }
                        if cols > 1 {
                            s += &format!(" colspan=\"{cols}\"");
                        }
                        s += &format!(">{}</td>", escape_html(&label(texts, *id)));
                    }
                }
            }
            s += "</tr>\n";
        }
        s += "</table>\n";
        s
    }
}

fn label(texts: &BTreeMap<CellId, String>, id: CellId) -> String {
    texts.get(&id).cloned().unwrap_or_else(|| format!("#{id}"))
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out += "&amp;",
            '<' => out += "&lt;",
            '>' => out += "&gt;",
            '"' => out += "&quot;",
            _ => out.push(ch),
        }
    }
    out
}

/// Cell texts keyed by id, for the exporters.
pub fn texts_of(t: &TableInstance) -> BTreeMap<CellId, String> {
    t.cells.iter().map(|c| (c.id, c.text.clone())).collect()
}

#[cfg(test)]
mod tests;
