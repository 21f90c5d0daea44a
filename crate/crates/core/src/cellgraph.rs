//! Cell graphs: relative node geometry, KNN candidate edges, and labels.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{ground_truth_relation, CellId, EdgeSample, TableInstance};

/// Default neighbourhood size for candidate edges.
pub const DEFAULT_K: usize = 6;

/// Cell geometry normalized by the table bbox, every value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeGeometry {
    pub cell_id: CellId,
    pub rel_cx: f64,
    pub rel_cy: f64,
    pub rel_w: f64,
    pub rel_h: f64,
    pub rel_left: f64,
    pub rel_top: f64,
    pub rel_right: f64,
    pub rel_bottom: f64,
}

impl NodeGeometry {
    /// The eight-dimensional position feature: corners, center, size.
    pub fn position_vector(&self) -> [f64; 8] {
        [
            self.rel_left,
            self.rel_top,
            self.rel_right,
            self.rel_bottom,
            self.rel_cx,
            self.rel_cy,
            self.rel_w,
            self.rel_h,
        ]
    }

    fn dist2(&self, other: &NodeGeometry) -> f64 {
        let dx = self.rel_cx - other.rel_cx;
        let dy = self.rel_cy - other.rel_cy;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGraph {
    pub nodes: Vec<NodeGeometry>,
    pub edges: Vec<EdgeSample>,
    pub k: usize,
}

impl CellGraph {
    /// Map from cell id to node index.
    pub fn index(&self) -> HashMap<CellId, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.cell_id, i))
            .collect()
    }

    /// Edges as node-index pairs, in edge order.
    pub fn index_pairs(&self) -> Result<Vec<(usize, usize)>> {
        let idx = self.index();
        self.edges
            .iter()
            .map(|e| match (idx.get(&e.src), idx.get(&e.dst)) {
                (Some(a), Some(b)) => Ok((*a, *b)),
                _ => Err(Error::Graph(format!(
                    "edge ({}, {}) references a missing node",
                    e.src, e.dst
                ))),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("cell graph", e))
    }
}

/// One node per cell in ascending id order.
pub fn relative_positions(t: &TableInstance) -> Vec<NodeGeometry> {
    let tb = t.table_bbox;
    let (w, h) = (tb.width(), tb.height());
    t.cells_by_id()
        .into_iter()
        .map(|c| {
            let b = c.bbox;
            let left = (b.x0 - tb.x0) / w;
            let right = (b.x1 - tb.x0) / w;
            let top = (b.y0 - tb.y0) / h;
            let bottom = (b.y1 - tb.y0) / h;
            NodeGeometry {
                cell_id: c.id,
                rel_cx: ((b.x0 + b.x1) / 2.0 - tb.x0) / w,
                rel_cy: ((b.y0 + b.y1) / 2.0 - tb.y0) / h,
                rel_w: b.width() / w,
                rel_h: b.height() / h,
                rel_left: left,
                rel_top: top,
                rel_right: right,
                rel_bottom: bottom,
            }
        })
        .collect()
}

/// Undirected union of every node's `k` nearest other nodes (Euclidean on
/// normalized centers, ties to the lower cell id).
pub fn knn_graph(nodes: &[NodeGeometry], k: usize) -> Result<CellGraph> {
    if nodes.len() < 2 {
        return Err(Error::Graph(format!(
            "need at least two nodes for a graph, got {}",
            nodes.len()
        )));
    }
    if k == 0 {
        return Err(Error::Usage("k must be positive".into()));
    }
    let mut set = BTreeSet::new();
    let mut order: Vec<usize> = Vec::with_capacity(nodes.len());
    for (i, a) in nodes.iter().enumerate() {
        order.clear();
        order.extend((0..nodes.len()).filter(|&j| j != i));
        order.sort_by(|&x, &y| {
            a.dist2(&nodes[x])
                .total_cmp(&a.dist2(&nodes[y]))
                .then(nodes[x].cell_id.cmp(&nodes[y].cell_id))
        });
        for &j in order.iter().take(k) {
            let (s, d) = (a.cell_id.min(nodes[j].cell_id), a.cell_id.max(nodes[j].cell_id));
            set.insert((s, d));
        }
    }
    let edges = set
        .into_iter()
        .map(|(s, d)| EdgeSample::new(s, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellGraph {
        nodes: nodes.to_vec(),
        edges,
        k,
    })
}

/// All `C(n, 2)` canonical edges over the table's cells.
pub fn complete_graph(t: &TableInstance) -> Result<CellGraph> {
    let nodes = relative_positions(t);
    if nodes.len() < 2 {
        return Err(Error::Graph("complete graph needs at least two cells".into()));
    }
    let mut edges = Vec::with_capacity(nodes.len() * (nodes.len() - 1) / 2);
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            edges.push(EdgeSample::new(a.cell_id, b.cell_id)?);
        }
    }
    edges.sort_by_key(|e| (e.src, e.dst));
    let k = nodes.len() - 1;
    Ok(CellGraph { nodes, edges, k })
}

/// Attaches ground-truth row/column labels to every edge.
pub fn label_edges(g: &CellGraph, t: &TableInstance) -> Result<CellGraph> {
    let cells: HashMap<CellId, _> = t.cells.iter().map(|c| (c.id, c)).collect();
    let mut out = g.clone();
    for e in &mut out.edges {
        let (Some(a), Some(b)) = (cells.get(&e.src), cells.get(&e.dst)) else {
            return Err(Error::Graph(format!(
                "edge ({}, {}) references a cell missing from table {}",
                e.src, e.dst, t.source_id
            )));
        };
        let (h, v) = ground_truth_relation(a, b)?;
        e.label_h = h;
        e.label_v = v;
    }
    Ok(out)
}

/// KNN graph over a table with ground-truth labels.
pub fn labeled_knn_graph(t: &TableInstance, k: usize) -> Result<CellGraph> {
    label_edges(&knn_graph(&relative_positions(t), k)?, t)
}
