//! Tables, cells, spans and pairwise relations.
//!
//! Coordinates use a top-left origin with y growing downward. Spans are
//! inclusive integer intervals; two cells are in the same row (column) when
//! their row (column) intervals intersect.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grayscale2D;

pub type CellId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn is_finite(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn has_positive_area(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Inclusive index interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

impl Span {
    pub const fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub const fn unit(i: u32) -> Self {
        Self { start: i, end: i }
    }

    pub fn intersects(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn len(&self) -> u32 {
        self.end.saturating_sub(self.start) + 1
    }

    pub fn is_unit(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, i: u32) -> bool {
        self.start <= i && i <= self.end
    }
}

impl From<[u32; 2]> for Span {
    fn from(v: [u32; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [u32; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub text: String,
    pub bbox: BBox,
    pub row: Span,
    pub col: Span,
    /// Structural placeholder; the only kind of cell allowed to have empty text.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub placeholder: bool,
}

impl Cell {
    pub fn new(id: CellId, text: impl Into<String>, bbox: BBox, row: Span, col: Span) -> Self {
        Self {
            id,
            text: text.into(),
            bbox,
            row,
            col,
            placeholder: false,
        }
    }

    pub fn is_merged(&self) -> bool {
        !(self.row.is_unit() && self.col.is_unit())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableInstance {
    pub source_id: String,
    pub cells: Vec<Cell>,
    pub image: Grayscale2D,
    pub table_bbox: BBox,
    pub n_rows: u32,
    pub n_cols: u32,
    pub unit: Option<String>,
}

impl TableInstance {
    pub fn cell(&self, id: CellId) -> Option<&Cell> {
        self.cells.iter().find(|c| c.id == id)
    }

    pub fn merged_cell_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_merged()).count()
    }

    /// Cells sorted by ascending id; the node order used by cell graphs.
    pub fn cells_by_id(&self) -> Vec<&Cell> {
        let mut v: Vec<&Cell> = self.cells.iter().collect();
        v.sort_by_key(|c| c.id);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    SameRow,
    SameCol,
    Unrelated,
}

/// Canonical undirected edge (`src < dst`) with per-direction labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeSample {
    pub src: CellId,
    pub dst: CellId,
    pub label_h: bool,
    pub label_v: bool,
}

impl EdgeSample {
    /// Unlabeled canonical edge; endpoint order is normalized.
    pub fn new(a: CellId, b: CellId) -> Result<Self> {
        if a == b {
            return Err(Error::Graph(format!("self-loop on cell {a}")));
        }
        Ok(Self {
            src: a.min(b),
            dst: a.max(b),
            label_h: false,
            label_v: false,
        })
    }

    pub fn kind(&self) -> RelationKind {
        match (self.label_h, self.label_v) {
            (true, _) => RelationKind::SameRow,
            (false, true) => RelationKind::SameCol,
            (false, false) => RelationKind::Unrelated,
        }
    }
}

/// One invariant violation found by [`validate_table`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyGrid,
    NoCells,
    TableBBox,
    CellBBox { cell: CellId },
    DuplicateId { cell: CellId },
    SpanOrder { cell: CellId },
    OutOfGrid { cell: CellId },
    OutsideTable { cell: CellId },
    Overlap { a: CellId, b: CellId },
    EmptyText { cell: CellId },
    ImageRange,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGrid => write!(f, "grid has zero rows or columns"),
            Violation::NoCells => write!(f, "table has no cells"),
            Violation::TableBBox => write!(f, "table bbox is non-finite or has no area"),
            Violation::CellBBox { cell } => {
                write!(f, "cell {cell}: bbox is non-finite or has no area")
            }
            Violation::DuplicateId { cell } => write!(f, "cell id {cell} is duplicated"),
            Violation::SpanOrder { cell } => write!(f, "cell {cell}: span start after end"),
            Violation::OutOfGrid { cell } => write!(f, "cell {cell}: span outside the grid"),
            Violation::OutsideTable { cell } => {
                write!(f, "cell {cell}: bbox outside the table bbox")
            }
            Violation::Overlap { a, b } => write!(f, "cells {a} and {b} overlap"),
            Violation::EmptyText { cell } => {
                write!(f, "cell {cell}: empty text without placeholder flag")
            }
            Violation::ImageRange => write!(f, "image values outside [0, 1]"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every table invariant. Violations are data; this never fails.
pub fn validate_table(t: &TableInstance) -> ValidationReport {
    let mut violations = Vec::new();
    if t.n_rows == 0 || t.n_cols == 0 {
        violations.push(Violation::EmptyGrid);
    }
    if t.cells.is_empty() {
        violations.push(Violation::NoCells);
    }
    let table_ok = t.table_bbox.is_finite() && t.table_bbox.has_positive_area();
    if !table_ok {
        violations.push(Violation::TableBBox);
    }
    if !t.image.in_unit_range() {
        violations.push(Violation::ImageRange);
    }

    let mut seen: HashMap<CellId, usize> = HashMap::new();
    for c in &t.cells {
        let n = seen.entry(c.id).or_insert(0);
        *n += 1;
        if *n == 2 {
            violations.push(Violation::DuplicateId { cell: c.id });
        }
    }

    for c in &t.cells {
        let bbox_ok = c.bbox.is_finite() && c.bbox.has_positive_area();
        if !bbox_ok {
            violations.push(Violation::CellBBox { cell: c.id });
        } else if table_ok && !t.table_bbox.contains(&c.bbox) {
            violations.push(Violation::OutsideTable { cell: c.id });
        }
        if c.row.start > c.row.end || c.col.start > c.col.end {
            violations.push(Violation::SpanOrder { cell: c.id });
        } else if c.row.end >= t.n_rows || c.col.end >= t.n_cols {
            violations.push(Violation::OutOfGrid { cell: c.id });
        }
        if c.text.is_empty() && !c.placeholder {
            violations.push(Violation::EmptyText { cell: c.id });
        }
    }

    for (i, a) in t.cells.iter().enumerate() {
        for b in &t.cells[i + 1..] {
            if a.row.intersects(&b.row) && a.col.intersects(&b.col) {
                violations.push(Violation::Overlap { a: a.id, b: b.id });
            }
        }
    }

    ValidationReport { violations }
}

/// `(same_row, same_col)` for two distinct cells of one table.
pub fn ground_truth_relation(a: &Cell, b: &Cell) -> Result<(bool, bool)> {
    if a.id == b.id {
        return Err(Error::Usage(format!(
            "relation of cell {} with itself is undefined",
            a.id
        )));
    }
    Ok((a.row.intersects(&b.row), a.col.intersects(&b.col)))
}

/// Small hand-built tables shared by tests, examples, and the demo.
pub mod fixtures {
    use super::*;

    /// The nine-cell financial table used throughout the tests: a two-row
    /// "Company Name" header and a three-column "Gross Profit Margin(%)" header
    /// over three data rows (only the first data row's company is kept plus
    /// one figure so the table stays at nine cells).
    pub fn profit_table() -> TableInstance {
        // Layout (x in 0..400, y in 0..100, row height 20):
        // row 0:   Company Name (rows 0-1)   | Gross Profit Margin(%) (cols 1-3)
        // row 1:                             | Year 2017 | Year 2016 | Year 2015
        // row 2:   Hubei Yihua               | 0.79
        // row 3:   Hualu Hengsheng
        let cells = vec![
            cell(0, "Company Name", [5.0, 15.0, 95.0, 25.0], (0, 1), (0, 0)),
            cell(1, "Gross Profit Margin(%)", [150.0, 5.0, 350.0, 15.0], (0, 0), (1, 3)),
            cell(2, "Year 2017", [105.0, 25.0, 195.0, 35.0], (1, 1), (1, 1)),
            cell(3, "Year 2016", [205.0, 25.0, 295.0, 35.0], (1, 1), (2, 2)),
            cell(4, "Year 2015", [305.0, 25.0, 395.0, 35.0], (1, 1), (3, 3)),
            cell(5, "Hubei Yihua", [5.0, 45.0, 95.0, 55.0], (2, 2), (0, 0)),
            cell(6, "0.79", [165.0, 45.0, 195.0, 55.0], (2, 2), (1, 1)),
            cell(7, "20.18", [255.0, 45.0, 295.0, 55.0], (2, 2), (2, 2)),
            cell(8, "Hualu Hengsheng", [5.0, 65.0, 95.0, 75.0], (3, 3), (0, 0)),
        ];
        TableInstance {
            source_id: "profit".into(),
            cells,
            image: Grayscale2D::filled(400, 100, 1.0),
            table_bbox: BBox::new(0.0, 0.0, 400.0, 100.0),
            n_rows: 4,
            n_cols: 4,
            unit: None,
        }
    }

    pub fn cell(id: CellId, text: &str, b: [f64; 4], r: (u32, u32), c: (u32, u32)) -> Cell {
        Cell::new(id, text, b.into(), Span::new(r.0, r.1), Span::new(c.0, c.1))
    }
}
