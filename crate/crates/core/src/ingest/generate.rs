//! Synthetic table generator with pseudo-glyph rasterization.
//!
//! Tables are laid out on a pixel grid. Each character is a dark
//! `GLYPH_W x GLYPH_H` block followed by a one-pixel gap, so a text box is
//! `5 * len` pixels wide and `GLYPH_H` tall. The first column holds long
//! left-aligned labels; the remaining columns draw an alignment from the mix
//! and a column-specific character subset and length, so text carries column
//! identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grayscale2D;
use crate::rng::Stream;
use crate::table::{BBox, Cell, Span, TableInstance};

const GLYPH_W: usize = 4;
const GLYPH_H: usize = 7;
const ADVANCE: usize = GLYPH_W + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Left,
    Right,
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentMix {
    pub left: f64,
    pub right: f64,
    pub center: f64,
}

impl Default for AlignmentMix {
    fn default() -> Self {
        Self {
            left: 0.2,
            right: 0.6,
            center: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub n_tables: usize,
    /// Inclusive `[min, max]` row count.
    pub rows_range: [usize; 2],
    /// Inclusive `[min, max]` column count.
    pub cols_range: [usize; 2],
    pub merge_probability: f64,
    pub dropped_line_probability: f64,
    pub alignment_mix: AlignmentMix,
    pub seed: u64,
    pub text_alphabet: String,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_tables: 100,
            rows_range: [3, 10],
            cols_range: [2, 6],
            merge_probability: 0.35,
            dropped_line_probability: 0.1,
            alignment_mix: AlignmentMix::default(),
            seed: 1,
            text_alphabet: "0123456789.,-%ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
                .into(),
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_tables == 0 {
            return bad("n_tables must be positive".into());
        }
        for (name, r) in [("rows_range", self.rows_range), ("cols_range", self.cols_range)] {
            if r[0] == 0 || r[0] > r[1] {
                return bad(format!("{name} {r:?} is empty or starts at zero"));
            }
        }
        if self.rows_range[1] * self.cols_range[1] < 2 {
            return bad("tables need room for at least two cells".into());
        }
        for (name, p) in [
            ("merge_probability", self.merge_probability),
            ("dropped_line_probability", self.dropped_line_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} is outside [0, 1]"));
            }
        }
        let m = &self.alignment_mix;
        let weights = [m.left, m.right, m.center];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0
        {
            return bad("alignment_mix needs non-negative weights with a positive sum".into());
        }
        if self.text_alphabet.chars().filter(|c| !c.is_whitespace()).count() < 2 {
            return bad("text_alphabet needs at least two visible characters".into());
        }
        Ok(())
    }
}

struct ColumnStyle {
    align: Alignment,
    chars: Vec<char>,
    len: (usize, usize),
}

struct Block {
    row: Span,
    col: Span,
}

/// Generates `spec.n_tables` tables. Output depends on the spec alone.
pub fn generate_tables(spec: &GenSpec) -> Result<Vec<TableInstance>> {
    spec.validate()?;
    (0..spec.n_tables)
        .map(|i| generate_one(spec, i))
        .collect()
}

fn generate_one(spec: &GenSpec, index: usize) -> Result<TableInstance> {
    let mut rng = Stream::derive(spec.seed, "gen", index as u64);
    let alphabet: Vec<char> = spec
        .text_alphabet
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    let letters: Vec<char> = alphabet
        .iter()
        .copied()
        .filter(|c| c.is_alphabetic())
        .collect();
    let label_chars = if letters.len() >= 2 { letters } else { alphabet.clone() };

    let n_rows = rng.range_inclusive(spec.rows_range[0], spec.rows_range[1]);
    let mut n_cols = rng.range_inclusive(spec.cols_range[0], spec.cols_range[1]);
    if n_rows * n_cols < 2 {
        n_cols = 2.min(spec.cols_range[1]).max(n_cols);
    }
    let n_rows = if n_rows * n_cols < 2 { 2 } else { n_rows };

    let mix = spec.alignment_mix;
    let styles: Vec<ColumnStyle> = (0..n_cols)
        .map(|c| {
            if c == 0 {
                ColumnStyle {
                    align: Alignment::Left,
                    chars: label_chars.clone(),
                    len: (8, 18),
                }
            } else {
                let align = match rng.categorical(&[mix.left, mix.right, mix.center]) {
                    0 => Alignment::Left,
                    1 => Alignment::Right,
                    _ => Alignment::Center,
                };
                let mut pool = alphabet.clone();
                rng.shuffle(&mut pool);
                let k = 3.min(pool.len());
                let lo = rng.range_inclusive(2, 6);
                ColumnStyle {
                    align,
                    chars: pool[..k].to_vec(),
                    len: (lo, lo + rng.below(2)),
                }
            }
        })
        .collect();

    let blocks = place_merges(&mut rng, n_rows, n_cols, spec.merge_probability);

    let texts: Vec<String> = blocks
        .iter()
        .map(|b| {
            let style = &styles[b.col.start as usize];
            let len = rng.range_inclusive(style.len.0, style.len.1);
            let mut s: String = (0..len)
                .map(|_| style.chars[rng.below(style.chars.len())])
                .collect();
            // occasional word break inside long labels
            if b.col.start == 0 && len > 10 && rng.bernoulli(0.5) {
                let at = rng.range_inclusive(3, len - 4);
                s.replace_range(at..at + 1, " ");
            }
            s
        })
        .collect();

    let pad_x = rng.range_inclusive(4, 10);
    let pad_y = rng.range_inclusive(3, 8);
    let row_h = GLYPH_H + 2 * pad_y + 1;

    // column widths from unit-width blocks first, then widen for merged ones
    let mut col_w = vec![0usize; n_cols];
    for (b, t) in blocks.iter().zip(&texts) {
        if b.col.is_unit() {
            let c = b.col.start as usize;
            col_w[c] = col_w[c].max(text_width(t) + 2 * pad_x + 1);
        }
    }
    for w in col_w.iter_mut() {
        *w += rng.below(3 * pad_x + 1);
    }
    for (b, t) in blocks.iter().zip(&texts) {
        if !b.col.is_unit() {
            let (s, e) = (b.col.start as usize, b.col.end as usize);
            let need = text_width(t) + 2 * pad_x + 1;
            let have: usize = col_w[s..=e].iter().sum();
            if need > have {
                col_w[e] += need - have;
            }
        }
    }

    // grid line coordinates: xs[j] is the pixel column of boundary j
    let mut xs = vec![0usize];
    for w in &col_w {
        xs.push(xs.last().unwrap() + w);
    }
    let ys: Vec<usize> = (0..=n_rows).map(|r| r * row_h).collect();
    let width = xs[n_cols] + 1;
    let height = ys[n_rows] + 1;

    let cells = blocks
        .iter()
        .zip(texts)
        .enumerate()
        .map(|(id, (b, text))| {
            let left = xs[b.col.start as usize] + pad_x + 1;
            let right = xs[b.col.end as usize + 1] - pad_x;
            let tw = text_width(&text);
            let align = if b.col.is_unit() {
                styles[b.col.start as usize].align
            } else {
                Alignment::Center
            };
            let x0 = match align {
                Alignment::Left => left,
                Alignment::Right => right - tw,
                Alignment::Center => (left + right - tw) / 2,
            };
            let top = ys[b.row.start as usize];
            let bottom = ys[b.row.end as usize + 1];
            let y0 = (top + bottom + 1 - GLYPH_H) / 2;
            let bbox = BBox::new(
                x0 as f64,
                y0 as f64,
                (x0 + tw) as f64,
                (y0 + GLYPH_H) as f64,
            );
            Cell::new(id as u32, text, bbox, b.row, b.col)
        })
        .collect();

    let unit = match rng.below(4) {
        0 => None,
        1 => Some("万元".to_string()),
        2 => Some("元".to_string()),
        _ => Some("%".to_string()),
    };

    let mut t = TableInstance {
        source_id: format!("syn-{:06}", index),
        cells,
        image: Grayscale2D::filled(1, 1, 1.0),
        table_bbox: BBox::new(0.0, 0.0, width as f64, height as f64),
        n_rows: n_rows as u32,
        n_cols: n_cols as u32,
        unit,
    };
    t.image = rasterize(&t, spec)?;
    Ok(t)
}

fn text_width(s: &str) -> usize {
    s.chars().count() * ADVANCE
}

/// Partitions the grid into blocks; with probability `p` the table receives
/// one to three merged rectangles. Every row and column keeps at least one
/// 1x1 cell. Blocks come back in row-major order of their top-left slot.
fn place_merges(rng: &mut Stream, n_rows: usize, n_cols: usize, p: f64) -> Vec<Block> {
    let mut owner: Vec<Option<usize>> = vec![None; n_rows * n_cols];
    let mut merges: Vec<(usize, usize, usize, usize)> = Vec::new();
    if rng.bernoulli(p) {
        let wanted = rng.range_inclusive(1, 3);
        let mut attempts = 0;
        while merges.len() < wanted && attempts < 40 {
            attempts += 1;
            let h = rng.range_inclusive(1, 3.min(n_rows));
            let w = rng.range_inclusive(1, 3.min(n_cols));
            if h * w < 2 {
                continue;
            }
            let r0 = rng.below(n_rows - h + 1);
            let c0 = rng.below(n_cols - w + 1);
            let free = (r0..r0 + h).all(|r| (c0..c0 + w).all(|c| owner[r * n_cols + c].is_none()));
            if !free {
                continue;
            }
            let id = merges.len();
            for r in r0..r0 + h {
                for c in c0..c0 + w {
                    owner[r * n_cols + c] = Some(id);
                }
            }
            let row_ok = (0..n_rows).all(|r| (0..n_cols).any(|c| owner[r * n_cols + c].is_none()));
            let col_ok = (0..n_cols).all(|c| (0..n_rows).any(|r| owner[r * n_cols + c].is_none()));
            if row_ok && col_ok {
                merges.push((r0, c0, h, w));
            } else {
                for r in r0..r0 + h {
                    for c in c0..c0 + w {
                        owner[r * n_cols + c] = None;
                    }
                }
            }
        }
    }
    let mut blocks = Vec::new();
    for r in 0..n_rows {
        for c in 0..n_cols {
            match owner[r * n_cols + c] {
                None => blocks.push(Block {
                    row: Span::unit(r as u32),
                    col: Span::unit(c as u32),
                }),
                Some(m) => {
                    let (r0, c0, h, w) = merges[m];
                    if r == r0 && c == c0 {
                        blocks.push(Block {
                            row: Span::new(r0 as u32, (r0 + h - 1) as u32),
                            col: Span::new(c0 as u32, (c0 + w - 1) as u32),
                        });
                    }
                }
            }
        }
    }
    blocks
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Estimated pixel coordinate of each grid boundary along one axis. Interior
/// boundary `i` sits halfway between the far edge of cells ending at `i - 1`
/// and the near edge of cells starting at `i`; it is `None` when either side
/// has no such cell.
fn boundaries(
    t: &TableInstance,
    n: u32,
    lo: f64,
    hi: f64,
    axis: impl Fn(&Cell) -> (Span, f64, f64),
) -> Vec<Option<usize>> {
    let mut out = vec![None; n as usize + 1];
    out[0] = Some(lo.floor().max(0.0) as usize);
    out[n as usize] = Some((hi.ceil() as usize).saturating_sub(1));
    for i in 1..n {
        let mut before = f64::NEG_INFINITY;
        let mut after = f64::INFINITY;
        for c in &t.cells {
            let (span, a, b) = axis(c);
            if span.end + 1 == i {
                before = before.max(b);
            }
            if span.start == i {
                after = after.min(a);
            }
        }
        if before.is_finite() && after.is_finite() {
            out[i as usize] = Some(((before + after) / 2.0).floor().max(0.0) as usize);
        }
    }
    out
}

/// Renders rule lines and pseudo-glyph text for a table. Interior grid lines
/// are dropped independently with `spec.dropped_line_probability`; the
/// border is always drawn.
pub fn rasterize(t: &TableInstance, spec: &GenSpec) -> Result<Grayscale2D> {
    let tb = t.table_bbox;
    if !(tb.is_finite() && tb.has_positive_area()) || tb.x1 < 1.0 || tb.y1 < 1.0 {
        return Err(Error::Consistency(format!(
            "table {} has a zero-area bbox",
            t.source_id
        )));
    }
    let width = tb.x1.ceil() as usize;
    let height = tb.y1.ceil() as usize;
    let mut img = Grayscale2D::filled(width, height, 1.0);
    let mut rng = Stream::derive(spec.seed, "raster", fnv(&t.source_id));

    let xs = boundaries(t, t.n_cols, tb.x0, tb.x1, |c| (c.col, c.bbox.x0, c.bbox.x1));
    let ys = boundaries(t, t.n_rows, tb.y0, tb.y1, |c| (c.row, c.bbox.y0, c.bbox.y1));
    let (left, right) = (xs[0].unwrap(), xs[xs.len() - 1].unwrap());
    let (top, bottom) = (ys[0].unwrap(), ys[ys.len() - 1].unwrap());

    // vertical boundaries: a segment in row r is drawn unless a cell crosses it
    for (j, x) in xs.iter().enumerate() {
        let Some(x) = *x else { continue };
        let interior = j != 0 && j != xs.len() - 1;
        if interior && rng.bernoulli(spec.dropped_line_probability) {
            continue;
        }
        if !interior {
            img.fill_rect(x, top, x + 1, bottom + 1, 0.0);
            continue;
        }
        for r in 0..t.n_rows {
            let crossed = t.cells.iter().any(|c| {
                c.row.contains(r) && c.col.start < j as u32 && j as u32 <= c.col.end
            });
            if let (false, Some(y0), Some(y1)) = (crossed, ys[r as usize], ys[r as usize + 1]) {
                img.fill_rect(x, y0, x + 1, y1 + 1, 0.0);
            }
        }
    }
    for (i, y) in ys.iter().enumerate() {
        let Some(y) = *y else { continue };
        let interior = i != 0 && i != ys.len() - 1;
        if interior && rng.bernoulli(spec.dropped_line_probability) {
            continue;
        }
        if !interior {
            img.fill_rect(left, y, right + 1, y + 1, 0.0);
            continue;
        }
        for c in 0..t.n_cols {
            let crossed = t.cells.iter().any(|cell| {
                cell.col.contains(c) && cell.row.start < i as u32 && i as u32 <= cell.row.end
            });
            if let (false, Some(x0), Some(x1)) = (crossed, xs[c as usize], xs[c as usize + 1]) {
                img.fill_rect(x0, y, x1 + 1, y + 1, 0.0);
            }
        }
    }

    for c in &t.cells {
        let n = c.text.chars().count();
        if n == 0 {
            continue;
        }
        let b = c.bbox;
        let advance = b.width() / n as f64;
        let glyph_w = (advance - 1.0).max(1.0);
        for (k, ch) in c.text.chars().enumerate() {
            if ch.is_whitespace() {
                continue;
            }
            let gx0 = (b.x0 + advance * k as f64).round() as usize;
            let gx1 = (b.x0 + advance * k as f64 + glyph_w).round() as usize;
            img.fill_rect(
                gx0,
                b.y0.round() as usize,
                gx1.max(gx0 + 1),
                b.y1.round() as usize,
                0.0,
            );
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::validate_table;

    fn small(n: usize, seed: u64) -> GenSpec {
        GenSpec {
            n_tables: n,
            seed,
            ..GenSpec::default()
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate_tables(&small(20, 1)).unwrap();
        let b = generate_tables(&small(20, 1)).unwrap();
        assert_eq!(a, b);
        let c = generate_tables(&small(20, 2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn output_is_valid_with_unit_cells_everywhere() {
        for t in generate_tables(&small(200, 5)).unwrap() {
            let r = validate_table(&t);
            assert!(r.is_valid(), "{}: {:?}", t.source_id, r.violations);
            assert!(t.cells.len() >= 2);
            for r in 0..t.n_rows {
                assert!(t
                    .cells
                    .iter()
                    .any(|c| c.row == Span::unit(r) && c.col.is_unit()));
            }
            for c in 0..t.n_cols {
                assert!(t
                    .cells
                    .iter()
                    .any(|x| x.col == Span::unit(c) && x.row.is_unit()));
            }
            // full occupancy
            let area: u32 = t.cells.iter().map(|c| c.row.len() * c.col.len()).sum();
            assert_eq!(area, t.n_rows * t.n_cols);
            assert_eq!(t.image.width() as f64, t.table_bbox.x1);
        }
    }

    #[test]
    fn no_merges_at_zero_probability() {
        let spec = GenSpec {
            merge_probability: 0.0,
            ..small(100, 3)
        };
        let merged: usize = generate_tables(&spec)
            .unwrap()
            .iter()
            .map(|t| t.merged_cell_count())
            .sum();
        assert_eq!(merged, 0);
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut s = small(1, 1);
        s.rows_range = [4, 2];
        assert!(matches!(generate_tables(&s), Err(Error::Config(_))));
        let mut s = small(1, 1);
        s.merge_probability = 1.5;
        assert!(generate_tables(&s).is_err());
        let mut s = small(1, 1);
        s.rows_range = [1, 1];
        s.cols_range = [1, 1];
        assert!(generate_tables(&s).is_err());
    }

    fn grid_table(rows: u32, cols: u32) -> TableInstance {
        let mut cells = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let x = 20.0 * c as f64 + 5.0;
                let y = 20.0 * r as f64 + 6.0;
                cells.push(Cell::new(
                    r * cols + c,
                    "ab",
                    BBox::new(x, y, x + 10.0, y + 7.0),
                    Span::unit(r),
                    Span::unit(c),
                ));
            }
        }
        TableInstance {
            source_id: "grid".into(),
            cells,
            image: Grayscale2D::filled(1, 1, 1.0),
            table_bbox: BBox::new(0.0, 0.0, 20.0 * cols as f64 + 1.0, 20.0 * rows as f64 + 1.0),
            n_rows: rows,
            n_cols: cols,
            unit: None,
        }
    }

    fn spec_with_drop(p: f64) -> GenSpec {
        GenSpec {
            dropped_line_probability: p,
            ..GenSpec::default()
        }
    }

    /// Rows whose pixels are all dark, and likewise columns.
    fn full_lines(img: &Grayscale2D) -> (Vec<usize>, Vec<usize>) {
        let rows = (0..img.height())
            .filter(|&y| (0..img.width()).all(|x| img.get(x, y) == 0.0))
            .collect();
        let cols = (0..img.width())
            .filter(|&x| (0..img.height()).all(|y| img.get(x, y) == 0.0))
            .collect();
        (rows, cols)
    }

    #[test]
    fn single_cell_has_dark_border_light_interior() {
        let t = grid_table(1, 1);
        let img = rasterize(&t, &spec_with_drop(0.0)).unwrap();
        let (w, h) = (img.width(), img.height());
        for x in 0..w {
            assert_eq!(img.get(x, 0), 0.0);
            assert_eq!(img.get(x, h - 1), 0.0);
        }
        for y in 0..h {
            assert_eq!(img.get(0, y), 0.0);
            assert_eq!(img.get(w - 1, y), 0.0);
        }
        let interior: Vec<f32> = (1..h - 1)
            .flat_map(|y| (1..w - 1).map(move |x| (x, y)))
            .map(|(x, y)| img.get(x, y))
            .collect();
        let light = interior.iter().filter(|v| **v == 1.0).count();
        assert!(light * 2 > interior.len());
    }

    #[test]
    fn two_by_two_has_one_interior_line_per_axis() {
        let t = grid_table(2, 2);
        let img = rasterize(&t, &spec_with_drop(0.0)).unwrap();
        let (rows, cols) = full_lines(&img);
        // border + one interior each
        assert_eq!(rows, vec![0, 19, 40]);
        assert_eq!(cols, vec![0, 20, 40]);
    }

    #[test]
    fn drop_probability_one_keeps_only_the_border() {
        let t = grid_table(3, 3);
        let img = rasterize(&t, &spec_with_drop(1.0)).unwrap();
        let (rows, cols) = full_lines(&img);
        assert_eq!(rows, vec![0, 60]);
        assert_eq!(cols, vec![0, 60]);
    }

    #[test]
    fn zero_area_bbox_is_an_error() {
        let mut t = grid_table(1, 1);
        t.table_bbox = BBox::new(0.0, 0.0, 0.0, 10.0);
        assert!(rasterize(&t, &GenSpec::default()).is_err());
    }
}
