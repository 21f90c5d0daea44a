//! Adapter for SciTSR-style annotations.
//!
//! A SciTSR directory holds `structure/<id>.json` (logical cells with
//! `start_row`/`end_row`/`start_col`/`end_col` and a `content` word list),
//! `chunk/<id>.chunk` (text chunks with `pos: [x0, x1, y0, y1]` in PDF
//! points, y growing upward) and optionally `img/<id>.png`.
//!
//! Chunks are matched to cells by whitespace-free text containment; a cell's
//! box is the union of its chunks. Coordinates are flipped to a top-left
//! origin and rescaled so the union of all chunks fills the image. Cells that
//! no chunk matches carry no geometry and are dropped. Without an image the
//! table is rasterized from its cells.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{rasterize, GenSpec};
use crate::error::{Error, Result};
use crate::raster::Grayscale2D;
use crate::table::{validate_table, BBox, Cell, Span, TableInstance};

#[derive(Debug, Deserialize)]
struct Structure {
    cells: Vec<StructCell>,
}

#[derive(Debug, Deserialize)]
struct StructCell {
    id: u32,
    #[serde(default)]
    content: Vec<String>,
    start_row: u32,
    end_row: u32,
    start_col: u32,
    end_col: u32,
}

#[derive(Debug, Deserialize)]
struct Chunks {
    chunks: Vec<Chunk>,
}

#[derive(Debug, Deserialize)]
struct Chunk {
    pos: [f64; 4],
    text: String,
}

#[derive(Debug, Clone)]
pub struct ScitsrTable {
    pub id: String,
    pub table: TableInstance,
    /// Structure cells without any matching chunk.
    pub dropped_cells: Vec<u32>,
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

fn read_png(path: &Path) -> Result<Grayscale2D> {
    let img = image::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| f32::from(b) / 255.0).collect();
    Grayscale2D::new(w as usize, h as usize, data)
        .ok_or_else(|| Error::parse(path.display().to_string(), "bad image size"))
}

/// Loads one SciTSR table by id from `dir`.
pub fn load_scitsr_table(dir: &Path, id: &str) -> Result<ScitsrTable> {
    let structure: Structure = read_json(&dir.join("structure").join(format!("{id}.json")))?;
    let chunks: Chunks = read_json(&dir.join("chunk").join(format!("{id}.chunk")))?;
    let png = dir.join("img").join(format!("{id}.png"));
    let image = if png.is_file() { Some(read_png(&png)?) } else { None };
    convert(id, structure, chunks, image)
}

fn convert(
    id: &str,
    structure: Structure,
    chunks: Chunks,
    image: Option<Grayscale2D>,
) -> Result<ScitsrTable> {
    let ctx = || format!("scitsr table {id}");
    let boxes: Vec<BBox> = chunks
        .chunks
        .iter()
        .map(|c| {
            let [x0, x1, y0, y1] = c.pos;
            BBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
        })
        .collect();
    let Some(extent) = boxes.iter().copied().reduce(|a, b| a.union(&b)) else {
        return Err(Error::parse(ctx(), "no chunks"));
    };
    if !extent.has_positive_area() {
        return Err(Error::parse(ctx(), "chunks span no area"));
    }

    let contents: Vec<String> = structure
        .cells
        .iter()
        .map(|c| squash(&c.content.join("")))
        .collect();
    let mut assigned: BTreeMap<usize, BBox> = BTreeMap::new();
    for (chunk, b) in chunks.chunks.iter().zip(&boxes) {
        let key = squash(&chunk.text);
        if key.is_empty() {
            continue;
        }
        let candidates: Vec<usize> = (0..contents.len())
            .filter(|&i| contents[i].contains(&key))
            .collect();
        let pick = candidates
            .iter()
            .copied()
            .find(|i| !assigned.contains_key(i))
            .or_else(|| candidates.first().copied());
        if let Some(i) = pick {
            assigned
                .entry(i)
                .and_modify(|a| *a = a.union(b))
                .or_insert(*b);
        }
    }

    // flip y, then scale the chunk extent onto the image (or keep points)
    let margin = 2.0;
    let (w, h) = match &image {
        Some(img) => (img.width() as f64, img.height() as f64),
        None => (
            (extent.width() + 2.0 * margin).ceil(),
            (extent.height() + 2.0 * margin).ceil(),
        ),
    };
    let sx = (w - 2.0 * margin) / extent.width();
    let sy = (h - 2.0 * margin) / extent.height();
    let map = |b: &BBox| {
        BBox::new(
            margin + (b.x0 - extent.x0) * sx,
            margin + (extent.y1 - b.y1) * sy,
            margin + (b.x1 - extent.x0) * sx,
            margin + (extent.y1 - b.y0) * sy,
        )
    };

    let mut cells = Vec::new();
    let mut dropped = Vec::new();
    for (i, sc) in structure.cells.iter().enumerate() {
        match assigned.get(&i) {
            Some(b) => cells.push(Cell::new(
                sc.id,
                sc.content.join(" "),
                map(b),
                Span::new(sc.start_row, sc.end_row),
                Span::new(sc.start_col, sc.end_col),
            )),
            None => dropped.push(sc.id),
        }
    }
    let n_rows = structure.cells.iter().map(|c| c.end_row + 1).max().unwrap_or(0);
    let n_cols = structure.cells.iter().map(|c| c.end_col + 1).max().unwrap_or(0);

    let mut table = TableInstance {
        source_id: id.to_string(),
        cells,
        image: Grayscale2D::filled(1, 1, 1.0),
        table_bbox: BBox::new(0.0, 0.0, w, h),
        n_rows,
        n_cols,
        unit: None,
    };
    table.image = match image {
        Some(img) => img,
        None => rasterize(
            &table,
            &GenSpec {
                dropped_line_probability: 0.0,
                ..GenSpec::default()
            },
        )?,
    };
    let report = validate_table(&table);
    if !report.is_valid() {
        return Err(Error::Validation {
            source_id: id.to_string(),
            violations: report.violations,
        });
    }
    Ok(ScitsrTable {
        id: id.to_string(),
        table,
        dropped_cells: dropped,
    })
}

/// Whether `dir` looks like a SciTSR split (has a `structure/` directory).
pub fn is_scitsr_dir(dir: &Path) -> bool {
    dir.join("structure").is_dir()
}

/// Loads every table of a SciTSR split, sorted by id. Faulty tables are
/// returned separately with their error instead of aborting the batch.
pub fn load_scitsr_dir(dir: &Path) -> Result<(Vec<ScitsrTable>, Vec<(String, Error)>)> {
    let sdir = dir.join("structure");
    let mut ids: Vec<String> = std::fs::read_dir(&sdir)
        .map_err(|e| Error::io(&sdir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_owned))?
        })
        .collect();
    ids.sort();
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for id in ids {
        match load_scitsr_table(dir, &id) {
            Ok(t) if t.table.cells.len() >= 2 => ok.push(t),
            Ok(_) => bad.push((id, Error::Consistency("fewer than two usable cells".into()))),
            Err(e) => bad.push((id, e)),
        }
    }
    Ok((ok, bad))
}
