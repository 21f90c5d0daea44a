//! On-disk dataset format, loading, and sample filtering.
//!
//! A dataset directory holds `manifest.json`, one `tables/<id>.json` per
//! table and one `images/<id>.pgm` per table image.

mod generate;
pub mod pgm;
pub mod scitsr;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use generate::{generate_tables, rasterize, Alignment, AlignmentMix, GenSpec};

use crate::error::{Error, Result};
use crate::raster::Grayscale2D;
use crate::table::{validate_table, BBox, Cell, TableInstance, Violation};

pub const FORMAT_VERSION: u32 = 1;

/// JSON form of a table, without its image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRecord {
    pub format_version: u32,
    pub source_id: String,
    pub n_rows: u32,
    pub n_cols: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub table_bbox: BBox,
    pub cells: Vec<Cell>,
}

impl TableRecord {
    pub fn from_table(t: &TableInstance) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            source_id: t.source_id.clone(),
            n_rows: t.n_rows,
            n_cols: t.n_cols,
            unit: t.unit.clone(),
            table_bbox: t.table_bbox,
            cells: t.cells.clone(),
        }
    }

    pub fn into_table(self, image: Grayscale2D) -> TableInstance {
        TableInstance {
            source_id: self.source_id,
            cells: self.cells,
            image,
            table_bbox: self.table_bbox,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            unit: self.unit,
        }
    }
}

pub fn read_record(path: &Path) -> Result<TableRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rec: TableRecord =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    if rec.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            path.display().to_string(),
            format!("unsupported format_version {}", rec.format_version),
        ));
    }
    Ok(rec)
}

/// The table bbox must fit inside the image it annotates.
fn check_image_consistency(t: &TableInstance) -> Result<()> {
    let (w, h) = (t.image.width() as f64, t.image.height() as f64);
    let b = &t.table_bbox;
    if t.image.is_empty() || b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > w || b.y1 > h {
        return Err(Error::Consistency(format!(
            "table {}: bbox [{}, {}, {}, {}] does not fit the {}x{} image",
            t.source_id, b.x0, b.y0, b.x1, b.y1, w, h
        )));
    }
    Ok(())
}

/// Loads one table plus its image and checks every invariant.
pub fn load_table(json_path: &Path, image_path: &Path) -> Result<TableInstance> {
    let rec = read_record(json_path)?;
    let image = pgm::read(image_path)?;
    let t = rec.into_table(image);
    check_image_consistency(&t)?;
    let report = validate_table(&t);
    if !report.is_valid() {
        return Err(Error::Validation {
            source_id: t.source_id,
            violations: report.violations,
        });
    }
    Ok(t)
}

pub fn save_table(t: &TableInstance, json_path: &Path, image_path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&TableRecord::from_table(t))
        .map_err(|e| Error::parse("table record", e))?;
    std::fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path, e))?;
    pgm::write(image_path, &t.image)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub table: String,
    pub image: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub tables: usize,
    pub cells: usize,
    pub merged_cells: usize,
    /// Tables containing at least one merged cell.
    pub merged_tables: usize,
}

impl DatasetStats {
    fn add(&mut self, cells: &[Cell]) {
        let merged = cells.iter().filter(|c| c.is_merged()).count();
        self.tables += 1;
        self.cells += cells.len();
        self.merged_cells += merged;
        self.merged_tables += usize::from(merged > 0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Fingerprint of the configuration that produced the dataset, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub entries: Vec<ManifestEntry>,
    pub stats: DatasetStats,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            fingerprint: None,
            entries: Vec::new(),
            stats: DatasetStats::default(),
            root: root.into(),
        }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Reads `manifest.json` without checking the referenced files.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                path.display().to_string(),
                format!("unsupported format_version {}", m.format_version),
            ));
        }
        m.root = dir.to_path_buf();
        Ok(m)
    }

    /// Recomputes stats from the table files.
    pub fn recount(&self) -> Result<DatasetStats> {
        let mut stats = DatasetStats::default();
        for e in &self.entries {
            stats.add(&read_record(&self.resolve(&e.table))?.cells);
        }
        Ok(stats)
    }

    pub fn write(&self) -> Result<()> {
        let path = self.root.join("manifest.json");
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::parse("manifest", e))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Reads a manifest and verifies that every file exists and that the stored
/// stats match a recount.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::read(dir)?;
    for e in &m.entries {
        for rel in [&e.table, &e.image] {
            let p = m.resolve(rel);
            if !p.is_file() {
                return Err(Error::Consistency(format!(
                    "manifest references missing file {}",
                    p.display()
                )));
            }
        }
    }
    let stats = m.recount()?;
    if stats != m.stats {
        return Err(Error::Consistency(format!(
            "manifest stats {:?} differ from recount {:?}",
            m.stats, stats
        )));
    }
    Ok(m)
}

/// File stem used for a table inside a dataset directory.
pub fn file_stem(source_id: &str) -> String {
    source_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes tables (JSON + PGM) and the manifest into `dir`.
pub fn write_dataset(
    dir: &Path,
    tables: &[TableInstance],
    fingerprint: Option<String>,
) -> Result<DatasetManifest> {
    for sub in ["tables", "images"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut m = DatasetManifest::empty(dir);
    m.fingerprint = fingerprint;
    for t in tables {
        let stem = file_stem(&t.source_id);
        let entry = ManifestEntry {
            table: format!("tables/{stem}.json"),
            image: format!("images/{stem}.pgm"),
        };
        save_table(t, &m.resolve(&entry.table), &m.resolve(&entry.image))?;
        m.stats.add(&t.cells);
        m.entries.push(entry);
    }
    m.write()?;
    Ok(m)
}

/// Why a manifest entry was rejected by [`filter_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum RejectReason {
    /// Table invariant violations (other than the specific checks below).
    F1 { violations: Vec<Violation> },
    /// A cell bbox with non-positive area (or non-finite coordinates).
    F2,
    /// Duplicate cell ids.
    F3,
    /// Fewer than two cells, so no edge exists.
    F4,
    /// A zero grid dimension.
    F5,
    /// The entry could not be read or parsed.
    Io { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub entry: ManifestEntry,
    pub reasons: Vec<RejectReason>,
}

fn classify(t: &TableInstance) -> Vec<RejectReason> {
    let mut general = Vec::new();
    let (mut f2, mut f3, mut f5) = (false, false, false);
    for v in validate_table(t).violations {
        match v {
            Violation::CellBBox { .. } => f2 = true,
            Violation::DuplicateId { .. } => f3 = true,
            Violation::EmptyGrid => f5 = true,
            Violation::NoCells => {}
            other => general.push(other),
        }
    }
    if let Err(Error::Consistency(_)) = check_image_consistency(t) {
        general.push(Violation::TableBBox);
    }
    let mut reasons = Vec::new();
    if !general.is_empty() {
        reasons.push(RejectReason::F1 {
            violations: general,
        });
    }
    if f2 {
        reasons.push(RejectReason::F2);
    }
    if f3 {
        reasons.push(RejectReason::F3);
    }
    if t.cells.len() < 2 {
        reasons.push(RejectReason::F4);
    }
    if f5 {
        reasons.push(RejectReason::F5);
    }
    reasons
}

/// Splits a manifest into accepted entries and rejected ones with reasons.
/// Unreadable entries are rejected; the batch never aborts.
pub fn filter_dataset(manifest: &DatasetManifest) -> (DatasetManifest, Vec<Rejection>) {
    let mut accepted = DatasetManifest::empty(&manifest.root);
    accepted.fingerprint = manifest.fingerprint.clone();
    let mut rejected = Vec::new();
    for e in &manifest.entries {
        let loaded = read_record(&manifest.resolve(&e.table)).and_then(|rec| {
            let img = pgm::read(&manifest.resolve(&e.image))?;
            Ok(rec.into_table(img))
        });
        let reasons = match &loaded {
            Ok(t) => classify(t),
            Err(err) => vec![RejectReason::Io {
                message: err.to_string(),
            }],
        };
        match (loaded, reasons.is_empty()) {
            (Ok(t), true) => {
                accepted.stats.add(&t.cells);
                accepted.entries.push(e.clone());
            }
            _ => rejected.push(Rejection {
                entry: e.clone(),
                reasons,
            }),
        }
    }
    (accepted, rejected)
}

/// Opens a dataset directory, filters it and loads every accepted table.
pub fn load_dataset(dir: &Path) -> Result<(Vec<TableInstance>, Vec<Rejection>)> {
    let manifest = DatasetManifest::read(dir)?;
    let (accepted, rejected) = filter_dataset(&manifest);
    let tables = accepted
        .entries
        .iter()
        .map(|e| load_table(&accepted.resolve(&e.table), &accepted.resolve(&e.image)))
        .collect::<Result<Vec<_>>>()?;
    Ok((tables, rejected))
}
