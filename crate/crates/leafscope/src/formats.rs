//! Persistent document formats: manifest, augmentation log and the CSV
//! tables emitted by the report stage.

use std::path::Path;

use leafscope_core::augment::AugmentRecord;
use leafscope_core::dataset::{DatasetManifest, SplitAssignment};
use leafscope_core::metrics::{ConfusionMatrix, INTERNAL_ORIENTATION, PAPER_ORIENTATION};
use leafscope_core::trainer::EpochRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::report::ComparisonRow;
use crate::{io, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// `manifest.json`: the scanned corpus with its split applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub version: u32,
    pub manifest: DatasetManifest,
    pub split: SplitAssignment,
}

impl ManifestFile {
    pub fn new(mut manifest: DatasetManifest, split: SplitAssignment) -> Result<Self> {
        manifest.apply_split(&split)?;
        Ok(Self {
            version: MANIFEST_VERSION,
            manifest,
            split,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::input(format!("unsupported manifest version {}", self.version)));
        }
        self.manifest.validate()?;
        let mut check = self.manifest.clone();
        check.apply_split(&self.split)?;
        if check != self.manifest {
            return Err(Error::input("manifest sample splits disagree with the split assignment"));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = io::read_json(path)?;
        m.validate().map_err(|e| Error::format(path, e))?;
        Ok(m)
    }
}

/// `augment_log.json`: the parameters of every materialized augmented copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentLog {
    pub seed: u64,
    pub multiplier: usize,
    pub records: Vec<AugmentRecord>,
}

/// Axis convention of a confusion-matrix table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Rows are true classes.
    Internal,
    /// Rows are predicted classes, as in the published figures.
    Paper,
}

impl Orientation {
    pub fn note(self) -> &'static str {
        match self {
            Orientation::Internal => INTERNAL_ORIENTATION,
            Orientation::Paper => PAPER_ORIENTATION,
        }
    }

    pub fn from_note(note: &str) -> Option<Self> {
        match note {
            INTERNAL_ORIENTATION => Some(Orientation::Internal),
            PAPER_ORIENTATION => Some(Orientation::Paper),
            _ => None,
        }
    }

    /// `(row axis, column axis)` titles.
    pub fn axis_titles(self) -> (&'static str, &'static str) {
        match self {
            Orientation::Internal => ("true", "predicted"),
            Orientation::Paper => ("predicted", "true"),
        }
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV output is UTF-8")
}

fn csv_err(e: csv::Error) -> Error {
    Error::input(format!("malformed CSV: {e}"))
}

fn emit_records<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv_writer();
    for r in rows {
        w.serialize(r).expect("in-memory CSV record");
    }
    finish(w)
}

fn parse_records<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// One row per epoch record, full precision.
pub fn emit_history_csv(records: &[EpochRecord]) -> String {
    emit_records(records)
}

pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>> {
    parse_records(text)
}

pub fn emit_comparison_csv(rows: &[ComparisonRow]) -> String {
    emit_records(rows)
}

pub fn parse_comparison_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    parse_records(text)
}

/// Square grid with a header row and column of class names. The corner cell
/// carries the orientation note.
pub fn emit_confusion_csv(matrix: &ConfusionMatrix, class_names: &[String], orientation: Orientation) -> String {
    let shown = match orientation {
        Orientation::Internal => matrix.clone(),
        Orientation::Paper => matrix.transposed(),
    };
    let mut w = csv_writer();
    let mut header = vec![orientation.note().to_string()];
    header.extend(class_names.iter().cloned());
    w.write_record(&header).expect("in-memory CSV record");
    for (name, row) in class_names.iter().zip(shown.rows()) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).expect("in-memory CSV record");
    }
    finish(w)
}

/// Raw labelled grid: corner cell, column names and count rows.
fn parse_grid(text: &str) -> Result<(String, Vec<String>, Vec<Vec<u64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::input("confusion CSV is empty"))?
        .map_err(csv_err)?;
    let corner = header.get(0).unwrap_or_default().to_string();
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut rows = Vec::with_capacity(names.len());
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        let label = rec.get(0).unwrap_or_default();
        if names.get(i).map(String::as_str) != Some(label) {
            return Err(Error::input(format!(
                "row {} is labelled {label:?}; row labels must repeat the header order",
                i + 1
            )));
        }
        let counts = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.parse::<u64>()
                    .map_err(|_| Error::input(format!("row {label:?}: {c:?} is not a count")))
            })
            .collect::<Result<Vec<u64>>>()?;
        rows.push(counts);
    }
    if rows.len() != names.len() {
        return Err(Error::input(format!(
            "{} class columns but {} rows",
            names.len(),
            rows.len()
        )));
    }
    Ok((corner, names, rows))
}

fn oriented(rows: &[Vec<u64>], orientation: Orientation) -> Result<ConfusionMatrix> {
    Ok(match orientation {
        Orientation::Internal => ConfusionMatrix::from_true_rows(rows)?,
        Orientation::Paper => ConfusionMatrix::from_predicted_rows(rows)?,
    })
}

/// Parses a table written by [`emit_confusion_csv`]; the result is always in
/// the internal orientation.
pub fn parse_confusion_csv(text: &str) -> Result<(Vec<String>, ConfusionMatrix)> {
    let (corner, names, rows) = parse_grid(text)?;
    let orientation = Orientation::from_note(&corner)
        .ok_or_else(|| Error::input(format!("corner cell {corner:?} is not an orientation note")))?;
    Ok((names, oriented(&rows, orientation)?))
}

/// Imports an external matrix table. Rows are true classes unless
/// `transpose_paper` is set, in which case rows are predicted classes. A
/// recognised orientation note in the corner must agree with the flag.
pub fn import_confusion_csv(text: &str, transpose_paper: bool) -> Result<(Vec<String>, ConfusionMatrix)> {
    let (corner, names, rows) = parse_grid(text)?;
    let requested = if transpose_paper {
        Orientation::Paper
    } else {
        Orientation::Internal
    };
    if let Some(declared) = Orientation::from_note(&corner) {
        if declared != requested {
            return Err(Error::input(format!(
                "table declares {:?} but the import requested {:?}",
                declared.note(),
                requested.note()
            )));
        }
    }
    Ok((names, oriented(&rows, requested)?))
}
