//! CSV reading and writing.

use std::path::Path;

use emm_core::data::{encode_table, FeatureSpec, TaskDataset};

use crate::census::Table;
use crate::error::{AppError, Result};

pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if header.iter().all(String::is_empty) {
        return Err(AppError::Data(format!("{}: empty file", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| AppError::Data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| AppError::Data(format!("{}: {e}", path.display()));
    w.write_record(&table.header).map_err(err)?;
    for r in &table.rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Reads a CSV file and encodes it with statistics fitted on its train split.
pub fn ingest_csv(path: &Path, spec: &FeatureSpec, seed: u64) -> Result<TaskDataset> {
    let table = read_table(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv");
    encode_table(name, &table.header, &table.rows, spec, seed).map_err(|e| AppError::Data(e.to_string()))
}
