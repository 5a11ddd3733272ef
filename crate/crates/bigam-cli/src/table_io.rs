//! CSV ingestion and output-file helpers.
//!
//! The CSV dialect is fixed: comma separated, one header row, UTF-8,
//! the literal string `NA` for a missing value, no quoting of numbers.

use std::fs;
use std::path::Path;

use bigam_core::data::DataTable;
use bigam_core::Error;
use serde::Serialize;

/// Read a data file into a column table, reporting malformed input as
/// data errors with the offending location.
pub fn read_csv(path: &Path) -> Result<DataTable, Error> {
    let file = fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(Error::data(format!("{}: no columns", path.display())));
    }

    let mut columns: Vec<Vec<Option<f64>>> = names.iter().map(|_| Vec::new()).collect();
    for (index, record) in reader.records().enumerate() {
        let row = index + 1;
        let record =
            record.map_err(|e| Error::data(format!("{}: row {row}: {e}", path.display())))?;
        if record.len() != names.len() {
            return Err(Error::data(format!(
                "{}: row {row} has {} fields, expected {}",
                path.display(),
                record.len(),
                names.len()
            )));
        }
        for (column, field) in columns.iter_mut().zip(record.iter()) {
            column.push(parse_field(field, path, row)?);
        }
    }
    DataTable::new(names, columns)
}

fn parse_field(field: &str, path: &Path, row: usize) -> Result<Option<f64>, Error> {
    if field == "NA" {
        return Ok(None);
    }
    field.parse::<f64>().map(Some).map_err(|_| {
        Error::data(format!(
            "{}: row {row}: cannot parse {field:?} as a number",
            path.display()
        ))
    })
}

/// Create the output directory if it does not exist yet.
pub fn ensure_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", path.display())))
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

/// Read a JSON input document (config, simulation spec, saved fit,
/// functional); problems with these are configuration errors, unlike
/// problems with the data file.
pub fn read_spec_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path)
        .map_err(|e| Error::spec(format!("cannot read {}: {e}", path.display())))
}

/// Serialize a document as pretty-printed JSON with a trailing newline.
pub fn to_json_text<T: Serialize>(value: &T) -> Result<String, Error> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::spec(format!("cannot serialize output: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    write_text(path, &to_json_text(value)?)
}
