//! A minimal column-oriented data table.
//!
//! Columns are named f64 vectors with optional entries; `None` encodes
//! the "NA" token used for unobserved outcomes in selection models. The
//! CLI layer handles CSV parsing; this type is the in-memory contract
//! between data ingestion, design construction and the simulators.

use crate::error::Error;

/// Named columns of equal length.
#[derive(Debug, Clone)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
    rows: usize,
}

impl DataTable {
    /// Build from parallel name/column vectors.
    pub fn new(names: Vec<String>, columns: Vec<Vec<Option<f64>>>) -> Result<Self, Error> {
        if names.len() != columns.len() {
            return Err(Error::data(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::data("columns have unequal lengths"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(Error::data(format!("duplicate column name '{n}'")));
            }
        }
        Ok(DataTable {
            names,
            columns,
            rows,
        })
    }

    /// Empty table with the given header, to be filled row by row.
    pub fn with_header(names: Vec<String>) -> Self {
        let columns = names.iter().map(|_| Vec::new()).collect();
        DataTable {
            names,
            columns,
            rows: 0,
        }
    }

    /// Append one row (must match the header width).
    pub fn push_row(&mut self, row: &[Option<f64>]) {
        assert_eq!(row.len(), self.names.len(), "row width mismatch");
        for (col, v) in self.columns.iter_mut().zip(row) {
            col.push(*v);
        }
        self.rows += 1;
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Column by name, with NAs.
    pub fn column(&self, name: &str) -> Result<&[Option<f64>], Error> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::data(format!("unknown column '{name}'")))?;
        Ok(&self.columns[idx])
    }

    /// Replace an existing column in full; the new values must match
    /// the table height.
    pub fn replace_column(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<(), Error> {
        if values.len() != self.rows {
            return Err(Error::data(format!(
                "replacement for column '{name}' has {} rows, table has {}",
                values.len(),
                self.rows
            )));
        }
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::data(format!("unknown column '{name}'")))?;
        self.columns[idx] = values;
        Ok(())
    }

    /// Column that must be fully observed.
    pub fn complete_column(&self, name: &str) -> Result<Vec<f64>, Error> {
        let col = self.column(name)?;
        col.iter()
            .enumerate()
            .map(|(i, v)| {
                v.filter(|x| x.is_finite()).ok_or_else(|| {
                    Error::data(format!(
                        "column '{name}' has a missing or non-finite value at row {}",
                        i + 1
                    ))
                })
            })
            .collect()
    }

    /// Serialize as CSV with the crate's dialect: comma-separated,
    /// header row, "NA" for missing, no quoting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.names.join(","));
        out.push('\n');
        for r in 0..self.rows {
            let mut first = true;
            for col in &self.columns {
                if !first {
                    out.push(',');
                }
                first = false;
                match col[r] {
                    // Integers print without a trailing ".0" so category
                    // codes stay readable.
                    Some(v) if v.fract() == 0.0 && v.abs() < 1e15 => {
                        out.push_str(&format!("{}", v as i64));
                    }
                    Some(v) => out.push_str(&format!("{v}")),
                    None => out.push_str("NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}
