//! The `fit` command: estimate a model described by a JSON config on a
//! CSV data file and write the saved-fit document plus per-smooth
//! curve tables into the output directory.
//!
//! A fit that runs to completion but misses the convergence tolerance
//! still writes its outputs (flagged as non-converged) before the
//! command reports failure, so the partial results remain available.

use std::path::Path;

use bigam_core::data::DataTable;
use bigam_core::fit::{self, FitResult};
use bigam_core::infer;
use bigam_core::model::{Model, ModelKind, TermShape};
use bigam_core::Error;

use crate::config::ModelConfig;
use crate::saved_fit::SavedFit;
use crate::table_io;

pub fn run(config_path: &Path, data_path: &Path, out_dir: &Path) -> Result<(), Error> {
    let config = ModelConfig::from_json(&table_io::read_spec_text(config_path)?)?;
    let spec = config.model_spec()?;
    let table = table_io::read_csv(data_path)?;
    check_columns(&config, &table)?;
    table_io::ensure_dir(out_dir)?;

    if spec.kind == ModelKind::SelectionBinary {
        let outcome = &spec.response_columns[1];
        if let Ok(column) = table.column(outcome) {
            if column.iter().all(|v| v.is_some()) {
                eprintln!(
                    "warning: selection model, but outcome column {outcome:?} has no \
                     missing values; every unit appears selected"
                );
            }
        }
    }

    let model = Model::build(&spec, &table)?;
    let options = config.fit_options();
    let fit_path = out_dir.join("fit.json");

    let result = match fit::fit(&model, &options) {
        Ok(result) => result,
        Err(error) => {
            table_io::write_json(&fit_path, &SavedFit::failure(config, &error))?;
            eprintln!("fit failed; details recorded in {}", fit_path.display());
            return Err(error);
        }
    };
    let extras = infer::posterior_cov(&result).and_then(|cov| {
        let criteria = infer::information_criteria(&model.layout, &result)?;
        Ok((cov, criteria))
    });
    let (cov, criteria) = match extras {
        Ok(pair) => pair,
        Err(error) => {
            table_io::write_json(&fit_path, &SavedFit::failure(config, &error))?;
            eprintln!(
                "fit produced no usable covariance; details recorded in {}",
                fit_path.display()
            );
            return Err(error);
        }
    };

    let doc = SavedFit::from_fit(config, &model, &result, &cov.v_theta, &criteria);
    table_io::write_json(&fit_path, &doc)?;
    write_smooth_tables(out_dir, &model, &result)?;

    if !result.diagnostics.converged {
        return Err(Error::NoConvergence(format!(
            "fit stopped before meeting the convergence tolerance; \
             outputs written to {}",
            out_dir.display()
        )));
    }
    println!("fit written to {}", fit_path.display());
    Ok(())
}

/// Every column the config names must exist in the data; a miss is a
/// configuration error that names the offending column.
fn check_columns(config: &ModelConfig, table: &DataTable) -> Result<(), Error> {
    for column in config.referenced_columns() {
        if !table.names().iter().any(|n| n == column) {
            return Err(Error::spec(format!(
                "config references column {column:?}, but the data has columns: {}",
                table.names().join(", ")
            )));
        }
    }
    Ok(())
}

/// One CSV per smooth term: the default evaluation grid with the
/// centered fit and pointwise 95% limits.
fn write_smooth_tables(out_dir: &Path, model: &Model, fit: &FitResult) -> Result<(), Error> {
    let layout = &model.layout;
    for block in &layout.blocks {
        let TermShape::Smooth { column, .. } = &block.shape else {
            continue;
        };
        let grid = infer::default_band_grid(layout, block.equation, column)?;
        let bands = infer::smooth_bands(layout, fit, block.equation, column, &grid, 0.05)?;
        let mut text = String::from("x,fit,lower,upper\n");
        for point in &bands {
            text.push_str(&format!(
                "{},{},{},{}\n",
                point.x, point.fit, point.lower, point.upper
            ));
        }
        let prefix = match block.equation {
            0 => "eq1",
            1 => "eq2",
            _ => "assoc",
        };
        let file = out_dir.join(format!("smooth_{prefix}_{column}.csv"));
        table_io::write_text(&file, &text)?;
    }
    Ok(())
}
