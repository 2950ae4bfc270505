use std::io::Write;
use std::path::Path;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// One `(x, series, y)` point of long-format plot data.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub x: String,
    pub series: String,
    pub y: f64,
}

pub fn write_csv<W: Write>(table: &Table, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<std::fs::File, HarnessError> {
    std::fs::File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn emit_csv(table: &Table, path: &Path) -> Result<(), HarnessError> {
    write_csv(table, create(path)?).map_err(|source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn emit_plot_data(points: &[PlotPoint], path: &Path) -> Result<(), HarnessError> {
    let mut table = Table::new(["x", "series", "y"]);
    for p in points {
        table.push(vec![p.x.clone(), p.series.clone(), format!("{:.6}", p.y)]);
    }
    emit_csv(&table, path)
}
