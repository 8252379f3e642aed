use crate::error::Result;
use crate::measures::csv_err;
use serde::Serialize;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// A flat metric table written next to the report.
#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Write `report.json`, one table file per entry and `summary.txt` into `dir`.
pub fn write_outputs(
    dir: &Path,
    report: &impl Serialize,
    tables: &[Table],
    summary: &str,
    format: OutputFormat,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    for t in tables {
        match format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name))).map_err(csv_err)?;
                w.write_record(&t.header).map_err(csv_err)?;
                for r in &t.rows {
                    w.write_record(r).map_err(csv_err)?;
                }
                w.flush()?;
            }
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(t)?;
                s.push('\n');
                std::fs::write(dir.join(format!("{}.json", t.name)), s)?;
            }
        }
    }
    std::fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}
