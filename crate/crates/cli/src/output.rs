use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, Format};
use crate::error::CliError;

/// Where tables and report lines go. Data goes to `--out` or stdout; report
/// lines go to stdout unless stdout is carrying the data.
pub struct Sink {
    path: Option<PathBuf>,
    format: Format,
    timestamp: bool,
}

impl Sink {
    pub fn new(config: &Config) -> Self {
        Sink {
            path: config.file.out.clone(),
            format: config.format(),
            timestamp: config.timestamp(),
        }
    }

    pub fn report(&self, line: impl AsRef<str>) {
        if self.path.is_some() {
            println!("{}", line.as_ref());
        } else {
            eprintln!("{}", line.as_ref());
        }
    }

    /// Writes `rows` as CSV (headers from the field names) or JSON.
    pub fn table<T: Serialize>(&self, rows: &[T]) -> Result<(), CliError> {
        self.table_with(rows, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    /// Like [`Sink::table`] with a caller-supplied CSV encoder.
    pub fn table_with<T: Serialize>(
        &self,
        rows: &[T],
        csv_body: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        let stamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        match self.format {
            Format::Csv => {
                if self.timestamp {
                    writeln!(buf, "# generated_at: {stamp}")?;
                }
                csv_body(&mut buf)?;
            }
            Format::Json => {
                let rows = serde_json::to_value(rows).map_err(|e| CliError::Output(e.to_string()))?;
                let doc: Value = if self.timestamp {
                    json!({ "generated_at": stamp, "rows": rows })
                } else {
                    json!({ "rows": rows })
                };
                serde_json::to_writer_pretty(&mut buf, &doc).map_err(|e| CliError::Output(e.to_string()))?;
                buf.push(b'\n');
            }
        }
        match &self.path {
            Some(p) => fs::write(p, &buf).map_err(|e| CliError::Output(format!("{}: {e}", p.display()))),
            None => Ok(io::stdout().lock().write_all(&buf)?),
        }
    }
}
