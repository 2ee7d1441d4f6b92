//! CSV artifacts. Every file this crate writes starts with two comment
//! lines — a format tag and the configuration hash — so any table can be
//! traced back to the exact settings that produced it.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// A CSV file with the standard two-line provenance header.
#[derive(Debug)]
pub struct CsvSink {
    out: BufWriter<File>,
    columns: usize,
    path: String,
}

impl CsvSink {
    pub fn create(path: &Path, format_tag: &str, config_hash: &str, columns: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = format!(
            "# format={format_tag}\n# config_hash={config_hash}\n{}\n",
            columns.join(",")
        );
        out.write_all(header.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out,
            columns: columns.len(),
            path: path.display().to_string(),
        })
    }

    /// Write one row; the field count must match the header.
    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.columns {
            return Err(Error::contract(format!(
                "csv row has {} fields, header has {}",
                fields.len(),
                self.columns
            )));
        }
        let line = fields.join(",");
        writeln!(self.out, "{line}").map_err(|e| self.io_err(e))?;
        self.out.flush().map_err(|e| self.io_err(e))
    }

    fn io_err(&self, e: std::io::Error) -> Error {
        Error::io(&self.path, e)
    }
}

/// Format a float for CSV output: full round-trip precision, plain notation.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "nan".to_string()
    }
}

/// Parsed view of a CSV artifact: provenance header plus rows of fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub format_tag: String,
    pub config_hash: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let format_tag = lines
            .next()
            .and_then(|l| l.strip_prefix("# format="))
            .ok_or_else(|| Error::contract("csv missing `# format=` header"))?
            .to_string();
        let config_hash = lines
            .next()
            .and_then(|l| l.strip_prefix("# config_hash="))
            .ok_or_else(|| Error::contract("csv missing `# config_hash=` header"))?
            .to_string();
        let columns: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::contract("csv missing column header"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split(',').map(str::to_string).collect();
            if fields.len() != columns.len() {
                return Err(Error::contract(format!(
                    "csv row {i} has {} fields, header has {}",
                    fields.len(),
                    columns.len()
                )));
            }
            rows.push(fields);
        }
        Ok(Self {
            format_tag,
            config_hash,
            columns,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::contract(format!("csv has no column `{name}`")))
    }

    /// One column as floats.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .parse::<f64>()
                    .map_err(|_| Error::contract(format!("non-numeric value `{}` in `{name}`", r[idx])))
            })
            .collect()
    }
}
