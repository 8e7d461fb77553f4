//! Numeric CSV tables. The first line is `# schema=<name> columns=<c1>,<c2>,...`; floats are
//! written with 17 significant digits so values survive a round trip bit for bit.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CliError, Result};

pub const SNAPSHOTS: &str = "pdmv.snapshots/1";
pub const PRODUCTION: &str = "pdmv.production/1";
pub const DIAGNOSTICS: &str = "pdmv.diagnostics/1";
pub const FES: &str = "pdmv.fes/1";
pub const FES_DIFF: &str = "pdmv.fes-diff/1";
pub const DENSITY_GRID: &str = "pdmv.density-grid/1";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn header_line(schema: &str, columns: &[String]) -> String {
    format!("# schema={schema} columns={}", columns.join(","))
}

pub fn z_columns(m: usize) -> Vec<String> {
    (1..=m).map(|k| format!("z_{k}")).collect()
}

/// Writer for a table; `create` truncates, `append` continues an existing file.
pub struct TableWriter {
    inner: csv::Writer<BufWriter<File>>,
    width: usize,
}

impl TableWriter {
    pub fn create(path: &Path, schema: &str, columns: &[String]) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "{}", header_line(schema, columns)).map_err(|e| CliError::io(path, e))?;
        Ok(TableWriter { inner: csv::WriterBuilder::new().from_writer(buf), width: columns.len() })
    }

    /// Opens for appending after checking the schema line.
    pub fn append(path: &Path, schema: &str, columns: &[String]) -> Result<Self> {
        let (found, cols) = read_header(path)?;
        if found != schema || cols != columns {
            return Err(CliError::format(path, format!("expected schema {schema} with columns {columns:?}")));
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?;
        Ok(TableWriter { inner: csv::WriterBuilder::new().from_writer(BufWriter::new(file)), width: columns.len() })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        debug_assert_eq!(fields.len(), self.width);
        self.inner.write_record(fields).map_err(csv_io)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| CliError::Usage(format!("flushing table: {e}")))
    }
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Usage(format!("writing table: {e}"))
}

fn read_header(path: &Path) -> Result<(String, Vec<String>)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).map_err(|e| CliError::io(path, e))?;
    parse_header(line.trim_end()).ok_or_else(|| CliError::format(path, "missing schema line"))
}

fn parse_header(line: &str) -> Option<(String, Vec<String>)> {
    let rest = line.strip_prefix("# schema=")?;
    let (schema, cols) = rest.split_once(" columns=")?;
    Some((schema.to_string(), cols.split(',').map(str::to_string).collect()))
}

/// A table read back as floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Option<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Columns `z_1..z_m` flattened row-major.
    pub fn z_block(&self, m: usize) -> Option<Vec<f64>> {
        let idx: Vec<usize> = z_columns(m).iter().map(|c| self.column(c)).collect::<Option<_>>()?;
        Some(self.rows.iter().flat_map(|r| idx.iter().map(move |&i| r[i])).collect())
    }

    pub fn z_dim(&self) -> usize {
        (1..).take_while(|k| self.column(&format!("z_{k}")).is_some()).count()
    }
}

/// Reads a schema-headed table, or a plain CSV whose first row names the columns. With
/// `expect` set the schema must match.
pub fn read_table(path: &Path, expect: Option<&str>) -> Result<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| CliError::io(path, e))?;
    let first = first.trim_end();
    let (schema, columns) = match parse_header(first) {
        Some((s, c)) => (Some(s), c),
        None => (None, first.split(',').map(|s| s.trim().to_string()).collect()),
    };
    if let Some(want) = expect {
        if schema.as_deref() != Some(want) {
            return Err(CliError::format(path, format!("expected schema {want}, found {schema:?}")));
        }
    }
    let mut rows = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).from_reader(reader);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        if rec.len() != columns.len() {
            return Err(CliError::format(path, format!("row {} has {} fields, expected {}", i + 1, rec.len(), columns.len())));
        }
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::format(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(Table { schema, columns, rows })
}
