use std::fs;
use std::io::Write;
use std::path::Path;

use crate::args::Format;
use crate::error::CliError;

/// Something that can be printed in every output format.
pub trait Render {
    fn table(&self) -> String;
    fn json(&self) -> serde_json::Value;
    fn csv(&self) -> Result<String, CliError>;
}

pub fn render(r: &dyn Render, format: Format) -> Result<String, CliError> {
    Ok(match format {
        Format::Table => r.table(),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&r.json()).expect("json value serializes");
            s.push('\n');
            s
        }
        Format::Csv => r.csv()?,
    })
}

/// Writes to `path`, or stdout when absent.
pub fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::Input(e.to_string()))
        }
    }
}

pub fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// `1234567` as `1,234,567`.
pub fn grouped(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn triple([a, b, c]: [usize; 3]) -> String {
    format!("({a},{b},{c})")
}
