//! Minimal RFC-4180 CSV output: comma-separated, CRLF line endings,
//! quoting only where the content demands it.

use std::fs;
use std::path::Path;

use bridgestain::Result;

fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Shortest-roundtrip decimal formatting; infinities print as `inf`/`-inf`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.iter().map(|f| escape(f)).collect::<Vec<_>>().join(","));
    out.push_str("\r\n");
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "ragged csv row");
        out.push_str(&row.iter().map(|f| escape(f)).collect::<Vec<_>>().join(","));
        out.push_str("\r\n");
    }
    fs::write(path, out)?;
    Ok(())
}
