//! Plain CSV tables of a function sampled on a grid.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// `n` equally spaced points from `a` to `b`; the last one is exactly `b`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|i| if i == n - 1 { b } else { a + (b - a) * (i as f64 / (n - 1) as f64) })
            .collect(),
    }
}

/// Writes `x,density` rows.
pub fn write_density_csv<F: Fn(f64) -> f64>(path: impl AsRef<Path>, xs: &[f64], f: F) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,density")?;
    for &x in xs {
        writeln!(w, "{x:e},{:e}", f(x))?;
    }
    w.flush()
}

/// Reads back the columns of a headered numeric CSV.
pub fn read_columns(path: impl AsRef<Path>) -> io::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for (c, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: bad number {field:?}", i + 2))
            })?;
            if let Some(col) = columns.get_mut(c) {
                col.push(v);
            }
        }
    }
    Ok((header, columns))
}
