use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{DotError, Result};
use crate::numeric::Matrix;

/// Shortest form that round-trips every `f64` exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| DotError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| DotError::io(path, e))
}

/// Writes `m` row-major with header `j0,j1,...`. Used for attention maps and
/// transport plans so both can be plotted the same way.
pub fn write_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| DotError::io(path, e);
    let header: Vec<String> = (0..m.cols()).map(|j| format!("j{j}")).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for r in m.row_iter() {
        let line: Vec<String> = r.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| DotError::Parse {
                    line: k + 2,
                    msg: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> DotError {
    let line = e.position().map(|p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DotError::io(path, io),
        other => DotError::Parse {
            line: line.unwrap_or(0),
            msg: format!("{other:?}"),
        },
    }
}
