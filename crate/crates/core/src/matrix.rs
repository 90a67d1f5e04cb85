use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Position of the first non-finite entry.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols, p % self.cols))
    }

    /// Rows reordered so that output row `i` is input row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for (i, &src) in perm.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(src));
        }
        out
    }

    /// Writes the `<rows> <cols>` header followed by one line per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        let mut line = String::new();
        for row in self.iter_rows() {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                // `{:?}` is the shortest representation that round-trips.
                write!(line, "{v:?}").unwrap();
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_text(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Parses the header-plus-rows text format. Non-finite values are rejected.
    pub fn load_text(path: impl AsRef<Path>) -> Result<Matrix> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let malformed = |line: usize, msg: &str| Error::Malformed {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(malformed(1, "missing `<rows> <cols>` header")),
        };
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| malformed(1, "header must be `<rows> <cols>`"))?;
        let [rows, cols] = dims[..] else {
            return Err(malformed(1, "header must be `<rows> <cols>`"));
        };
        let mut data = Vec::with_capacity(rows * cols);
        let mut found = 0;
        for (r, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let start = data.len();
            for (c, tok) in line.split_whitespace().enumerate() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| malformed(r + 2, &format!("bad float {tok:?}")))?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: found, col: c });
                }
                data.push(v);
            }
            let width = data.len() - start;
            if width != cols {
                return Err(Error::DimensionMismatch {
                    row: found,
                    expected: cols,
                    found: width,
                });
            }
            found += 1;
        }
        if found != rows {
            return Err(Error::RowCountMismatch {
                expected: rows,
                found,
            });
        }
        Ok(Matrix { rows, cols, data })
    }
}

/// The learned `N × d` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LowDimEmbedding(pub Matrix);

impl LowDimEmbedding {
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

impl From<Matrix> for LowDimEmbedding {
    fn from(m: Matrix) -> Self {
        LowDimEmbedding(m)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let m = Matrix::from_rows(&[vec![0.1, -2.5e-300], vec![1.0 / 3.0, 7.0]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        m.save_text(&p).unwrap();
        assert_eq!(Matrix::load_text(&p).unwrap(), m);
    }
}
